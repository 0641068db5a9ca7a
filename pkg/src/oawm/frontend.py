"""
N-channel front-end model: LO comb, delay lines, 90-degree hybrids, balanced
photodetection, RF amplification and digitization.

The simulation runs on the signal's complex-baseband grid (rate ``fs_sim``)
and produces real records on the ADC grid (rate ``f_s``). The continuous
spectrum of a record is therefore directly comparable with
:func:`forward_transfer` applied to the signal spectrum.

Phase conventions
-----------------
* A delay ``tau_nu`` multiplies LO tone ``mu`` (a field) by
  ``exp(-j 2 pi (f_ref + f_mu) tau_nu)``.
* Drift: the signal copy in channel ``nu`` carries ``exp(j phi_F[nu])`` and
  LO tone ``mu`` carries ``exp(-j phi_LO[mu])``.
* The Q output uses the LO rotated by the hybrid phase ``theta``.

With these, the record spectra obey the linear model
``I_nu(f) = sum_mu H^I_{nu mu}(f) a(f + f_mu) + conj(H^I_{nu mu}(-f)) conj(a(-f + f_mu))``
with ``H^I`` from :func:`transfer_functions`.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .signalkit import SampledWaveform
from .types import ChannelRecords, DriftParams, TransferMatrixSet, CalibrationRecord

logger = logging.getLogger(__name__)

Q_E = 1.602176634e-19
K_B = 1.380649e-23
B_REF = 12.5e9

NOISE_SOURCES = ("shot", "rf_amp", "adc_noise", "adc_jitter", "lo_jitter", "ssbi", "ase",
                 "quantization", "clock_spur")
_SOURCE_ID = {name: i + 1 for i, name in enumerate(NOISE_SOURCES)}
_SHARED = 0


class ClippingWarning(UserWarning):
    """Raised when pre-quantizer samples exceed the ADC full scale."""


def db2lin(x_dB: float) -> float:
    return 10.0 ** (np.asarray(x_dB, dtype=float) / 10.0)


def parse_toggles(toggles) -> frozenset:
    """Normalize a toggle spec: ``"all"``, ``"none"``, a name or an iterable."""
    if toggles is None:
        return frozenset()
    if isinstance(toggles, str):
        if toggles == "all":
            return frozenset(NOISE_SOURCES)
        if toggles in ("none", ""):
            return frozenset()
        toggles = [t.strip() for t in toggles.split(",")]
    out = frozenset(toggles)
    unknown = out - set(NOISE_SOURCES)
    if unknown:
        raise ValueError(f"unknown noise sources {sorted(unknown)}; valid: {NOISE_SOURCES}")
    return out


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class CombLO:
    """Phase-locked LO comb; tone offsets are relative to ``f_ref``.

    ``jitter_bandwidth`` limits the spectrum of the pulse-train timing error;
    ``None`` draws it white over the ADC Nyquist band.
    """

    f_1: float
    f_FSR: float
    M: int
    P_LO: float
    tone_amplitudes: tuple | None = None
    tau_j_LO: float = 0.0
    OSNR_LO_dB: float = np.inf
    f_ref: float = 0.0
    jitter_bandwidth: float | None = None

    def __post_init__(self):
        if self.jitter_bandwidth is not None and not self.jitter_bandwidth > 0:
            raise ValueError("jitter_bandwidth must be positive")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if not self.P_LO > 0:
            raise ValueError("P_LO must be positive")
        if self.M > 1 and not self.f_FSR > 0:
            raise ValueError("f_FSR must be positive")
        if self.tau_j_LO < 0:
            raise ValueError("tau_j_LO must be non-negative")
        if self.tone_amplitudes is None:
            amps = np.full(self.M, np.sqrt(self.P_LO / self.M), dtype=complex)
        else:
            amps = np.asarray(self.tone_amplitudes, dtype=complex).ravel()
            if amps.size != self.M:
                raise ValueError("need one amplitude per tone")
            if not np.isclose(np.sum(np.abs(amps) ** 2), self.P_LO, rtol=1e-9):
                raise ValueError("sum of tone powers must equal P_LO")
        object.__setattr__(self, "tone_amplitudes", tuple(amps))

    @classmethod
    def centered(cls, M: int, f_FSR: float, P_LO: float, **kw) -> "CombLO":
        """Flat comb centred on the reference frequency."""
        return cls(f_1=-(M - 1) / 2 * f_FSR, f_FSR=f_FSR, M=M, P_LO=P_LO, **kw)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.asarray(self.tone_amplitudes, dtype=complex)

    @property
    def f_mu(self) -> np.ndarray:
        return self.f_1 + self.f_FSR * np.arange(self.M)

    @property
    def f_cntr(self) -> float:
        """Centre of the acquisition band (reference for LO jitter)."""
        return self.f_1 + (self.M - 1) / 2 * self.f_FSR


@dataclass(frozen=True)
class FrontEndConfig:
    """Physical parameters of the receiver array (defaults: reference receiver)."""

    N: int
    delays: tuple
    S: float = 0.8
    CMRR_dB: float = -30.0
    LOSPR_dB: float = 10.0
    G_dB: float = 6.0
    NF_dB: float = 10.0
    R: float = 50.0
    P_PD: float = 1e-3
    iq_phase_deg: float | tuple = 90.0
    T: float = 300.0
    loss_dB: float | tuple = 0.0
    OSNR_sig_dB: float = np.inf
    dc_block: bool = False
    response: tuple | None = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        d = tuple(float(x) for x in np.atleast_1d(self.delays))
        if len(d) != self.N:
            raise ValueError("need one delay per channel")
        object.__setattr__(self, "delays", d)
        if not self.S > 0 or not self.R > 0:
            raise ValueError("S and R must be positive")
        th = np.broadcast_to(np.asarray(self.iq_phase_deg, dtype=float), (self.N,))
        if np.any(th <= 0) or np.any(th >= 180):
            raise ValueError("iq_phase_deg must lie in (0, 180)")
        if self.response is not None:
            f, resp = self.response
            resp = np.asarray(resp, dtype=complex)
            if resp.shape != (2, self.N, np.size(f)):
                raise ValueError("response table must have shape (2, N, len(f))")

    @classmethod
    def evenly_delayed(cls, N: int, f_FSR: float, **kw) -> "FrontEndConfig":
        """Delays spread evenly over one comb period (best conditioning)."""
        return cls(N=N, delays=tuple(np.arange(N) / (N * f_FSR)), **kw)

    @property
    def G(self) -> float:
        return float(db2lin(self.G_dB))

    @property
    def F(self) -> float:
        return float(db2lin(self.NF_dB))

    @property
    def LOSPR(self) -> float:
        return float(db2lin(self.LOSPR_dB))

    @property
    def cmrr(self) -> float:
        return float(10 ** (self.CMRR_dB / 20))

    @property
    def theta(self) -> np.ndarray:
        return np.deg2rad(np.broadcast_to(np.asarray(self.iq_phase_deg, dtype=float), (self.N,)))

    @property
    def path_gain(self) -> np.ndarray:
        """Amplitude factor of the detected beat per channel (both inputs attenuated)."""
        loss = np.broadcast_to(np.asarray(self.loss_dB, dtype=float), (self.N,))
        return 10 ** (-loss / 10)

    @property
    def P_S_nominal(self) -> float:
        """Signal power giving ``P_PD`` per photodiode at the set LOSPR."""
        return 4 * self.N * self.P_PD / (1 + self.LOSPR)

    @property
    def P_LO_nominal(self) -> float:
        return self.LOSPR * self.P_S_nominal

    def channel_response(self, freqs) -> np.ndarray:
        """Complex response (2, N, len(freqs)) for I and Q; Hermitian in f."""
        freqs = np.asarray(freqs, dtype=float)
        if self.response is None:
            return np.ones((2, self.N, freqs.size), dtype=complex)
        f_tab, resp = self.response
        f_tab = np.asarray(f_tab, dtype=float)
        resp = np.asarray(resp, dtype=complex)
        af = np.abs(freqs)
        out = np.empty((2, self.N, freqs.size), dtype=complex)
        for i in range(2):
            for nu in range(self.N):
                re = np.interp(af, f_tab, resp[i, nu].real)
                im = np.interp(af, f_tab, resp[i, nu].imag)
                out[i, nu] = re + 1j * np.sign(freqs + (freqs == 0)) * im
        return out


@dataclass(frozen=True)
class ADCConfig:
    """Digitizer model.

    ``U_FS=None`` selects an automatic full scale per record of
    ``2 * headroom_sigma * std``, or, when ``peak_fill`` is given, a full
    scale that the largest sample of that record fills to that fraction.
    With ``headroom_sigma=None`` as well the converter is ideal (no full
    scale, no converter noise).
    ``C1`` sets the thermal SINAD of a full-scale sinusoid to ``C1/B``.
    """

    B: float
    f_s: float
    U_FS: float | None = None
    headroom_sigma: float | None = 4.0
    n_bits: int | None = None
    C1: float = 150e12
    tau_j_ADC: float = 25e-15
    clock_spur_dBc: float = -np.inf
    clock_spur_freq: float | None = None
    peak_fill: float | None = None

    def __post_init__(self):
        if not self.B > 0 or not self.f_s > 0:
            raise ValueError("B and f_s must be positive")
        if self.B > self.f_s / 2 * (1 + 1e-12):
            raise ValueError("B must not exceed f_s/2")
        if self.U_FS is not None and not self.U_FS > 0:
            raise ValueError("U_FS must be positive")
        if not self.C1 > 0:
            raise ValueError("C1 must be positive")
        if self.tau_j_ADC < 0:
            raise ValueError("tau_j_ADC must be non-negative")
        if self.peak_fill is not None and not 0 < self.peak_fill <= 1:
            raise ValueError("peak_fill must lie in (0, 1]")
        if self.n_bits is not None and self.n_bits < 1:
            raise ValueError("n_bits must be >= 1")

    @property
    def ideal(self) -> bool:
        return self.U_FS is None and self.headroom_sigma is None and self.peak_fill is None


# --------------------------------------------------------------------------
# helpers


def _rng(seed: int, channel: int, source: str, part: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(channel), _SOURCE_ID[source], int(part)])


def _fourier_resample_real(X_sim: np.ndarray, n_sim: int, K: int, fs_sim: float, B: float,
                           h: np.ndarray | None = None) -> np.ndarray:
    """Band-limit a real record's spectrum to |f| <= B and resample to K points.

    ``X_sim`` is the unnormalized FFT on the simulation grid. ``h`` is an
    optional response evaluated at the kept positive-frequency bins.
    """
    df = fs_sim / n_sim
    kB = int(np.floor(B / df + 1e-9))
    if 2 * kB >= K:
        kB = (K - 1) // 2
    pos = X_sim[: kB + 1].copy()
    if h is not None:
        pos *= h
    # real output: rebuild with Hermitian symmetry on the ADC grid
    Y = np.zeros(K // 2 + 1, dtype=complex)
    Y[: kB + 1] = pos
    return np.fft.irfft(Y, n=K) * (K / n_sim)


def _bandlimited_noise(rng, K: int, f_s: float, B: float, variance: float) -> np.ndarray:
    """White Gaussian noise restricted to |f| <= B with the given total variance."""
    if variance <= 0:
        return np.zeros(K)
    x = rng.standard_normal(K)
    X = np.fft.rfft(x)
    f = np.fft.rfftfreq(K, 1 / f_s)
    X[f > B * (1 + 1e-12)] = 0
    y = np.fft.irfft(X, n=K)
    # scale by the expected (not realized) in-band fraction so the noise stays Gaussian
    frac = (2 * np.count_nonzero(f <= B * (1 + 1e-12)) - 1) / K
    return y * np.sqrt(variance / frac)


def _spectral_derivative(x: np.ndarray, f_s: float) -> np.ndarray:
    X = np.fft.rfft(x)
    f = np.fft.rfftfreq(x.size, 1 / f_s)
    return np.fft.irfft(2j * np.pi * f * X, n=x.size)


def _fourier_interp(x: np.ndarray, n_out: int) -> np.ndarray:
    """Band-limited interpolation of a real periodic sequence onto ``n_out`` points."""
    K = x.size
    X = np.fft.rfft(x)
    Y = np.zeros(n_out // 2 + 1, dtype=complex)
    m = min(X.size, Y.size)
    Y[:m] = X[:m]
    return np.fft.irfft(Y, n=n_out) * (n_out / K)


def signal_extent(w: SampledWaveform, rel_floor: float = 1e-16) -> float:
    """Largest |f| carrying per-bin power above ``rel_floor`` times the peak."""
    X = np.abs(np.fft.fft(w.samples)) ** 2
    f = np.fft.fftfreq(len(w), w.dt)
    occ = X > rel_floor * X.max() if X.max() > 0 else np.zeros_like(X, dtype=bool)
    return float(np.abs(f[occ]).max()) if occ.any() else 0.0


def check_band_plan(comb: CombLO, adc: ADCConfig) -> None:
    """Reject configurations without overlap between adjacent slices."""
    if comb.M > 1 and adc.B < comb.f_FSR / 2:
        raise ValueError(
            f"ADC bandwidth B={adc.B:g} Hz is below f_FSR/2={comb.f_FSR / 2:g} Hz; "
            "slices would leave gaps")


# --------------------------------------------------------------------------
# LO jitter


def apply_lo_jitter(comb: CombLO, tau_j_LO: float, record_length: int, seed: int = 0,
                    f_s: float | None = None) -> np.ndarray:
    """Gaussian pulse-train timing offsets with rms ``tau_j_LO`` on the ADC grid.

    White unless ``comb.jitter_bandwidth`` is set, which then needs ``f_s``.

    Tone ``mu`` then acquires the phase noise returned by
    :func:`lo_tone_phase_noise`; the tone at ``f_cntr`` is unaffected.
    """
    if tau_j_LO < 0:
        raise ValueError("tau_j_LO must be non-negative")
    rng = _rng(seed, _SHARED, "lo_jitter")
    if comb.jitter_bandwidth is None:
        return tau_j_LO * rng.standard_normal(int(record_length))
    if f_s is None:
        raise ValueError("band-limited LO jitter needs the sample rate")
    return _bandlimited_noise(rng, int(record_length), f_s, comb.jitter_bandwidth, tau_j_LO ** 2)


def lo_tone_phase_noise(comb: CombLO, dtau: np.ndarray) -> np.ndarray:
    """Phase noise ``2 pi (f_mu - f_cntr) dtau`` per tone, shape (M, len(dtau))."""
    return 2 * np.pi * (comb.f_mu - comb.f_cntr)[:, None] * np.asarray(dtau)[None, :]


# --------------------------------------------------------------------------
# analytic transfer functions


def transfer_functions(comb: CombLO, fe: FrontEndConfig, adc: ADCConfig,
                       drift: DriftParams | None, freqs) -> tuple[np.ndarray, np.ndarray]:
    """Analytic ``H^I``, ``H^Q`` at baseband frequencies, each of shape (n, N, M).

    A record spectrum in V*s equals H times a signal spectrum in sqrt(W)*s,
    so H is in V/sqrt(W). Entries vanish outside |f| <= B.
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    N, M = fe.N, comb.M
    drift = DriftParams.zero(N) if drift is None else drift
    if drift.N != N:
        raise ValueError("drift has the wrong channel count")
    tau = np.asarray(fe.delays)
    scale = np.sqrt(fe.G) * fe.R * fe.S / (2 * N) * fe.path_gain  # (N,)
    delay = np.exp(2j * np.pi * (comb.f_ref + comb.f_mu)[None, :] * tau[:, None])  # (N, M)
    core = scale[:, None] * np.conj(comb.amplitudes)[None, :] * delay * drift.factors(comb.f_FSR, M)
    h = fe.channel_response(freqs)  # (2, N, n)
    inband = (np.abs(freqs) <= adc.B * (1 + 1e-12)).astype(float)
    HI = h[0].T[:, :, None] * core[None] * inband[:, None, None]
    HQ = h[1].T[:, :, None] * (core * np.exp(-1j * fe.theta)[:, None])[None] * inband[:, None, None]
    return HI, HQ


def forward_transfer(comb: CombLO, fe: FrontEndConfig, adc: ADCConfig,
                     drift: DriftParams | None, f_grid) -> TransferMatrixSet:
    """Block transfer matrix on ``f_grid`` (subset of [0, B])."""
    f = np.asarray(f_grid, dtype=float)
    if np.any(f < 0) or np.any(f > adc.B * (1 + 1e-12)):
        raise ValueError("f_grid must lie within [0, B]")
    HI_p, HQ_p = transfer_functions(comb, fe, adc, drift, f)
    HI_n, HQ_n = transfer_functions(comb, fe, adc, drift, -f)
    return TransferMatrixSet.from_blocks(f, HI_p, HQ_p, HI_n, HQ_n)


def calibration_from_model(comb: CombLO, fe: FrontEndConfig, adc: ADCConfig,
                           drift: DriftParams | None = None, n_points: int = 513,
                           f_grid=None) -> CalibrationRecord:
    """Exact calibration record on a uniform grid over [-B, B]."""
    f = np.linspace(-adc.B, adc.B, n_points) if f_grid is None else np.asarray(f_grid, float)
    HI, HQ = transfer_functions(comb, fe, adc, drift, f)
    meta = dict(f_lo=[float(x) for x in comb.f_mu], f_FSR=float(comb.f_FSR), B=float(adc.B),
                f_ref=float(comb.f_ref), source="model")
    return CalibrationRecord(f, HI, HQ, None, -np.inf, meta)


# --------------------------------------------------------------------------
# simulation


def _lo_fields(comb: CombLO, fe: FrontEndConfig, drift: DriftParams, t: np.ndarray,
               lo_phase_noise: np.ndarray | None, lo_ase: np.ndarray | None,
               fs_sim: float) -> list[np.ndarray]:
    """Delayed LO copy for every channel (before the 1/sqrt(N) split)."""
    c = comb.amplitudes * np.exp(-1j * drift.phi_LO(comb.f_FSR, comb.M))
    tones = np.exp(2j * np.pi * comb.f_mu[:, None] * t[None, :])
    if lo_phase_noise is not None:
        tones = tones * np.exp(-1j * lo_phase_noise)
    if lo_ase is not None:
        A = np.fft.fft(lo_ase)
        f = np.fft.fftfreq(t.size, 1 / fs_sim)
    out = []
    for tau in fe.delays:
        w = c * np.exp(-2j * np.pi * (comb.f_ref + comb.f_mu) * tau)
        lo = w @ tones
        if lo_ase is not None:
            lo = lo + np.fft.ifft(A * np.exp(-2j * np.pi * (comb.f_ref + f) * tau))
        out.append(lo)
    return out


def simulate_frontend(signal: SampledWaveform, comb: CombLO, fe: FrontEndConfig,
                      adc: ADCConfig, drift: DriftParams | None = None,
                      noise_toggles=(), seed: int = 0) -> ChannelRecords:
    """Simulate the 2N digitized records for one acquisition.

    Parameters
    ----------
    signal : SampledWaveform
        Optical complex envelope relative to ``comb.f_ref`` in sqrt(W).
    comb, fe, adc : configuration objects
    drift : DriftParams, optional
        Drift factors applied to this recording; zero when omitted.
    noise_toggles : iterable of str or "all"
        Subset of :data:`NOISE_SOURCES`.
    seed : int
        Master seed; every noise source draws from an independent stream
        derived from ``(seed, channel, source)``.

    Returns
    -------
    ChannelRecords
    """
    tog = parse_toggles(noise_toggles)
    N = fe.N
    drift = DriftParams.zero(N) if drift is None else drift
    if drift.N != N:
        raise ValueError("drift has the wrong channel count")
    check_band_plan(comb, adc)
    n, fs = len(signal), signal.sample_rate
    K_float = n * adc.f_s / fs
    K = int(round(K_float))
    if abs(K_float - K) > 1e-6:
        raise ValueError("record length times f_s/fs_sim must be an integer")
    if adc.B >= fs / 2:
        raise ValueError("simulation rate too low for the ADC bandwidth")

    ext = signal_extent(signal)
    need = ext + np.max(np.abs(comb.f_mu)) + adc.B
    if "ssbi" in tog:
        need = max(need, 2 * ext + adc.B)
    if fs < need * (1 - 1e-9):
        raise ValueError(f"fs_sim={fs:g} Hz aliases mixing products; need >= {need:g} Hz")

    t = np.arange(n) / fs
    a = np.array(signal.samples)
    P_S = signal.power

    if "ase" in tog and np.isfinite(fe.OSNR_sig_dB):
        rho = P_S / (2 * db2lin(fe.OSNR_sig_dB) * B_REF)
        r = _rng(seed, _SHARED, "ase", 0)
        a = a + np.sqrt(rho * fs / 2) * (r.standard_normal(n) + 1j * r.standard_normal(n))

    lo_pn = None
    if "lo_jitter" in tog and comb.tau_j_LO > 0 and comb.M > 1:
        dtau = apply_lo_jitter(comb, comb.tau_j_LO, K, seed, adc.f_s)
        lo_pn = lo_tone_phase_noise(comb, _fourier_interp(dtau, n))
    lo_ase = None
    if "ase" in tog and np.isfinite(comb.OSNR_LO_dB):
        rho = comb.P_LO / (2 * db2lin(comb.OSNR_LO_dB) * B_REF)
        r = _rng(seed, _SHARED, "ase", 1)
        lo_ase = np.sqrt(rho * fs / 2) * (r.standard_normal(n) + 1j * r.standard_normal(n))
    los = _lo_fields(comb, fe, drift, t, lo_pn, lo_ase, fs)

    df = fs / n
    kB = min(int(np.floor(adc.B / df + 1e-9)), (K - 1) // 2)
    f_pos = np.arange(kB + 1) * df
    resp = fe.channel_response(f_pos)
    volt = np.sqrt(fe.G) * fe.R
    gain = fe.path_gain
    c = fe.cmrr if "ssbi" in tog else 0.0

    I = np.empty((N, K))
    Q = np.empty((N, K))
    p_pd = np.empty(N)
    for nu in range(N):
        s = a * np.exp(1j * drift.phi_F[nu]) / np.sqrt(N)
        l = los[nu] / np.sqrt(N)
        z = fe.S * gain[nu] * s * np.conj(l)
        Z = np.fft.fft(z)
        Zc = np.conj(np.roll(Z[::-1], 1))  # FFT of conj(z)
        th = fe.theta[nu]
        XI = 0.5 * (Z + Zc)
        XQ = 0.5 * (np.exp(-1j * th) * Z + np.exp(1j * th) * Zc)
        inten = np.abs(s) ** 2 + np.abs(l) ** 2
        p_pd[nu] = gain[nu] * float(np.mean(inten)) / 4
        if c > 0:
            D = np.fft.fft(0.5 * c * fe.S * gain[nu] * inten)
            XI = XI + D
            XQ = XQ + D
        I[nu] = volt * _fourier_resample_real(XI, n, K, fs, adc.B, resp[0, nu])
        Q[nu] = volt * _fourier_resample_real(XQ, n, K, fs, adc.B, resp[1, nu])

    if fe.dc_block:
        # AC-coupled amplifier chain: the DC bin never reaches the ADC
        I -= I.mean(axis=1, keepdims=True)
        Q -= Q.mean(axis=1, keepdims=True)

    # electrical noise, generated on the ADC grid
    for nu in range(N):
        for part, rec in ((0, I), (1, Q)):
            if "shot" in tog:
                psd = fe.G * fe.R ** 2 * 2 * Q_E * fe.S * p_pd[nu]
                rec[nu] += _bandlimited_noise(_rng(seed, nu + 1, "shot", part), K, adc.f_s,
                                              adc.B, psd * 2 * adc.B)
            if "rf_amp" in tog:
                # two-sided density F k T over [-B, B], i.e. F k T (2B) per record
                psd = fe.G * fe.F * K_B * fe.T * fe.R
                rec[nu] += _bandlimited_noise(_rng(seed, nu + 1, "rf_amp", part), K, adc.f_s,
                                              adc.B, psd * 2 * adc.B)

    if "adc_jitter" in tog and adc.tau_j_ADC > 0:
        for nu in range(N):
            for part, rec in ((0, I), (1, Q)):
                d = adc.tau_j_ADC * _rng(seed, nu + 1, "adc_jitter", part).standard_normal(K)
                rec[nu] += d * _spectral_derivative(rec[nu], adc.f_s)

    meta = dict(seed=int(seed), toggles=sorted(tog), P_S=float(P_S), P_LO=float(comb.P_LO),
                P_PD=[float(p) for p in p_pd], f_ref=float(comb.f_ref),
                f_lo=[float(x) for x in comb.f_mu], f_FSR=float(comb.f_FSR), B=float(adc.B),
                clipped_fraction=0.0, U_FS=None)

    needs_fs = {"adc_noise", "quantization", "clock_spur"} & tog
    if adc.ideal:
        if needs_fs:
            raise ValueError(f"{sorted(needs_fs)} need a full scale (U_FS or headroom_sigma)")
    else:
        # one full scale per record (I and Q of every channel), shape (2, N, 1)
        X = np.stack([I, Q])
        if adc.U_FS is not None:
            U = np.full((2, N, 1), float(adc.U_FS))
        elif adc.peak_fill is not None:
            U = 2 * np.abs(X).max(axis=2, keepdims=True) / adc.peak_fill
        else:
            U = 2 * adc.headroom_sigma * X.std(axis=2, keepdims=True)
        U = np.where(U > 0, U, 1.0)
        meta["U_FS"] = float(U.max())
        meta["U_FS_records"] = U[..., 0].tolist()
        q_on = "quantization" in tog and adc.n_bits is not None
        step = U / 2 ** adc.n_bits if q_on else np.zeros_like(U)
        if "adc_noise" in tog:
            var = U ** 2 / 8 * adc.B / adc.C1
            if q_on:
                var = var - step ** 2 / 12 * (2 * adc.B / adc.f_s)
                if np.any(var < 0):
                    logger.warning("quantization noise alone exceeds the C1/B budget")
                    var = np.maximum(var, 0.0)
            for nu in range(N):
                for part in (0, 1):
                    X[part, nu] += _bandlimited_noise(_rng(seed, nu + 1, "adc_noise", part), K,
                                                      adc.f_s, adc.B, float(var[part, nu, 0]))
        if "clock_spur" in tog and np.isfinite(adc.clock_spur_dBc) and adc.clock_spur_freq:
            tk = np.arange(K) / adc.f_s
            X += U / 2 * 10 ** (adc.clock_spur_dBc / 20) * np.cos(2 * np.pi * adc.clock_spur_freq * tk)
        frac = float((np.abs(X) > U / 2).any(axis=0).mean())
        if frac > 0:
            warnings.warn(f"{frac:.2e} of samples exceed U_FS/2 and were clipped", ClippingWarning,
                          stacklevel=2)
        X = np.clip(X, -U / 2, U / 2)
        meta["clipped_fraction"] = frac
        if q_on:
            # mid-tread code range -2^(n-1) .. 2^(n-1) - 1
            h = 2 ** (adc.n_bits - 1)
            X = step * np.clip(np.round(X / step), -h, h - 1)
        I, Q = X[0], X[1]

    return ChannelRecords(I, Q, adc.f_s, meta)


def evaluate_linear_model(signal: SampledWaveform, comb: CombLO, fe: FrontEndConfig,
                          adc: ADCConfig, drift: DriftParams | None, f_s: float) -> ChannelRecords:
    """Records predicted by the analytic transfer functions (noise free).

    Evaluates ``I(f) = sum_mu H(f) a(f + f_mu) + conj(H(-f) a(-f + f_mu))``
    bin by bin on the ADC grid; independent of :func:`simulate_frontend`.
    """
    n, fs = len(signal), signal.sample_rate
    K = int(round(n * f_s / fs))
    A = np.fft.fft(signal.samples) / fs
    df = fs / n
    fk = np.fft.fftfreq(K, 1 / f_s)
    HI, HQ = transfer_functions(comb, fe, adc, drift, fk)
    HIn, HQn = transfer_functions(comb, fe, adc, drift, -fk)

    def a_at(freqs):
        idx = np.rint(freqs / df).astype(int) % n
        return A[idx]

    XI = np.zeros((fe.N, K), dtype=complex)
    XQ = np.zeros((fe.N, K), dtype=complex)
    for mu, fm in enumerate(comb.f_mu):
        ap = a_at(fk + fm)
        an = np.conj(a_at(-fk + fm))
        XI += HI[:, :, mu].T * ap + np.conj(HIn[:, :, mu].T) * an
        XQ += HQ[:, :, mu].T * ap + np.conj(HQn[:, :, mu].T) * an
    I = np.fft.ifft(XI * f_s, axis=1).real
    Q = np.fft.ifft(XQ * f_s, axis=1).real
    return ChannelRecords(I, Q, f_s, {"source": "linear_model"})

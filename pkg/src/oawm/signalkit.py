"""
Complex waveform and spectrum primitives.

All optical fields are complex envelopes relative to a reference frequency
``f_ref`` that lives in the configuration, never in the samples. Amplitudes
are normalized so that ``|x|**2`` is an instantaneous power in W.

Spectra use a continuous-Fourier-transform convention, ``X(f) = dt * DFT(x)``,
so a linear relation written for continuous spectra (e.g. a transfer function
times a signal spectrum) holds bin by bin, independent of the sample rate.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"OAWM"
CONTAINER_VERSION = 1
_HEADER = struct.Struct("<4sIddQ")

QAM_ORDERS = (4, 16, 64)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SampledWaveform:
    """Uniformly sampled complex record.

    Parameters
    ----------
    samples : array_like of complex
        Complex amplitudes in sqrt(W).
    sample_rate : float
        Samples per second.
    start_time : float
        Time of the first sample in s.
    """

    samples: np.ndarray
    sample_rate: float
    start_time: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=complex).ravel()
        if x.size < 1:
            raise ValueError("waveform needs at least one sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform samples must be finite")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", _frozen(x))
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        object.__setattr__(self, "start_time", float(self.start_time))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def time(self) -> np.ndarray:
        return self.start_time + np.arange(self.samples.size) / self.sample_rate

    @property
    def power(self) -> float:
        """Mean power ``mean(|x|**2)``."""
        return float(np.mean(np.abs(self.samples) ** 2))

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2) / self.sample_rate)

    def with_samples(self, samples) -> "SampledWaveform":
        return SampledWaveform(samples, self.sample_rate, self.start_time)


@dataclass(frozen=True)
class Spectrum:
    """Complex spectrum on a uniform grid ``f_start + k*df``."""

    bins: np.ndarray
    f_start: float
    df: float

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=complex).ravel()
        if b.size < 1:
            raise ValueError("spectrum needs at least one bin")
        if not self.df > 0:
            raise ValueError("df must be positive")
        object.__setattr__(self, "bins", _frozen(b))
        object.__setattr__(self, "f_start", float(self.f_start))
        object.__setattr__(self, "df", float(self.df))

    def __len__(self) -> int:
        return self.bins.size

    @property
    def freqs(self) -> np.ndarray:
        return self.f_start + self.df * np.arange(self.bins.size)

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.bins) ** 2) * self.df)

    def bin_power(self) -> np.ndarray:
        """Average power carried by each bin (sums to the record's mean power)."""
        return np.abs(self.bins) ** 2 * self.df**2

    def index_of(self, f) -> np.ndarray:
        """Nearest bin index for frequency ``f`` (not range checked)."""
        return np.rint((np.asarray(f, dtype=float) - self.f_start) / self.df).astype(int)


@dataclass(frozen=True)
class RandomSignalSpec:
    """Band-limited complex Gaussian test signal with flat in-band PSD."""

    P_S: float
    B_opt: float
    f_ctr: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.P_S > 0:
            raise ValueError("P_S must be positive")
        if not self.B_opt > 0:
            raise ValueError("B_opt must be positive")


# --------------------------------------------------------------------------
# transforms


def dft(w: SampledWaveform, f_start: float | None = None) -> Spectrum:
    """Continuous-FT approximation of a record on an ascending frequency grid.

    ``f_start`` defaults to ``-(n // 2) * df``, i.e. the ``fftshift`` layout.
    Any other start is allowed; bins are then the exact DFT values at
    ``f_start + k*df``, which is what the stitcher uses for shifted grids.
    """
    n = len(w)
    df = w.sample_rate / n
    if f_start is None:
        f_start = -(n // 2) * df
    k0 = f_start / df
    if abs(k0 - round(k0)) > 1e-6:
        raise ValueError("f_start must lie on the df grid")
    k0 = int(round(k0))
    X = np.fft.fft(w.samples) * w.dt
    return Spectrum(np.roll(X, -k0), f_start, df)


def idft(s: Spectrum, start_time: float = 0.0) -> SampledWaveform:
    """Inverse of :func:`dft`; the sample rate is ``len(s) * df``."""
    n = len(s)
    k0 = int(round(s.f_start / s.df))
    X = np.roll(s.bins, k0)
    fs = n * s.df
    return SampledWaveform(np.fft.ifft(X) * fs, fs, start_time)


def periodogram(w: SampledWaveform, rbw: float = 100e6, window: str = "hann"):
    """Averaged periodogram (Welch) of a complex record.

    Returns ascending frequencies and the double-sided PSD in W/Hz.
    The segment length is chosen so the bin spacing equals ``rbw``.
    """
    from scipy import signal

    nper = int(round(w.sample_rate / rbw))
    nper = max(8, min(nper, len(w)))
    f, p = signal.welch(w.samples, fs=w.sample_rate, window=window, nperseg=nper,
                        return_onesided=False, detrend=False, scaling="density")
    order = np.argsort(f)
    return f[order], p[order]


# --------------------------------------------------------------------------
# generators


def _check_band(freqs, sample_rate: float):
    f = np.atleast_1d(np.asarray(freqs, dtype=float))
    if np.any(f >= sample_rate / 2) or np.any(f < -sample_rate / 2):
        raise ValueError(
            f"frequency outside [-fs/2, fs/2) = [{-sample_rate/2:g}, {sample_rate/2:g}) Hz (aliasing)")


def _n_samples(duration: float, sample_rate: float) -> int:
    n = int(round(duration * sample_rate))
    if n < 1:
        raise ValueError("duration too short for one sample")
    return n


def gen_cw_tone(freq: float, power: float, phase: float, duration: float,
                sample_rate: float) -> SampledWaveform:
    """Single complex exponential ``sqrt(power) * exp(j(2 pi f t + phase))``."""
    _check_band(freq, sample_rate)
    if power < 0:
        raise ValueError("power must be non-negative")
    n = _n_samples(duration, sample_rate)
    t = np.arange(n) / sample_rate
    x = np.sqrt(power) * np.exp(1j * (2 * np.pi * freq * t + phase))
    return SampledWaveform(x, sample_rate)


def gen_random_test_signal(spec: RandomSignalSpec, duration: float,
                           sample_rate: float) -> SampledWaveform:
    """Complex Gaussian noise with flat PSD ``P_S/B_opt`` on ``f_ctr +- B_opt/2``.

    White Gaussian real and imaginary parts are filtered by an ideal
    (periodic) band-pass and rescaled so the record power is exactly ``P_S``.
    """
    if spec.B_opt >= sample_rate:
        raise ValueError("B_opt must be below the sample rate")
    _check_band([spec.f_ctr - spec.B_opt / 2], sample_rate)
    if spec.f_ctr + spec.B_opt / 2 > sample_rate / 2:
        raise ValueError("signal band exceeds fs/2 (aliasing)")
    n = _n_samples(duration, sample_rate)
    rng = np.random.default_rng(spec.seed)
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    Z = np.fft.fft(z)
    f = np.fft.fftfreq(n, 1 / sample_rate)
    Z[np.abs(f - spec.f_ctr) > spec.B_opt / 2] = 0.0
    x = np.fft.ifft(Z)
    x *= np.sqrt(spec.P_S / np.mean(np.abs(x) ** 2))
    return SampledWaveform(x, sample_rate)


def qam_constellation(order: int) -> np.ndarray:
    """Square QAM alphabet with unit average power."""
    if order not in QAM_ORDERS:
        raise ValueError(f"unsupported QAM order {order}; choose from {QAM_ORDERS}")
    m = int(np.sqrt(order))
    levels = np.arange(-(m - 1), m, 2, dtype=float)
    c = (levels[:, None] + 1j * levels[None, :]).ravel()
    return c / np.sqrt(np.mean(np.abs(c) ** 2))


def rrc_response(f, symbol_rate: float, rolloff: float) -> np.ndarray:
    """Root-raised-cosine amplitude response, unity in the flat region."""
    f = np.abs(np.asarray(f, dtype=float))
    f1 = symbol_rate * (1 - rolloff) / 2
    f2 = symbol_rate * (1 + rolloff) / 2
    h = np.zeros_like(f)
    h[f <= f1] = 1.0
    if rolloff > 0:
        m = (f > f1) & (f <= f2)
        h[m] = np.sqrt(0.5 * (1 + np.cos(np.pi / (rolloff * symbol_rate) * (f[m] - f1))))
    return h


def _qam_grid(symbol_rate, n_symbols, sample_rate):
    sps = sample_rate / symbol_rate
    n = n_symbols * sps
    if abs(n - round(n)) > 1e-6:
        raise ValueError("n_symbols * sample_rate / symbol_rate must be an integer")
    return int(round(n))


def gen_qam_signal(symbol_rate: float, order: int, rrc_rolloff: float = 0.1,
                   n_symbols: int = 4096, seed: int = 0, sample_rate: float = 256e9,
                   power: float = 1.0):
    """RRC-shaped square QAM in complex baseband.

    The pulse shaping is done on the periodic symbol train in the frequency
    domain, so matched filtering with :func:`qam_demodulate` recovers the
    symbols without ISI.

    Returns
    -------
    waveform : SampledWaveform
    symbols : ndarray of complex
        The transmitted symbols (unit average power) for EVM reference.
    """
    const = qam_constellation(order)
    if not 0 <= rrc_rolloff <= 1:
        raise ValueError("rolloff must be in [0, 1]")
    if symbol_rate * (1 + rrc_rolloff) >= sample_rate:
        raise ValueError("symbol_rate * (1 + rolloff) must be below the sample rate")
    n = _qam_grid(symbol_rate, n_symbols, sample_rate)
    rng = np.random.default_rng(seed)
    symbols = const[rng.integers(0, order, n_symbols)]
    S = np.fft.fft(symbols)
    f = np.fft.fftfreq(n, 1 / sample_rate)
    # spectrum of the periodic impulse train, replicated at symbol_rate
    k = np.rint(f / symbol_rate * n_symbols).astype(int) % n_symbols
    X = S[k] * rrc_response(f, symbol_rate, rrc_rolloff)
    x = np.fft.ifft(X)
    x *= np.sqrt(power / np.mean(np.abs(x) ** 2))
    return SampledWaveform(x, sample_rate), symbols


def qam_demodulate(w: SampledWaveform, symbol_rate: float, n_symbols: int,
                   rrc_rolloff: float = 0.1) -> np.ndarray:
    """Matched filter and symbol-spaced sampling; output has unit mean power
    in the noiseless case."""
    n = _qam_grid(symbol_rate, n_symbols, w.sample_rate)
    if n != len(w):
        raise ValueError("record length does not match n_symbols")
    X = np.fft.fft(w.samples)
    f = np.fft.fftfreq(n, 1 / w.sample_rate)
    Y = X * rrc_response(f, symbol_rate, rrc_rolloff)
    # folding the matched-filter output onto the symbol rate = sampling at t = k/Rs
    k = np.rint(f / symbol_rate * n_symbols).astype(int) % n_symbols
    folded = np.zeros(n_symbols, dtype=complex)
    np.add.at(folded, k, Y)
    y = np.fft.ifft(folded)
    return y / np.sqrt(np.mean(np.abs(y) ** 2))


def qam_decide(received, order: int) -> np.ndarray:
    """Nearest-neighbour decisions on the unit-power alphabet."""
    const = qam_constellation(order)
    r = np.asarray(received, dtype=complex)
    return const[np.argmin(np.abs(r[:, None] - const[None, :]), axis=1)]


def add_pilot_tones(w: SampledWaveform, freqs: Sequence[float], rel_power_dB,
                    phases: Sequence[float] | None = None) -> SampledWaveform:
    """Add CW pilots, each ``rel_power_dB`` relative to the record power.

    ``rel_power_dB`` may be a scalar or one value per pilot; ``-inf`` adds
    nothing.
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    if freqs.size == 0:
        return w
    _check_band(freqs, w.sample_rate)
    rel = np.broadcast_to(np.asarray(rel_power_dB, dtype=float), freqs.shape)
    ph = np.zeros(freqs.size) if phases is None else np.asarray(phases, dtype=float)
    p_ref = w.power
    t = np.arange(len(w)) / w.sample_rate
    x = np.array(w.samples)
    for f, r, p in zip(freqs, rel, ph):
        if np.isneginf(r):
            continue
        x = x + np.sqrt(p_ref * 10 ** (r / 10)) * np.exp(1j * (2 * np.pi * f * t + p))
    return w.with_samples(x)


def overlap_regions(f_lo: Sequence[float], B: float) -> list[tuple[float, float]]:
    """Overlap regions ``[f_{mu+1} - B, f_mu + B]`` of adjacent slices."""
    f = np.sort(np.asarray(f_lo, dtype=float))
    return [(f[i + 1] - B, f[i] + B) for i in range(f.size - 1) if f[i + 1] - B <= f[i] + B]


def pilot_frequencies(f_lo: Sequence[float], B: float, extra_upper: bool = False,
                      df: float | None = None) -> np.ndarray:
    """One pilot at the centre of each overlap region, optionally one more
    just inside the upper band edge. Snapped to ``df`` when given."""
    centers = [0.5 * (a + b) for a, b in overlap_regions(f_lo, B)]
    if extra_upper:
        centers.append(max(f_lo) + 0.5 * B)
    out = np.asarray(centers, dtype=float)
    if df:
        out = np.round(out / df) * df
    return out


# --------------------------------------------------------------------------
# peak statistics


def papr(w: SampledWaveform) -> float:
    """Peak instantaneous power over mean power."""
    p = np.abs(w.samples) ** 2
    mean = p.mean()
    if mean <= 0:
        raise ValueError("PAPR undefined for a zero-power record")
    return float(p.max() / mean)


@dataclass(frozen=True)
class ClipResult:
    waveform: SampledWaveform
    clipped_fraction: float


def clip(w: SampledWaveform, k_sigma: float, return_fraction: bool = False):
    """Clip real and imaginary parts independently at ``+-k_sigma`` times
    their own standard deviation."""
    if not k_sigma > 0:
        raise ValueError("k_sigma must be positive")
    re, im = w.samples.real, w.samples.imag
    lr, li = k_sigma * re.std(), k_sigma * im.std()
    out = np.clip(re, -lr, lr) + 1j * np.clip(im, -li, li)
    frac = float(np.mean((np.abs(re) > lr) | (np.abs(im) > li)))
    cw = w.with_samples(out)
    return ClipResult(cw, frac) if return_fraction else cw


# --------------------------------------------------------------------------
# binary container


def _write(path, a: float, b: float, data: np.ndarray):
    data = np.asarray(data, dtype=complex)
    payload = np.empty(2 * data.size, dtype="<f8")
    payload[0::2] = data.real
    payload[1::2] = data.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, CONTAINER_VERSION, a, b, data.size))
        fh.write(payload.tobytes())


def _read(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, a, b, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if payload.size != 2 * n:
        raise ValueError(f"{path}: expected {n} samples, found {payload.size // 2}")
    return a, b, payload[0::2] + 1j * payload[1::2]


def write_waveform(path, w: SampledWaveform) -> None:
    """Little-endian header {magic, version, sample_rate, start_time, length}
    followed by interleaved (re, im) float64 pairs."""
    _write(path, w.sample_rate, w.start_time, w.samples)


def read_waveform(path) -> SampledWaveform:
    fs, t0, x = _read(path)
    return SampledWaveform(x, fs, t0)


def write_spectrum(path, s: Spectrum) -> None:
    _write(path, s.f_start, s.df, s.bins)


def read_spectrum(path) -> Spectrum:
    f0, df, x = _read(path)
    return Spectrum(x, f0, df)

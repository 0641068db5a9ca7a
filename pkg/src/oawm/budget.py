"""
Analytic SNDR scalability model with Monte-Carlo cross-checks.

Every noise source contributes an SNDR in closed form as a function of the
channel count N and the optical acquisition bandwidth B_opt (with the
per-channel ADC bandwidth B = B_opt / (2N)). Contributions combine by adding
their reciprocals.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import optimize, signal

logger = logging.getLogger(__name__)

DB_CAP = 200.0
SOURCES = ("shot", "rf_amp", "adc", "jitter", "ase", "ssbi", "calibration")


@dataclass(frozen=True)
class PhysicalConstants:
    q: float = 1.602176634e-19
    k: float = 1.380649e-23


CONST = PhysicalConstants()


def to_db(x: float) -> float:
    """10 log10 with the +-200 dB cap used for infinite contributions."""
    if x <= 0:
        return -DB_CAP
    if not np.isfinite(x):
        return DB_CAP
    return float(np.clip(10 * math.log10(x), -DB_CAP, DB_CAP))


def from_db(x_dB: float) -> float:
    return math.inf if x_dB >= DB_CAP else 10 ** (x_dB / 10)


@dataclass(frozen=True)
class BudgetParams:
    """Parameters of the scalability model (defaults: reference receiver).

    ``SNDR_cal_dB`` is the calibration-crosstalk contribution; infinite by
    default so that it is left out unless requested.
    """

    N: float = 1
    B_opt: float = 200e9
    S: float = 0.8
    CMRR_dB: float = -30.0
    LOSPR_dB: float = 10.0
    G_dB: float = 6.0
    NF_dB: float = 10.0
    R: float = 50.0
    P_PD: float = 1e-3
    T: float = 300.0
    C1: float = 150e12
    PAPR: float = 16.0
    tau_j_ADC: float = 25e-15
    tau_j_LO: float = 25e-15
    OSNR_sig_dB: float = 40.0
    OSNR_LO_dB: float = 48.0
    B_ref: float = 12.5e9
    SNDR_cal_dB: float = math.inf
    B_max: float = 100e9
    enforce_cap: bool = True

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not self.B_opt > 0:
            raise ValueError("B_opt must be positive")
        if self.PAPR <= 0:
            raise ValueError("PAPR must be positive")
        if self.tau_j_ADC < 0 or self.tau_j_LO < 0:
            raise ValueError("jitter must be non-negative")
        if self.enforce_cap and self.B > self.B_max * (1 + 1e-12):
            raise ValueError(f"B = B_opt/(2N) = {self.B:.4g} Hz exceeds the ADC cap {self.B_max:.4g} Hz")

    @property
    def B(self) -> float:
        return self.B_opt / (2 * self.N)

    @property
    def LOSPR(self) -> float:
        return 10 ** (self.LOSPR_dB / 10)

    @property
    def F(self) -> float:
        return 10 ** (self.NF_dB / 10)

    @property
    def CMRR(self) -> float:
        return 10 ** (self.CMRR_dB / 20)

    @property
    def C2(self) -> float:
        return 2 * self.C1 / self.PAPR

    def with_(self, **kw) -> "BudgetParams":
        return replace(self, **kw)


# --------------------------------------------------------------------------
# single-tone ADC figures


def adc_sinad_thermal(B: float, C1: float = 150e12) -> float:
    """SINAD of a full-scale sinusoid limited by thermal noise, C1/B (dB)."""
    if not B > 0:
        raise ValueError("B must be positive")
    return to_db(C1 / B)


def adc_sinad_jitter(f_sig: float, tau_j: float) -> float:
    """Jitter-limited SINAD of a sinusoid, 1/(2 pi f tau)^2 (dB)."""
    if f_sig < 0:
        raise ValueError("f_sig must be non-negative")
    x = (2 * math.pi * f_sig * tau_j) ** 2
    return DB_CAP if x == 0 else to_db(1 / x)


# --------------------------------------------------------------------------
# broadband contributions (linear ratios and dB)


def _lospr_factor(p: BudgetParams) -> float:
    return p.LOSPR / (1 + p.LOSPR) ** 2


def sndr_shot_lin(p: BudgetParams) -> float:
    return _lospr_factor(p) * 4 * p.S * p.P_PD / (CONST.q * p.B_opt)


def sndr_rf_amp_lin(p: BudgetParams) -> float:
    return _lospr_factor(p) * 8 * p.R * p.S ** 2 * p.P_PD ** 2 / (p.F * CONST.k * p.T * p.B_opt)


def sndr_adc_lin(p: BudgetParams) -> float:
    """C2 / B with B = B_opt / (2N), i.e. 2 C2 N / B_opt."""
    return p.C2 / p.B


def jitter_nsr_adc(p: BudgetParams) -> float:
    return (2 * math.pi * p.B_opt * p.tau_j_ADC) ** 2 / (12 * p.N ** 2)


def jitter_nsr_lo(p: BudgetParams) -> float:
    return (2 * math.pi * p.B_opt * p.tau_j_LO) ** 2 * (p.N ** 2 - 1) / (12 * p.N ** 2)


def sndr_jitter_lin(p: BudgetParams) -> float:
    nsr = jitter_nsr_adc(p) + jitter_nsr_lo(p)
    return math.inf if nsr == 0 else 1 / nsr


def sndr_ase_path_lin(OSNR_dB: float, B_opt: float, B_ref: float = 12.5e9) -> float:
    """Single-polarization ASE contribution of one path: 2 OSNR B_ref / B_opt."""
    return math.inf if OSNR_dB == math.inf else 2 * 10 ** (OSNR_dB / 10) * B_ref / B_opt


def sndr_ase_lin(p: BudgetParams) -> float:
    inv = sum(1 / x for x in (sndr_ase_path_lin(p.OSNR_sig_dB, p.B_opt, p.B_ref),
                              sndr_ase_path_lin(p.OSNR_LO_dB, p.B_opt, p.B_ref)) if x != math.inf)
    return math.inf if inv == 0 else 1 / inv


def sndr_ssbi_lin(p: BudgetParams) -> float:
    if p.CMRR == 0:
        return math.inf
    return p.LOSPR / p.CMRR ** 2 * 8 * p.N / (4 * p.N - 1)


def sndr_shot(p: BudgetParams) -> float:
    return to_db(sndr_shot_lin(p))


def sndr_rf_amp(p: BudgetParams) -> float:
    return to_db(sndr_rf_amp_lin(p))


def sndr_adc(p: BudgetParams) -> float:
    return to_db(sndr_adc_lin(p))


def sndr_jitter(p: BudgetParams) -> float:
    return to_db(sndr_jitter_lin(p))


def sndr_jitter_equal(B_opt: float, tau_j: float) -> float:
    """Equal ADC and LO jitter: 3 / (2 pi (B_opt/2) tau)^2, independent of N."""
    x = (2 * math.pi * B_opt / 2 * tau_j) ** 2 / 3
    return DB_CAP if x == 0 else to_db(1 / x)


def sndr_ase(p: BudgetParams) -> float:
    return to_db(sndr_ase_lin(p))


def sndr_ase_signal(p: BudgetParams) -> float:
    return to_db(sndr_ase_path_lin(p.OSNR_sig_dB, p.B_opt, p.B_ref))


def sndr_ase_lo(p: BudgetParams) -> float:
    return to_db(sndr_ase_path_lin(p.OSNR_LO_dB, p.B_opt, p.B_ref))


def sndr_ssbi(p: BudgetParams) -> float:
    return to_db(sndr_ssbi_lin(p))


# --------------------------------------------------------------------------
# combination


@dataclass(frozen=True)
class NoiseBudget:
    """Per-source SNDR contributions (dB) and their reciprocal sum."""

    sources: dict
    total_SNDR_dB: float

    def as_row(self) -> dict:
        return {**{k: self.sources.get(k, DB_CAP) for k in SOURCES}, "total": self.total_SNDR_dB}


def combine(contributions: Mapping[str, float] | Iterable[float]) -> NoiseBudget:
    """Total SNDR = 1 / sum(1 / SNDR_i), inputs and output in dB.

    Contributions at or above the +200 dB cap (or infinite) drop out.
    """
    if isinstance(contributions, Mapping):
        items = dict(contributions)
    else:
        items = {f"c{i}": v for i, v in enumerate(contributions)}
    if not items:
        raise ValueError("need at least one contribution")
    inv = 0.0
    for k, v in items.items():
        v = float(v)
        if math.isnan(v):
            raise ValueError(f"contribution {k} is NaN")
        if v >= DB_CAP:
            continue
        inv += 10 ** (-v / 10)
    total = DB_CAP if inv == 0 else to_db(1 / inv)
    return NoiseBudget({k: float(min(v, DB_CAP)) for k, v in items.items()}, total)


def budget(p: BudgetParams, include: Sequence[str] = SOURCES) -> NoiseBudget:
    """All closed-form contributions for one operating point."""
    fn = dict(shot=sndr_shot, rf_amp=sndr_rf_amp, adc=sndr_adc, jitter=sndr_jitter,
              ase=sndr_ase, ssbi=sndr_ssbi, calibration=lambda q: min(q.SNDR_cal_dB, DB_CAP))
    unknown = set(include) - set(fn)
    if unknown:
        raise ValueError(f"unknown sources {sorted(unknown)}")
    return combine({k: fn[k](p) for k in include})


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepTable:
    rows: list
    notes: list = field(default_factory=list)

    COLUMNS = ("N", "B_opt", "B") + SOURCES + ("total",)

    def column(self, name: str, **where) -> np.ndarray:
        sel = [r for r in self.rows if all(r[k] == v for k, v in where.items())]
        return np.array([r[name] for r in sel], dtype=float)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in self.COLUMNS])
        return path


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def _row(p: BudgetParams) -> dict:
    b = budget(p)
    return dict(N=p.N, B_opt=p.B_opt, B=p.B, **b.as_row())


def sweep_bandwidth(N_list: Sequence[int], B_opt_grid: Sequence[float],
                    p: BudgetParams | None = None) -> SweepTable:
    """Contributions versus B_opt for each N; points beyond the ADC cap are omitted."""
    p = p or BudgetParams()
    if not len(N_list) or not len(B_opt_grid):
        raise ValueError("grids must be non-empty")
    rows, notes = [], []
    for N in N_list:
        skipped = 0
        for Bo in B_opt_grid:
            if Bo / (2 * N) > p.B_max * (1 + 1e-12):
                skipped += 1
                continue
            rows.append(_row(replace(p, N=N, B_opt=float(Bo))))
        if skipped:
            notes.append(f"N={N}: {skipped} points above B_opt = {2 * N * p.B_max:.4g} Hz omitted "
                         f"(ADC bandwidth cap {p.B_max:.4g} Hz)")
    return SweepTable(rows, notes)


def sweep_channels(B_opt_list: Sequence[float], N_grid: Sequence[int],
                   p: BudgetParams | None = None) -> SweepTable:
    """Contributions versus N for each B_opt; points beyond the ADC cap are omitted."""
    p = p or BudgetParams()
    if not len(B_opt_list) or not len(N_grid):
        raise ValueError("grids must be non-empty")
    rows, notes = [], []
    for Bo in B_opt_list:
        skipped = 0
        for N in N_grid:
            if Bo / (2 * N) > p.B_max * (1 + 1e-12):
                skipped += 1
                continue
            rows.append(_row(replace(p, N=N, B_opt=float(Bo))))
        if skipped:
            notes.append(f"B_opt={Bo:.4g} Hz: {skipped} channel counts below the ADC cap omitted")
    return SweepTable(rows, notes)


def crossover(p: BudgetParams, a: str = "adc", b: str = "ase", N_range=(1.0, 64.0)) -> float:
    """Continuous channel count where contributions ``a`` and ``b`` are equal."""
    fn = dict(shot=sndr_shot, rf_amp=sndr_rf_amp, adc=sndr_adc, jitter=sndr_jitter, ase=sndr_ase,
              ssbi=sndr_ssbi)

    def diff(N):
        q = replace(p, N=N, enforce_cap=False)
        return fn[a](q) - fn[b](q)

    lo, hi = N_range
    if diff(lo) * diff(hi) > 0:
        raise ValueError(f"{a} and {b} do not cross within N in {N_range}")
    return float(optimize.brentq(diff, lo, hi, xtol=1e-9))


# --------------------------------------------------------------------------
# Monte-Carlo jitter oracles (independent of the front-end simulator)


def _random_tones(rng, n_tones: int, f_lo: float, f_hi: float):
    f = rng.uniform(f_lo, f_hi, n_tones)
    c = (rng.standard_normal(n_tones) + 1j * rng.standard_normal(n_tones)) / math.sqrt(2 * n_tones)
    return f, c


def _eval_tones(f, c, t):
    """sum_i c_i exp(j 2 pi f_i t) at arbitrary instants ``t``."""
    out = np.zeros(t.size, dtype=complex)
    for i in range(0, f.size, 256):
        out += np.exp(2j * np.pi * np.outer(t, f[i:i + 256])) @ c[i:i + 256]
    return out


@dataclass(frozen=True)
class MCResult:
    SNDR_dB: float
    closed_form_dB: float
    trials: int
    stderr_dB: float

    @property
    def deviation_dB(self) -> float:
        return self.SNDR_dB - self.closed_form_dB


def _mc_summary(err, sig, closed):
    err, sig = np.asarray(err), np.asarray(sig)
    nsr = err.sum() / sig.sum()
    ratios = err / sig
    se = float(10 / math.log(10) * ratios.std(ddof=1) / math.sqrt(ratios.size) / ratios.mean()) \
        if ratios.size > 1 and ratios.mean() > 0 else 0.0
    return MCResult(DB_CAP if nsr == 0 else to_db(1 / nsr), closed, int(ratios.size), se)


def mc_jitter(N: int, B_opt: float, tau_ADC: float, tau_LO: float, trials: int = 20,
              n_samples: int = 2048, n_tones: int = 512, seed: int = 0) -> MCResult:
    """Jittered-sampling Monte-Carlo of the broadband jitter NSR.

    Each of the N slices is an independent complex baseband signal made of
    random tones on [-B, B] (B = B_opt / (2N)). Slice ``mu`` is down-converted
    by a comb tone at ``f_mu - f_cntr = (mu - (N+1)/2) B_opt/N`` whose phase
    follows the comb timing error, ``exp(-j 2 pi (f_mu - f_cntr) dtau_k)``, and
    the result is sampled at the jittered instants ``t_k + dt_k``. Both timing
    errors are white Gaussian. The tones are evaluated exactly at the jittered
    instants, so no interpolation enters. Compare with the closed-form
    contribution 12 N^2 / ((2 pi B_opt)^2 [tau_ADC^2 + tau_LO^2 (N^2 - 1)]).
    """
    p = BudgetParams(N=N, B_opt=B_opt, tau_j_ADC=tau_ADC, tau_j_LO=tau_LO, enforce_cap=False)
    B = p.B
    f_fsr = B_opt / N
    offs = (np.arange(1, N + 1) - (N + 1) / 2) * f_fsr
    fs = 2.5 * B
    t = np.arange(n_samples) / fs
    rng = np.random.default_rng([seed, N, 0xA11])
    err, sig = [], []
    for _ in range(trials):
        dt = tau_ADC * rng.standard_normal(n_samples)
        dtau = tau_LO * rng.standard_normal(n_samples)
        e = s = 0.0
        for mu in range(N):
            f, c = _random_tones(rng, n_tones, -B, B)
            ideal = _eval_tones(f, c, t)
            got = _eval_tones(f, c, t + dt) * np.exp(-2j * np.pi * offs[mu] * dtau)
            e += float(np.sum(np.abs(got - ideal) ** 2))
            s += float(np.sum(np.abs(ideal) ** 2))
        err.append(e)
        sig.append(s)
    return _mc_summary(err, sig, sndr_jitter(p))


def mc_jitter_adc(B: float, tau: float, **kw) -> MCResult:
    """ADC-only jitter oracle for a flat signal on [-B, B] (N = 1, B_opt = 2B)."""
    return mc_jitter(1, 2 * B, tau, 0.0, **kw)


def mc_jitter_lo(N: int, B_opt: float, tau: float, **kw) -> MCResult:
    """Comb-timing-only jitter oracle."""
    return mc_jitter(N, B_opt, 0.0, tau, **kw)


# --------------------------------------------------------------------------
# Monte-Carlo through the front-end simulator


_FE_SOURCE = dict(shot=("shot",), rf_amp=("rf_amp",), adc=("adc_noise",), ase=("ase",),
                  ssbi=("ssbi",), jitter=("adc_jitter", "lo_jitter"), jitter_adc=("adc_jitter",),
                  jitter_lo=("lo_jitter",))


def _frontend_setup(p: BudgetParams, duration: float):
    from .frontend import ADCConfig, CombLO, FrontEndConfig

    N = int(round(p.N))
    f_fsr = p.B_opt / N
    B = p.B
    fe = FrontEndConfig.evenly_delayed(
        N, f_fsr, S=p.S, CMRR_dB=p.CMRR_dB, LOSPR_dB=p.LOSPR_dB, G_dB=p.G_dB, NF_dB=p.NF_dB,
        R=p.R, P_PD=p.P_PD, T=p.T, OSNR_sig_dB=p.OSNR_sig_dB, dc_block=True)
    # slow comb timing error, as assumed by the closed form (no spectral spreading)
    comb = CombLO.centered(N, f_fsr, fe.P_LO_nominal, tau_j_LO=p.tau_j_LO, OSNR_LO_dB=p.OSNR_LO_dB,
                           jitter_bandwidth=B / 16)
    f_s = 2.5 * B
    adc = ADCConfig(B=B, f_s=f_s, headroom_sigma=math.sqrt(p.PAPR), C1=p.C1, tau_j_ADC=p.tau_j_ADC)
    # simulation rate: integer multiple of f_s covering signal, comb and SSBI products
    m = int(math.ceil((p.B_opt + B) * 1.05 / f_s))
    fs_sim = m * f_s
    K = int(round(duration * f_s))
    return fe, comb, adc, fs_sim, K


def _frontend_pairs(source: str, p: BudgetParams, seeds, duration: float):
    """Yield (reference, impaired) record pairs for each seed."""
    from .frontend import simulate_frontend
    from .signalkit import RandomSignalSpec, gen_random_test_signal

    if source not in _FE_SOURCE:
        raise ValueError(f"unknown source {source!r}")
    fe, comb, adc, fs_sim, K = _frontend_setup(p, duration)
    if source != "adc":
        # ideal converter so that only the selected source differs
        adc = replace(adc, headroom_sigma=None, U_FS=None)
    n_sim = int(round(K * fs_sim / adc.f_s))
    for sd in seeds:
        spec = RandomSignalSpec(fe.P_S_nominal, p.B_opt, 0.0, int(sd))
        w = gen_random_test_signal(spec, n_sim / fs_sim, fs_sim)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ref = simulate_frontend(w, comb, fe, adc, None, (), seed=int(sd))
            got = simulate_frontend(w, comb, fe, adc, None, _FE_SOURCE[source], seed=int(sd))
        yield ref, got, adc


def frontend_mc_sndr(source: str, p: BudgetParams, seeds: Sequence[int] = range(8),
                     duration: float = 20e-9) -> MCResult:
    """SNDR of one noise source measured on the simulated channel records.

    A flat Gaussian test signal spanning B_opt is simulated with only
    ``source`` enabled and without noise; the difference is the impairment.
    The records are AC coupled, so DC terms are excluded. ``source`` is one
    of shot, rf_amp, adc, ase, ssbi, jitter, jitter_adc, jitter_lo; the ADC
    full scale follows from the PAPR as ``2 sqrt(PAPR)`` times the rms.
    """
    closed = dict(shot=sndr_shot, rf_amp=sndr_rf_amp, adc=sndr_adc, ase=sndr_ase, ssbi=sndr_ssbi,
                  jitter=sndr_jitter,
                  jitter_adc=lambda q: to_db(1 / jitter_nsr_adc(q)) if q.tau_j_ADC else DB_CAP,
                  jitter_lo=lambda q: to_db(1 / jitter_nsr_lo(q)) if jitter_nsr_lo(q) else DB_CAP)
    err, sig = [], []
    for ref, got, _ in _frontend_pairs(source, p, seeds, duration):
        err.append(float(np.sum((got.I - ref.I) ** 2) + np.sum((got.Q - ref.Q) ** 2)))
        sig.append(float(np.sum(ref.I ** 2) + np.sum(ref.Q ** 2)))
    return _mc_summary(err, sig, closed[source](p))


def ssbi_psd_mc(p: BudgetParams, seeds: Sequence[int] = range(100), duration: float = 20e-9):
    """Averaged one-sided SSBI power spectral density of the simulated records.

    Welch estimate per record, averaged over records and seeds.
    Returns ``(f, psd, r2)`` where ``r2`` is the coefficient of determination
    of a least-squares fit of the triangular shape ``c (B_opt - f)`` over
    ``0 < f <= B``.
    """
    acc, f = None, None
    for ref, got, adc in _frontend_pairs("ssbi", p, seeds, duration):
        d = np.concatenate([got.I - ref.I, got.Q - ref.Q])
        f, P = signal.welch(d, adc.f_s, nperseg=min(256, d.shape[1]), detrend=False, axis=1)
        acc = P.mean(axis=0) if acc is None else acc + P.mean(axis=0)
    psd = acc / len(seeds)
    sel = (f > 0) & (f <= p.B)
    x, y = p.B_opt - f[sel], psd[sel]
    c = float(x @ y / (x @ x))
    r2 = 1 - float(np.sum((y - c * x) ** 2) / np.sum((y - y.mean()) ** 2))
    return f[sel], y, r2


# --------------------------------------------------------------------------
# Monte-Carlo calibration crosstalk


@dataclass
class CrosstalkMCRow:
    N: int
    SNDR_freq_dB: float
    SNDR_drift_dB: float
    image_dB: float
    slice_dB: float
    trials: int
    failures: int


def mc_calibration_crosstalk(N_range: Sequence[int] = (1, 2, 4, 8), perturbation_dB: float = -40.0,
                             trials: int = 4, seed: int = 0, B: float = 21e9, f_FSR: float = 40e9,
                             duration: float = 100e-9, f_s: float = 50e9,
                             drift_scale: float = 1.0) -> list:
    """Calibration-error crosstalk of the full reconstruction versus N.

    For each N and trial a noiseless recording of a flat Gaussian test signal
    of bandwidth N f_FSR is reconstructed three times: (a) true transfer
    functions and true drift, (b) transfer functions perturbed by
    ``1 + eps CN(0, 1)`` (eps from ``perturbation_dB``) with the true drift,
    (c) perturbed transfer functions with the drift estimated from the data.
    SNDR_freq compares (b) with (a), SNDR_drift compares (c) with (b) after
    removing the global phase left by the drift gauge.
    """
    from .frontend import ADCConfig, CombLO, FrontEndConfig, calibration_from_model, simulate_frontend
    from .metrics import crosstalk_probe
    from .recon import reconstruct
    from .signalkit import RandomSignalSpec, gen_random_test_signal, dft
    from .types import CalibrationRecord, DriftParams

    eps = 10 ** (perturbation_dB / 20)
    out = []
    for N in N_range:
        fe = FrontEndConfig.evenly_delayed(N, f_FSR)
        comb = CombLO.centered(N, f_FSR, fe.P_LO_nominal)
        adc = ADCConfig(B=B, f_s=f_s, headroom_sigma=None)
        B_sig = N * f_FSR
        need = B_sig / 2 + (N - 1) / 2 * f_FSR + B
        fs_sim = f_s * math.ceil(max(need, B_sig) * 1.05 / f_s)
        n_sim = int(round(duration * fs_sim))
        df = 1 / duration
        kB = int(math.floor(B / df + 1e-9))
        f_grid = np.arange(-kB, kB + 1) * df
        true_cal = calibration_from_model(comb, fe, adc, f_grid=f_grid)
        sf, sd, im, sl = [], [], [], []
        fails = 0
        for t in range(trials):
            rng = np.random.default_rng([seed, N, t])
            try:
                w = gen_random_test_signal(RandomSignalSpec(fe.P_S_nominal, B_sig, 0.0, int(rng.integers(2**31))),
                                           duration, fs_sim)
                drift = DriftParams(np.r_[0.0, rng.uniform(-np.pi, np.pi, N - 1)] * drift_scale,
                                    rng.uniform(0, 1 / f_FSR) * drift_scale)
                rec = simulate_frontend(w, comb, fe, adc, drift, (), seed=t)
                shape = true_cal.H_I.shape
                pert = [1 + eps * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
                        for _ in range(2)]
                cal_p = CalibrationRecord(true_cal.f_grid, true_cal.H_I * pert[0], true_cal.H_Q * pert[1],
                                          None, perturbation_dB, dict(true_cal.metadata))
                ra = reconstruct(rec, true_cal, drift=drift)
                rb = reconstruct(rec, cal_p, drift=drift)
                a = ra.stitched_spectrum.bins
                b = rb.stitched_spectrum.bins
                sf.append(np.sum(np.abs(b - a) ** 2) / np.sum(np.abs(a) ** 2))
                ref = dft(w)
                xt = crosstalk_probe(rb, ref, true_cal, drift)
                im.append(xt.powers["image"] / xt.signal_power)
                sl.append(xt.powers["slice"] / xt.signal_power)
                if N > 1:
                    rc = reconstruct(rec, cal_p)
                    c = rc.stitched_spectrum.bins
                    c = c * np.exp(-1j * np.angle(np.vdot(b, c)))
                    sd.append(np.sum(np.abs(c - b) ** 2) / np.sum(np.abs(a) ** 2))
            except Exception as exc:  # noqa: BLE001 - trial failures are counted, not fatal
                fails += 1
                logger.warning("N=%d trial %d failed: %s", N, t, exc)
        mean = lambda v: float(np.mean(v)) if v else math.nan  # noqa: E731
        out.append(CrosstalkMCRow(
            N, -to_db(mean(sf)) if sf else math.nan,
            (-to_db(mean(sd)) if sd else DB_CAP) if N > 1 else DB_CAP,
            to_db(mean(im)) if im else math.nan, to_db(mean(sl)) if sl else math.nan,
            len(sf), fails))
    return out


def write_rows_csv(path, rows: Sequence, columns: Sequence[str] | None = None) -> Path:
    """RFC-4180 CSV for dataclass rows or dicts."""
    path = Path(path)
    dicts = [asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r) for r in rows]
    cols = list(columns or (dicts[0].keys() if dicts else []))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(cols)
        for d in dicts:
            w.writerow([_fmt(d[c]) if isinstance(d[c], (int, float, np.floating, np.integer)) else d[c]
                        for c in cols])
    return path

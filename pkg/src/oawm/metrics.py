"""
Signal-quality metrology: SINAD with a distortion taxonomy, ENOB, EVM/CSNR
and the crosstalk decomposition of a reconstruction.

Categories of a single-tone report follow a fixed precedence when their
integration windows overlap: signal > pilots > slice crosstalk > image
crosstalk > clock spurs. Whatever is left is noise, so the category powers
add up to the total power exactly.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import get_window

from .signalkit import Spectrum, qam_constellation
from .types import CalibrationRecord, DriftParams, TransferMatrixSet

logger = logging.getLogger(__name__)

CATEGORIES = ("pilots", "slice_crosstalk", "image_crosstalk", "clock_spurs", "noise")
DB_CAP = 200.0


def _db(x: float) -> float:
    if x <= 0:
        return -DB_CAP
    return float(np.clip(10 * np.log10(x), -DB_CAP, DB_CAP))


def enob_from_sinad(sinad_dB):
    """ENOB = (SINAD_dB - 1.76) / 6.02."""
    return (np.asarray(sinad_dB, dtype=float) - 1.76) / 6.02


def sinad_from_enob(enob):
    return np.asarray(enob, dtype=float) * 6.02 + 1.76


# --------------------------------------------------------------------------
# SINAD


@dataclass
class DistortionReport:
    """Category powers of a single-tone measurement.

    ``categories`` holds powers relative to the signal in dB;
    ``powers`` the mean powers over the record (sum of |X|^2 df^2), so
    ``signal_power_dB`` is in dBW for a spectrum of a field in sqrt(W).
    """

    signal_power_dB: float
    categories: dict
    SINAD_dB: float
    ENOB_bits: float
    powers: dict = field(default_factory=dict)
    total_power: float = 0.0
    overlaps: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        rows = [("signal_power_dB", f"{self.signal_power_dB:.3f}")]
        rows += [(f"{k} [dBc]", f"{v:.3f}") for k, v in self.categories.items()]
        rows += [("SINAD_dB", f"{self.SINAD_dB:.3f}"), ("ENOB_bits", f"{self.ENOB_bits:.4f}")]
        w = max(len(r[0]) for r in rows)
        return "".join(f"{a:<{w}}  {b:>12}\n" for a, b in rows)


def crosstalk_frequencies(tone_freqs, f_lo, span) -> tuple[np.ndarray, np.ndarray]:
    """Predicted slice-crosstalk and image-crosstalk lines of the given tones.

    Slice crosstalk of a tone at ``g`` appears at ``g + (f_mu - f_mu')``;
    image crosstalk at ``f_mu + f_mu' - g``. Only lines inside ``span`` are kept.
    """
    g = np.atleast_1d(np.asarray(tone_freqs, dtype=float))
    fl = np.asarray(f_lo, dtype=float)
    d = np.unique(np.round((fl[:, None] - fl[None, :]).ravel(), 3))
    d = d[d != 0]
    sl = (g[:, None] + d[None, :]).ravel()
    s = np.unique(np.round((fl[:, None] + fl[None, :]).ravel(), 3))
    im = (s[None, :] - g[:, None]).ravel()
    lo, hi = span
    return sl[(sl >= lo) & (sl <= hi)], im[(im >= lo) & (im <= hi)]


def clock_spur_frequencies(f_lo, f_clk: float, B: float) -> np.ndarray:
    """Where a baseband clock line at ``f_clk`` lands after stitching: ``f_mu +- f_clk``."""
    if f_clk is None or f_clk > B:
        return np.zeros(0)
    fl = np.asarray(f_lo, dtype=float)
    return np.concatenate([fl + f_clk, fl - f_clk])


def _windowed_power(spec: Spectrum, window: str) -> np.ndarray:
    """Per-bin power after a time-domain analysis window, normalized to preserve total power
    of a stationary signal (dividing by mean(w^2))."""
    n = len(spec)
    if window in (None, "none", "boxcar", "rect"):
        return np.abs(spec.bins) ** 2
    w = get_window(window, n, fftbins=True)
    x = np.fft.ifft(spec.bins)
    X = np.fft.fft(x * w)
    return np.abs(X) ** 2 / np.mean(w ** 2)


def _enbw_bins(window: str, n: int = 4096) -> float:
    if window in (None, "none", "boxcar", "rect"):
        return 1.0
    w = get_window(window, n, fftbins=True)
    return float(n * np.sum(w ** 2) / np.sum(w) ** 2)


def sinad_report(spec: Spectrum, signal_freqs, known_spur_freqs: Sequence[float] = (),
                 rbw: float | None = None, pilot_freqs: Sequence[float] = (),
                 f_lo: Sequence[float] | None = None, window: str = "flattop",
                 window_rbw: float = 3.0, band: tuple | None = None) -> DistortionReport:
    """Categorize a reconstructed spectrum and compute SINAD.

    Parameters
    ----------
    spec : Spectrum
        Reconstructed spectrum (frequency relative to ``f_ref``).
    signal_freqs : sequence of float
        Frequencies of the wanted tone(s).
    known_spur_freqs : sequence of float
        ADC clock lines and their mixing products.
    rbw : float, optional
        Resolution bandwidth; defaults to the analysis window's noise bandwidth.
    pilot_freqs : sequence of float
        Pilot tones (counted as distortion).
    f_lo : sequence of float, optional
        Comb tone offsets; enables the slice/image crosstalk categories.
    window : str
        Analysis window applied in the time domain (flat-top by default).
    window_rbw : float
        Half-width of every integration window in units of ``rbw``.
    band : (float, float), optional
        Analysis band; bins outside are ignored (default: whole spectrum).
        Use the acquisition range ``[f_1 - f_FSR/2, f_M + f_FSR/2]`` to
        exclude the outer slice edges beyond the comb coverage.
    """
    sig = np.atleast_1d(np.asarray(signal_freqs, dtype=float))
    if sig.size == 0:
        raise ValueError("at least one signal frequency is required")
    df = spec.df
    rbw = _enbw_bins(window) * df if rbw is None else float(rbw)
    half = window_rbw * rbw
    f = spec.freqs
    span = (f[0], f[-1])
    if np.any((sig < span[0]) | (sig > span[1])):
        raise ValueError("signal frequency outside the spectrum")
    P = _windowed_power(spec, window) * df ** 2
    if band is not None:
        lo, hi = float(band[0]), float(band[1])
        if not lo < hi:
            raise ValueError("band must be (low, high) with low < high")
        if np.any((sig < lo) | (sig > hi)):
            raise ValueError("signal frequency outside the analysis band")
        P = np.where((f >= lo) & (f <= hi), P, 0.0)
    total = float(P.sum())

    pil = np.asarray(pilot_freqs, dtype=float)
    tones = np.concatenate([sig, pil])
    if f_lo is not None and len(f_lo) > 0:
        xs, xi = crosstalk_frequencies(tones, f_lo, span)
    else:
        xs, xi = np.zeros(0), np.zeros(0)
    plan = [("signal", sig), ("pilots", pil), ("slice_crosstalk", xs), ("image_crosstalk", xi),
            ("clock_spurs", np.asarray(known_spur_freqs, dtype=float))]
    label = np.full(f.size, -1)
    overlaps = []
    for ci, (name, lines) in enumerate(plan):
        for g in lines:
            m = np.abs(f - g) <= half
            taken = m & (label >= 0) & (label != ci)
            if taken.any():
                owner = plan[int(label[taken][0])][0]
                overlaps.append(dict(category=name, freq=float(g), yielded_to=owner,
                                     bins=int(taken.sum())))
            label[m & (label < 0)] = ci
    if overlaps:
        logger.info("%d overlapping category windows resolved by precedence", len(overlaps))
    powers = {name: float(P[label == ci].sum()) for ci, (name, _) in enumerate(plan)}
    powers["noise"] = float(P[label < 0].sum())
    ps = powers["signal"]
    if ps <= 0:
        raise ValueError("no signal power in the signal window")
    rel = {k: _db(powers[k] / ps) for k in CATEGORIES}
    impair = sum(powers[k] for k in CATEGORIES)
    sinad = _db(ps / impair) if impair > 0 else DB_CAP
    return DistortionReport(_db(ps), rel, sinad, float(enob_from_sinad(sinad)), powers, total,
                            overlaps, dict(rbw=rbw, window=window, window_rbw=window_rbw,
                                     band=None if band is None else [float(band[0]), float(band[1])]))


# --------------------------------------------------------------------------
# EVM / CSNR


@dataclass(frozen=True)
class EVMResult:
    evm: float
    evm_percent: float
    csnr_dB: float
    gain: complex
    n_symbols: int


def evm_csnr(received, reference, order: int | None = None, fit_gain: bool = True,
             min_symbols: int = 100) -> EVMResult:
    """Data-aided EVM and CSNR = 10 log10(1 / EVM^2).

    A complex least-squares gain is removed first (``fit_gain``). EVM is
    normalized to the mean constellation power (of ``order`` if given, else of
    ``reference``). A perfect match reports the CSNR cap.
    """
    rx = np.asarray(received, dtype=complex).ravel()
    ref = np.asarray(reference, dtype=complex).ravel()
    if rx.size == 0:
        raise ValueError("no symbols")
    if rx.size != ref.size:
        raise ValueError("received and reference lengths differ")
    if rx.size < min_symbols:
        raise ValueError(f"need at least {min_symbols} symbols")
    g = complex(np.vdot(ref, rx) / np.vdot(ref, ref)) if fit_gain else 1.0 + 0j
    err = rx / g - ref
    p_ref = np.mean(np.abs(qam_constellation(order)) ** 2) if order else np.mean(np.abs(ref) ** 2)
    evm = float(np.sqrt(np.mean(np.abs(err) ** 2) / p_ref))
    csnr = DB_CAP if evm == 0 else min(DB_CAP, -20 * np.log10(evm))
    return EVMResult(evm, 100 * evm, float(csnr), g, rx.size)


# --------------------------------------------------------------------------
# crosstalk decomposition


@dataclass
class CrosstalkReport:
    """Error powers of a reconstruction split by mechanism, relative to the signal (dB).

    ``self`` is the frequency response error of each slice onto itself,
    ``slice`` leakage between different slices, ``image`` leakage of the
    mirrored complex-conjugate components.
    """

    signal_power: float
    powers: dict
    relative_dB: dict
    SNDR_dB: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _true_vectors(truth: Spectrum, offsets, kB: int) -> np.ndarray:
    """``[a(f_mu + f_k); conj a(f_mu - f_k)]`` for k = 0..kB, shape (kB+1, 2M)."""
    k = np.arange(kB + 1)
    f0 = int(round(truth.f_start / truth.df))
    n = len(truth)

    def at(idx):
        i = idx - f0
        ok = (i >= 0) & (i < n)
        out = np.zeros(idx.shape, dtype=complex)
        out[ok] = truth.bins[i[ok]]
        return out

    off = np.asarray(offsets, dtype=int)
    top = at(off[None, :] + k[:, None])
    bot = np.conj(at(off[None, :] - k[:, None]))
    return np.concatenate([top, bot], axis=1)


def crosstalk_probe(result, ground_truth: Spectrum, true_system, true_drift: DriftParams | None = None
                    ) -> CrosstalkReport:
    """Decompose the calibration-induced error of a reconstruction.

    The per-bin error operator ``E = H_used^-1 H_true`` maps the true slice
    vectors to the reconstructed ones. Its diagonal minus one is the self
    error, the remaining entries within the same spectral side give slice
    crosstalk and the cross-side blocks give image crosstalk. Each part is
    stitched with the reconstruction's own weights.

    ``true_system`` is a TransferMatrixSet on the reconstruction bins or a
    CalibrationRecord (with ``true_drift``).
    """
    from .recon import _slices_from_solution, build_matrix

    Hu = result.matrix
    M = Hu.M
    if isinstance(true_system, CalibrationRecord):
        Ht = build_matrix(true_system, true_drift, Hu.f_grid).matrix
    elif isinstance(true_system, TransferMatrixSet):
        Ht = true_system.matrix
    else:
        raise TypeError("true_system must be a CalibrationRecord or TransferMatrixSet")
    if Ht.shape != Hu.matrix.shape:
        raise ValueError("true system does not match the reconstruction bins")
    E = np.einsum("kij,kjl->kil", Hu.inverse, Ht)
    x = _true_vectors(ground_truth, result.offsets, result.kB)
    I = np.eye(2 * M)
    side = np.zeros((2 * M, 2 * M), dtype=bool)
    side[:M, :M] = side[M:, M:] = True
    masks = dict(self=np.eye(2 * M, dtype=bool), slice=side & ~np.eye(2 * M, dtype=bool), image=~side)
    W = result.weights
    g0 = int(result.offsets.min()) - result.kB
    j = np.arange(-result.kB, result.kB + 1)

    def stitched(xv):
        sl = _slices_from_solution(xv, M)
        out = np.zeros(W.shape[1], dtype=complex)
        for mu in range(M):
            idx = result.offsets[mu] - g0 + j
            out[idx] += W[mu, idx] * sl[mu]
        return out

    ref = stitched(x)
    ps = float(np.sum(np.abs(ref) ** 2))
    powers = {}
    for name, m in masks.items():
        Em = np.where(m[None], E - (I[None] if name == "self" else 0), 0)
        powers[name] = float(np.sum(np.abs(stitched(np.einsum("kij,kj->ki", Em, x))) ** 2))
    powers["total"] = float(np.sum(np.abs(stitched(np.einsum("kij,kj->ki", E - I[None], x))) ** 2))
    powers["crosstalk"] = powers["slice"] + powers["image"]
    rel = {k: _db(v / ps) for k, v in powers.items()}
    return CrosstalkReport(ps, powers, rel, {k: -v for k, v in rel.items()})


# --------------------------------------------------------------------------
# output


def write_spectrum_csv(path, spec: Spectrum, ref_power: float | None = None) -> Path:
    """CSV with ``freq_Hz,power_dB`` columns; power per bin in dB relative to ``ref_power``
    (default: absolute)."""
    path = Path(path)
    p = np.abs(spec.bins) ** 2 * spec.df
    if ref_power:
        p = p / ref_power
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["freq_Hz", "power_dB"])
        for fi, pi in zip(spec.freqs, p):
            w.writerow([f"{fi:.6f}", f"{_db(pi):.6f}"])
    return path


def write_report(path, report, fmt: str = "json") -> Path:
    path = Path(path)
    if fmt == "json":
        path.write_text(report.to_json())
    elif fmt == "text":
        path.write_text(report.to_text())
    else:
        raise ValueError("fmt must be 'json' or 'text'")
    return path

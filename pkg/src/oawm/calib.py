"""
Calibration with a known optical reference waveform (ORW).

A periodic ORW (a comb of lines spaced ``f_ORW``) probes every transfer
function at baseband frequencies ``g - f_mu``. Because ``f_ORW`` and ``f_FSR``
are incommensurate, each baseband bin is reached by a unique (line, tone)
pair, so ``H(g - f_mu) = I(g - f_mu) / a(g)``. Shots taken at different
ORW offsets interleave on a denser grid and are merged after removing the
per-shot drift relative to an anchor shot.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import interpolate

from .signalkit import SampledWaveform
from .types import CalibrationRecord, ChannelRecords

logger = logging.getLogger(__name__)

CAL_FORMAT_VERSION = 1
SMF_BETA2 = -21.7e-27  # s^2/m, standard single-mode fiber near 1550 nm


@dataclass(frozen=True)
class ORWConfig:
    """Reference comb: ``n_lines`` lines at ``f_first + offset + k*f_ORW``."""

    f_ORW: float
    n_lines: int
    power: float
    line_phases: tuple | None = None
    f_first: float | None = None

    def __post_init__(self):
        if not self.f_ORW > 0:
            raise ValueError("f_ORW must be positive")
        if self.n_lines < 1:
            raise ValueError("n_lines must be >= 1")
        if not self.power > 0:
            raise ValueError("power must be positive")
        ph = np.zeros(self.n_lines) if self.line_phases is None else np.asarray(self.line_phases, float)
        if ph.shape != (self.n_lines,) or not np.all(np.isfinite(ph)):
            raise ValueError("line_phases must be n_lines finite values")
        object.__setattr__(self, "line_phases", tuple(ph))

    def line_frequencies(self, offset: float = 0.0) -> np.ndarray:
        f0 = -(self.n_lines - 1) / 2 * self.f_ORW if self.f_first is None else self.f_first
        return f0 + offset + self.f_ORW * np.arange(self.n_lines)

    def line_amplitudes(self) -> np.ndarray:
        return np.sqrt(self.power / self.n_lines) * np.exp(1j * np.asarray(self.line_phases))


@dataclass(frozen=True)
class FiberConfig:
    length: float
    beta2: float = SMF_BETA2

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("fiber length must be non-negative")

    def phase(self, f) -> np.ndarray:
        """Spectral phase added by the fiber (rad); the field is multiplied by exp(-j*phase)."""
        return 0.5 * self.beta2 * (2 * np.pi * np.asarray(f, dtype=float)) ** 2 * self.length


def gen_orw(cfg: ORWConfig, duration: float, sample_rate: float, offset: float = 0.0,
            amplitudes=None) -> SampledWaveform:
    """Synthesize the reference waveform; ``amplitudes`` overrides line values."""
    f = cfg.line_frequencies(offset)
    if cfg.n_lines * cfg.f_ORW >= sample_rate or np.any(np.abs(f) >= sample_rate / 2):
        raise ValueError("ORW lines exceed the simulation band (aliasing)")
    c = cfg.line_amplitudes() if amplitudes is None else np.asarray(amplitudes, complex)
    n = int(round(duration * sample_rate))
    df = sample_rate / n
    k = f / df
    if np.all(np.abs(k - np.round(k)) < 1e-6):
        X = np.zeros(n, dtype=complex)
        np.add.at(X, np.round(k).astype(int) % n, c * n)
        return SampledWaveform(np.fft.ifft(X), sample_rate)
    t = np.arange(n) / sample_rate
    x = np.zeros(n, dtype=complex)
    for i in range(0, f.size, 64):
        x += c[i:i + 64] @ np.exp(2j * np.pi * f[i:i + 64, None] * t[None, :])
    return SampledWaveform(x, sample_rate)


def apply_fiber(w: SampledWaveform, fiber: FiberConfig) -> SampledWaveform:
    """Quadratic spectral phase ``exp(-j beta2/2 (2 pi f)^2 L)`` (circular)."""
    if fiber.length == 0:
        return w
    X = np.fft.fft(w.samples)
    f = np.fft.fftfreq(len(w), w.dt)
    return w.with_samples(np.fft.ifft(X * np.exp(-1j * fiber.phase(f))))


# --------------------------------------------------------------------------
# single shot


@dataclass
class ShotSamples:
    """Sparse transfer-function samples from one calibration shot.

    Arrays are indexed by probe point ``p``: ``f`` (baseband Hz), ``mu`` (tone
    index), ``H_I``/``H_Q`` (P, N) and relative standard errors ``unc`` (P, N).
    """

    f: np.ndarray
    mu: np.ndarray
    H_I: np.ndarray
    H_Q: np.ndarray
    unc: np.ndarray
    offset: float
    meta: dict = field(default_factory=dict)
    missing: list = field(default_factory=list)
    collisions: int = 0
    starved: list = field(default_factory=list)


def probe_points(line_freqs, f_lo, B: float, guard: float = 10e6):
    """Assign (line, tone) pairs to baseband frequencies and drop collisions.

    Returns ``(phi, line_index, tone_index, n_collisions)`` for the usable
    pairs. Two pairs collide when their baseband magnitudes |phi| lie within
    ``guard`` (a real record sees +phi and -phi together).
    """
    g = np.asarray(line_freqs, dtype=float)
    fl = np.asarray(f_lo, dtype=float)
    phi = (g[:, None] - fl[None, :]).ravel()
    li = np.repeat(np.arange(g.size), fl.size)
    mi = np.tile(np.arange(fl.size), g.size)
    keep = np.abs(phi) <= B * (1 + 1e-12)
    phi, li, mi = phi[keep], li[keep], mi[keep]
    a = np.abs(phi)
    order = np.argsort(a)
    sa = a[order]
    bad = np.zeros(sa.size, dtype=bool)
    close = np.diff(sa) < guard
    bad[:-1] |= close
    bad[1:] |= close
    bad |= sa < guard / 2  # a pair at DC overlaps its own mirror
    good = np.sort(order[~bad])
    return phi[good], li[good], mi[good], int(bad.sum())


def plan_orw(f_lo, B: float, f_ORW: float, power: float, offsets, df: float,
             seed: int | None = 0) -> ORWConfig:
    """ORW covering ``[f_1 - B, f_M + B]`` with the start chosen on the ``df`` grid
    to maximize the usable probe points summed over ``offsets``.

    Line phases are uniform random (fixed by ``seed``) to keep the PAPR low;
    ``seed=None`` gives flat phases.
    """
    f_lo = np.asarray(f_lo, dtype=float)
    lo, hi = f_lo.min() - B, f_lo.max() + B
    n_lines = int(np.ceil((hi - lo) / f_ORW)) + 2
    best = (-1, -1, 0.0)
    for r in np.arange(0.0, f_ORW, df):
        f0 = np.floor(lo / f_ORW) * f_ORW + r
        g0 = f0 + f_ORW * np.arange(n_lines)
        counts = [probe_points(g0 + o, f_lo, B)[0].size for o in offsets]
        score = (min(counts), sum(counts), -r)
        if score[:2] > best[:2]:
            best = (score[0], score[1], f0)
    ph = None if seed is None else tuple(np.random.default_rng(seed).uniform(0, 2 * np.pi, n_lines))
    return ORWConfig(f_ORW, n_lines, power, ph, f_first=float(best[2]))


def calibrate_single_shot(records: ChannelRecords, orw: ORWConfig, f_lo, offset: float = 0.0,
                          B: float | None = None, guard: float = 10e6, snr_min_dB: float = 10.0,
                          amplitudes=None) -> ShotSamples:
    """Estimate H at every uniquely assigned probe frequency of one shot.

    Parameters
    ----------
    records : ChannelRecords
        Digitized response to the ORW.
    orw : ORWConfig
        The known reference (line phases treated as exact).
    f_lo : sequence of float
        Comb tone offsets relative to ``f_ref``.
    offset : float
        Frequency offset between ORW and LO for this shot.
    snr_min_dB : float
        Points whose estimated SNR falls below this are reported and dropped.
    """
    B = records.metadata.get("B") if B is None else B
    if B is None:
        raise ValueError("ADC bandwidth B unknown")
    K, df, T = records.n_samples, records.df, records.duration
    g = orw.line_frequencies(offset)
    c = orw.line_amplitudes() if amplitudes is None else np.asarray(amplitudes, complex)
    phi, li, mi, n_col = probe_points(g, f_lo, B, guard)
    kb = phi / df
    if np.any(np.abs(kb - np.round(kb)) > 1e-6):
        raise ValueError("probe frequencies are not on the record grid; choose T so that "
                         "f_ORW*T, f_FSR*T and offset*T are integers")
    kb = np.round(kb).astype(int)
    cabs = np.abs(c[li])
    miss = cabs <= 1e-12 * np.max(np.abs(c))
    missing = [float(p) for p in phi[miss]]
    phi, li, mi, kb = phi[~miss], li[~miss], mi[~miss], kb[~miss]

    YI, YQ = records.spectra()
    idx = kb % K
    ref = c[li] * T
    HI = (YI[:, idx] / ref).T
    HQ = (YQ[:, idx] / ref).T

    # noise floor from in-band bins not hit by any line
    fk = np.fft.fftfreq(K, 1 / records.f_s)
    empty = np.abs(fk) <= B
    occ = (g[:, None] - np.asarray(f_lo, float)[None, :]).ravel()
    occ = np.round(occ[np.abs(occ) <= B * (1 + 1e-12)] / df).astype(int) % K
    empty[occ] = False
    empty[(-occ) % K] = False
    empty[0] = False
    if empty.any():
        nI = np.sqrt(np.mean(np.abs(YI[:, empty]) ** 2, axis=1))
        nQ = np.sqrt(np.mean(np.abs(YQ[:, empty]) ** 2, axis=1))
    else:
        nI = nQ = np.zeros(records.N)
    sig = 0.5 * (np.abs(YI[:, idx]) + np.abs(YQ[:, idx])).T
    unc = (0.5 * (nI + nQ))[None, :] / np.where(sig > 0, sig, np.inf)
    starved_mask = np.any(unc > 10 ** (-snr_min_dB / 20), axis=1)
    starved = [float(p) for p in phi[starved_mask]]
    if starved:
        logger.warning("%d probe points below %.1f dB SNR dropped", len(starved), snr_min_dB)
    keep = ~starved_mask
    meta = dict(f_lo=[float(v) for v in f_lo], B=float(B), f_ORW=float(orw.f_ORW),
                f_ref=float(records.metadata.get("f_ref", 0.0)),
                f_FSR=float(records.metadata.get("f_FSR", np.diff(f_lo)[0] if len(f_lo) > 1 else 0.0)))
    return ShotSamples(phi[keep], mi[keep], HI[keep], HQ[keep], unc[keep], float(offset), meta,
                       missing, n_col, starved)


# --------------------------------------------------------------------------
# merging


def _interp_complex(x, H, xq):
    """Cubic interpolation of magnitude and unwrapped phase along axis 0."""
    if x.size == 1:
        return np.repeat(H, xq.size, axis=0)
    mag = np.abs(H)
    ph = np.unwrap(np.angle(H), axis=0)
    xq = np.clip(xq, x[0], x[-1])
    if x.size >= 4:
        return interpolate.CubicSpline(x, mag, axis=0)(xq) * np.exp(
            1j * interpolate.CubicSpline(x, ph, axis=0)(xq))
    m = np.stack([np.interp(xq, x, mag[:, i]) for i in range(mag.shape[1])], axis=1)
    p = np.stack([np.interp(xq, x, ph[:, i]) for i in range(ph.shape[1])], axis=1)
    return m * np.exp(1j * p)


def _fit_separable_phase(C: np.ndarray, n_iter: int = 50):
    """Fit ``C[nu, mu] ~ |C| exp(j(alpha[nu] + beta[mu]))`` with alpha[0] = 0."""
    N, M = C.shape
    alpha = np.zeros(N)
    beta = np.angle(C[0])
    for _ in range(n_iter):
        alpha = np.angle(np.sum(C * np.exp(-1j * beta)[None, :], axis=1))
        alpha -= alpha[0]
        beta = np.angle(np.sum(C * np.exp(-1j * alpha)[:, None], axis=0))
    return alpha, beta


def align_shot(shot: ShotSamples, anchor: ShotSamples):
    """Per-shot phase factors ``exp(j(alpha_nu + beta_mu))`` relative to the anchor.

    Returns ``(alpha, beta, aligned)``; tones without overlap with the anchor
    are not aligned (``aligned[mu]`` False) and their ``beta`` is 0.
    """
    N = shot.H_I.shape[1]
    M = len(shot.meta["f_lo"])
    C = np.zeros((N, M), dtype=complex)
    for mu in range(M):
        a = anchor.mu == mu
        s = shot.mu == mu
        if a.sum() < 2 or not s.any():
            continue
        fa = anchor.f[a]
        oa = np.argsort(fa)
        fa = fa[oa]
        fs = shot.f[s]
        inside = (fs >= fa[0]) & (fs <= fa[-1])
        if not inside.any():
            continue
        for Hs, Ha in ((shot.H_I, anchor.H_I), (shot.H_Q, anchor.H_Q)):
            ref = _interp_complex(fa, Ha[a][oa], fs[inside])
            C[:, mu] += np.sum(Hs[s][inside] * np.conj(ref), axis=0)
    if not np.any(np.abs(C) > 0):
        raise ValueError("shot shares no frequency span with the anchor; cannot align")
    used = np.abs(C).sum(axis=0) > 0
    alpha, beta_u = _fit_separable_phase(C[:, used])
    beta = np.zeros(M)
    beta[used] = beta_u
    return alpha, beta, used


def merge_multishot(shots: list, anchor: int = 0, f_tol: float = 1.0) -> CalibrationRecord:
    """Merge shots onto the union grid after removing per-shot drift.

    Each non-anchor shot is rotated by ``exp(-j(alpha_nu + beta_mu))`` fitted
    against the anchor (interpolated to the shot's points). Points measured
    by several shots are averaged; the relative standard error is the
    inter-shot spread over sqrt(K), or the single-shot estimate when K = 1.
    Every tone's series is finally interpolated onto the union grid.
    """
    if not shots:
        raise ValueError("need at least one shot")
    ref = shots[anchor]
    M = len(ref.meta["f_lo"])
    N = ref.H_I.shape[1]
    aligned = []
    drifts = []
    for i, s in enumerate(shots):
        if i == anchor:
            aligned.append((s.f, s.mu, s.H_I, s.H_Q, s.unc))
            drifts.append(([0.0] * N, [0.0] * M))
            continue
        alpha, beta, ok = align_shot(s, ref)
        keep = ok[s.mu]
        if not keep.all():
            logger.info("shot %d: %d points on unaligned tones dropped", i, int((~keep).sum()))
        rot = np.exp(-1j * (alpha[None, :] + beta[s.mu[keep]][:, None]))
        aligned.append((s.f[keep], s.mu[keep], s.H_I[keep] * rot, s.H_Q[keep] * rot, s.unc[keep]))
        drifts.append((alpha.tolist(), beta.tolist()))

    f_all = np.concatenate([a[0] for a in aligned])
    mu_all = np.concatenate([a[1] for a in aligned])
    HI_all = np.concatenate([a[2] for a in aligned])
    HQ_all = np.concatenate([a[3] for a in aligned])
    u_all = np.concatenate([a[4] for a in aligned])
    fkey = np.round(f_all / f_tol).astype(np.int64)

    per_mu = []
    for mu in range(M):
        m = mu_all == mu
        if not m.any():
            raise ValueError(f"no calibration points for tone {mu + 1}")
        keys, inv, cnt = np.unique(fkey[m], return_inverse=True, return_counts=True)
        G = keys.size
        HI = np.zeros((G, N), complex)
        HQ = np.zeros((G, N), complex)
        np.add.at(HI, inv, HI_all[m])
        np.add.at(HQ, inv, HQ_all[m])
        HI /= cnt[:, None]
        HQ /= cnt[:, None]
        dev = np.zeros((G, N))
        np.add.at(dev, inv, 0.5 * (np.abs(HI_all[m] - HI[inv]) ** 2 + np.abs(HQ_all[m] - HQ[inv]) ** 2))
        uprop = np.zeros((G, N))
        np.add.at(uprop, inv, u_all[m] ** 2)
        mag = 0.5 * (np.abs(HI) + np.abs(HQ))
        spread = np.sqrt(dev / np.maximum(cnt - 1, 1)[:, None] / cnt[:, None]) / np.where(mag > 0, mag, np.inf)
        single = np.sqrt(uprop) / cnt[:, None]
        unc = np.where((cnt > 1)[:, None], spread, single)
        per_mu.append((keys * f_tol, HI, HQ, unc))

    grid = np.unique(np.concatenate([p[0] for p in per_mu]))
    HI_g = np.zeros((grid.size, N, M), complex)
    HQ_g = np.zeros((grid.size, N, M), complex)
    U_g = np.zeros((grid.size, N, M))
    f_orw = ref.meta.get("f_ORW", np.inf)
    gaps = []
    for mu, (fm, HI, HQ, unc) in enumerate(per_mu):
        HI_g[:, :, mu] = _interp_complex(fm, HI, grid)
        HQ_g[:, :, mu] = _interp_complex(fm, HQ, grid)
        for nu in range(N):
            U_g[:, nu, mu] = np.interp(grid, fm, unc[:, nu])
        big = np.nonzero(np.diff(fm) > f_orw * (1 + 1e-9))[0]
        gaps += [(mu, float(fm[i]), float(fm[i + 1])) for i in big]
    if gaps:
        logger.warning("%d calibration gaps wider than f_ORW; phase unwrapping there is unreliable",
                       len(gaps))
    u_dB = float(10 * np.log10(np.mean(U_g ** 2))) if np.any(U_g > 0) else -np.inf
    meta = dict(ref.meta, n_shots=len(shots), anchor=anchor, shot_drifts=drifts, gaps=gaps,
                source="multishot")
    return CalibrationRecord(grid, HI_g, HQ_g, U_g, u_dB, meta)


def remove_fiber_phase(cal_1: CalibrationRecord, cal_2: CalibrationRecord,
                       cal_12: CalibrationRecord) -> CalibrationRecord:
    """Cancel the fiber phases of three calibrations (fiber 1, fiber 2, both).

    Phase = arg(H_1) + arg(H_2) - arg(H_12), computed as one complex product
    (exact bin-wise) and unwrapped along the grid; magnitude from ``cal_12``.
    """
    for c in (cal_2, cal_12):
        if c.f_grid.shape != cal_1.f_grid.shape or not np.allclose(c.f_grid, cal_1.f_grid, rtol=0, atol=1e-3):
            raise ValueError("calibration grids do not match")
        if c.H_I.shape != cal_1.H_I.shape:
            raise ValueError("calibration shapes do not match")
    out = []
    for H1, H2, H12 in ((cal_1.H_I, cal_2.H_I, cal_12.H_I), (cal_1.H_Q, cal_2.H_Q, cal_12.H_Q)):
        ph = np.unwrap(np.angle(H1 * H2 * np.conj(H12)), axis=0)
        out.append(np.abs(H12) * np.exp(1j * ph))
    unc = np.sqrt(cal_1.uncertainty ** 2 + cal_2.uncertainty ** 2 + cal_12.uncertainty ** 2)
    u_dB = float(10 * np.log10(np.mean(unc ** 2))) if np.any(unc > 0) else -np.inf
    meta = dict(cal_12.metadata, source="fiber_removed")
    return CalibrationRecord(cal_1.f_grid, out[0], out[1], unc, u_dB, meta)


# --------------------------------------------------------------------------
# persistence


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if np.isfinite(f) else str(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def save_calibration(path, cal: CalibrationRecord, config_hash: str = "") -> Path:
    """Write ``<path>.json`` (header) and ``<path>.bin`` (little-endian f64 payload).

    Payload order: f_grid, H_I (re, im interleaved), H_Q, uncertainty.
    """
    path = Path(path)
    stem = path.with_suffix("")
    n, N, M = cal.H_I.shape

    def ri(a):
        out = np.empty(a.shape + (2,))
        out[..., 0], out[..., 1] = a.real, a.imag
        return out.ravel()

    payload = np.concatenate([cal.f_grid, ri(cal.H_I), ri(cal.H_Q), cal.uncertainty.ravel()])
    blob = payload.astype("<f8").tobytes()
    header = dict(format="oawm-calibration", version=CAL_FORMAT_VERSION, n=n, N=N, M=M,
                  uncertainty_dB=_jsonable(cal.uncertainty_dB), metadata=_jsonable(cal.metadata),
                  config_hash=config_hash, payload_sha256=hashlib.sha256(blob).hexdigest())
    stem.with_suffix(".bin").write_bytes(blob)
    stem.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return stem.with_suffix(".json")


def load_calibration(path) -> CalibrationRecord:
    stem = Path(path).with_suffix("")
    header = json.loads(stem.with_suffix(".json").read_text())
    if header.get("format") != "oawm-calibration":
        raise ValueError(f"{path}: not a calibration header")
    if header["version"] != CAL_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported calibration version {header['version']}")
    blob = stem.with_suffix(".bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != header["payload_sha256"]:
        raise ValueError(f"{path}: payload checksum mismatch")
    p = np.frombuffer(blob, dtype="<f8")
    n, N, M = header["n"], header["N"], header["M"]
    sz = n * N * M
    f = p[:n]
    HI = p[n:n + 2 * sz].reshape(n, N, M, 2)
    HQ = p[n + 2 * sz:n + 4 * sz].reshape(n, N, M, 2)
    U = p[n + 4 * sz:n + 5 * sz].reshape(n, N, M)
    u_dB = float(header["uncertainty_dB"])
    return CalibrationRecord(f, HI[..., 0] + 1j * HI[..., 1], HQ[..., 0] + 1j * HQ[..., 1], U,
                             u_dB, header["metadata"])

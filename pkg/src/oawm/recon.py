"""
Matrix-based reconstruction of the broadband spectrum from the 2N records.

Per frequency bin ``f`` in [0, B] the records obey ``y(f) = H(f) x(f)`` with
``y = [I(f); Q(f)]`` and ``x = [a(f + f_mu); conj(a(-f + f_mu))]``. Solving for
``x`` gives every spectral slice on [-B, B] around its tone. Slices are shifted
back by ``f_mu`` and stitched on a common grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, optimize

from .signalkit import Spectrum, SampledWaveform, idft
from .types import CalibrationRecord, ChannelRecords, DriftParams, TransferMatrixSet

logger = logging.getLogger(__name__)

__all__ = ["TransferMatrixSet", "ReconstructionOptions", "ReconstructionResult", "build_matrix",
           "interpolate_calibration", "invert_matrix_set", "estimate_drift", "stitch",
           "reconstruct", "apply_inverse"]


# --------------------------------------------------------------------------
# matrix assembly


def interpolate_calibration(cal: CalibrationRecord, freqs, max_extrapolation: float = 0.0):
    """Cubic interpolation of magnitude and unwrapped phase onto ``freqs``.

    Points beyond the calibration span by more than ``max_extrapolation`` raise
    ``ValueError``; points within that margin hold the edge value.
    """
    freqs = np.asarray(freqs, dtype=float)
    fg = cal.f_grid
    lo, hi = fg[0], fg[-1]
    span_tol = 1e-9 * max(abs(lo), abs(hi), 1.0)
    if freqs.size and (freqs.min() < lo - max_extrapolation - span_tol
                       or freqs.max() > hi + max_extrapolation + span_tol):
        raise ValueError(
            f"frequencies [{freqs.min():g}, {freqs.max():g}] Hz exceed calibration span "
            f"[{lo:g}, {hi:g}] Hz (extrapolation limit {max_extrapolation:g} Hz)")
    fc = np.clip(freqs, lo, hi)
    out = []
    for H in (cal.H_I, cal.H_Q):
        if fg.size == 1:
            out.append(np.broadcast_to(H, (freqs.size,) + H.shape[1:]).copy())
            continue
        mag = np.abs(H)
        ph = np.unwrap(np.angle(H), axis=0)
        kind = "cubic" if fg.size >= 4 else "linear"
        if kind == "cubic":
            m = interpolate.CubicSpline(fg, mag, axis=0)(fc)
            p = interpolate.CubicSpline(fg, ph, axis=0)(fc)
        else:
            m = interpolate.interp1d(fg, mag, axis=0)(fc)
            p = interpolate.interp1d(fg, ph, axis=0)(fc)
        out.append(m * np.exp(1j * p))
    return out[0], out[1]


def build_matrix(cal: CalibrationRecord, drift: DriftParams | None, f_grid,
                 max_extrapolation: float = 0.0) -> TransferMatrixSet:
    """Block matrix with drift factors ``exp(j(phi_F[nu] + phi_LO[mu]))`` applied."""
    f = np.asarray(f_grid, dtype=float)
    if np.any(f < 0):
        raise ValueError("f_grid must be non-negative")
    drift = DriftParams.zero(cal.N) if drift is None else drift
    if drift.N != cal.N:
        raise ValueError("drift has the wrong channel count")
    HIp, HQp = interpolate_calibration(cal, f, max_extrapolation)
    HIn, HQn = interpolate_calibration(cal, -f, max_extrapolation)
    D = drift.factors(cal.metadata.get("f_FSR", 0.0), cal.M)[None]
    return TransferMatrixSet.from_blocks(f, HIp * D, HQp * D, HIn * D, HQn * D)


def _with_drift(H: np.ndarray, N: int, M: int, phi_F, phi_LO) -> np.ndarray:
    """Apply drift factors to an undrifted block matrix (n, 2N, 2M)."""
    P = np.exp(1j * (np.asarray(phi_F)[:, None] + np.asarray(phi_LO)[None, :]))
    out = H.copy()
    out[:, :N, :M] *= P
    out[:, N:, :M] *= P
    out[:, :N, M:] *= np.conj(P)
    out[:, N:, M:] *= np.conj(P)
    return out


def invert_matrix_set(H: TransferMatrixSet, rcond_threshold: float = 1e-6,
                      tikhonov: float = 0.0) -> TransferMatrixSet:
    """Per-bin inverse (N == M), least-squares pseudo-inverse (N > M) or
    Tikhonov-regularized inverse.

    Bins whose reciprocal condition number falls below ``rcond_threshold``
    are flagged; they are still inverted and the caller decides how to weight
    them.
    """
    A = H.matrix
    if H.N < H.M:
        raise ValueError("need at least as many channels as comb tones (N >= M)")
    s = np.linalg.svd(A, compute_uv=False)
    with np.errstate(divide="ignore"):
        cond = s[:, 0] / s[:, -1]
    rcond = 1.0 / cond
    flagged = ~(rcond >= rcond_threshold)
    if tikhonov > 0:
        Ah = np.conj(np.swapaxes(A, 1, 2))
        lam = tikhonov * (s[:, :1] ** 2)[:, :, None]
        eye = np.eye(A.shape[2])[None]
        inv = np.linalg.solve(Ah @ A + lam * eye, Ah)
    elif H.N == H.M:
        inv = np.empty((A.shape[0], A.shape[2], A.shape[1]), dtype=complex)
        ok = np.isfinite(cond) & (s[:, -1] > 0)
        if ok.any():
            inv[ok] = np.linalg.inv(A[ok])
        if (~ok).any():
            inv[~ok] = np.linalg.pinv(A[~ok])
    else:
        inv = np.linalg.pinv(A)
    if flagged.any():
        logger.warning("%d of %d bins are ill-conditioned (rcond < %g)", int(flagged.sum()),
                       flagged.size, rcond_threshold)
    return TransferMatrixSet(H.f_grid, H.matrix, cond, inv, flagged)


def apply_inverse(inv: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Batched ``x[k] = inv[k] @ y[k]``."""
    return np.einsum("kij,kj->ki", inv, y)


# --------------------------------------------------------------------------
# slice bookkeeping


@dataclass(frozen=True)
class _Grid:
    df: float
    kB: int              # highest baseband bin used
    jF: int              # FSR in bins
    j_lo: np.ndarray     # tone offsets in bins

    @property
    def M(self) -> int:
        return self.j_lo.size


def _grid(records: ChannelRecords, f_lo, f_FSR: float, B: float) -> _Grid:
    df = records.df
    kB = int(np.floor(B / df + 1e-9))
    kB = min(kB, (records.n_samples - 1) // 2)
    j = np.asarray(f_lo, dtype=float) / df
    if np.any(np.abs(j - np.round(j)) > 1e-6):
        raise ValueError("comb tones must lie on the record frequency grid (1/T)")
    jF = f_FSR / df if len(f_lo) > 1 else 0.0
    if abs(jF - round(jF)) > 1e-6:
        raise ValueError("f_FSR must be a multiple of the record bin spacing 1/T")
    return _Grid(df, kB, int(round(jF)), np.round(j).astype(int))


def _record_vectors(records: ChannelRecords, kB: int) -> np.ndarray:
    """Stack ``[I(f_k); Q(f_k)]`` for k = 0..kB, shape (kB+1, 2N)."""
    YI, YQ = records.spectra()
    return np.concatenate([YI[:, : kB + 1], YQ[:, : kB + 1]], axis=0).T


def _slices_from_solution(x: np.ndarray, M: int) -> np.ndarray:
    """Map per-bin solutions (kB+1, 2M) to slices on j = -kB..kB, shape (M, 2kB+1)."""
    kB = x.shape[0] - 1
    top = x[:, :M].T
    bot = np.conj(x[:, M:].T)
    out = np.empty((M, 2 * kB + 1), dtype=complex)
    out[:, kB:] = top
    out[:, :kB] = bot[:, :0:-1]
    out[:, kB] = 0.5 * (top[:, 0] + bot[:, 0])
    return out


def _slice_variances(inv: np.ndarray, M: int, record_var=None) -> np.ndarray:
    """Noise gain of every slice bin for white record noise.

    ``record_var`` holds the relative noise variance of the 2N records in
    ``[I_1..I_N, Q_1..Q_N]`` order; equal when omitted.
    """
    g = np.abs(inv) ** 2
    if record_var is not None:
        g = g * np.asarray(record_var, dtype=float)[None, None, :]
    rn = np.sum(g, axis=2)  # (kB+1, 2M)
    kB = rn.shape[0] - 1
    out = np.empty((M, 2 * kB + 1))
    out[:, kB:] = rn[:, :M].T
    out[:, :kB] = rn[:, M:].T[:, :0:-1]
    out[:, kB] = 0.25 * (rn[0, :M] + rn[0, M:])
    return out


# --------------------------------------------------------------------------
# stitching


def _edge_taper(j: np.ndarray, kB: int, or_width: int, has_lower: bool, has_upper: bool,
                fraction: float) -> np.ndarray:
    """Raised-cosine ramp over the outer ``fraction`` of each overlap region."""
    w = np.ones(j.size)
    L = fraction * or_width
    if L <= 0:
        return w
    for has, d in ((has_upper, kB - j), (has_lower, j + kB)):
        if not has:
            continue
        m = d < L
        w[m] = np.minimum(w[m], 0.5 * (1 - np.cos(np.pi * np.clip(d[m], 0, None) / L)))
    # keep the exact edge from being dropped when the ramp is shorter than a bin
    return w


def stitch(slices: np.ndarray, offsets, kB: int, df: float, variances: np.ndarray | None = None,
           weights_mode: str = "mrc", taper_fraction: float = 0.1,
           return_weights: bool = False):
    """Combine M slices (each on j = -kB..kB, tone at bin ``offsets[mu]``).

    Parameters
    ----------
    slices : (M, 2kB+1) complex
    offsets : sequence of int
        Tone positions in bins on the common grid.
    variances : (M, 2kB+1), optional
        Noise gain per slice bin; required for ``weights_mode="mrc"``.
    weights_mode : {"mrc", "equal"}

    Returns
    -------
    Spectrum, optionally with the (M, n) weight array on the common grid.
    """
    slices = np.atleast_2d(slices)
    M = slices.shape[0]
    off = np.asarray(offsets, dtype=int)
    order = np.argsort(off)
    if np.any(np.diff(off[order]) > 2 * kB + 1):
        raise ValueError("gap between slices: ADC bandwidth below half the comb spacing")
    if weights_mode not in ("mrc", "equal"):
        raise ValueError("weights_mode must be 'mrc' or 'equal'")
    if weights_mode == "mrc" and variances is None:
        raise ValueError("MRC stitching needs per-bin noise variances")
    j = np.arange(-kB, kB + 1)
    g0 = off.min() - kB
    n = off.max() - off.min() + 2 * kB + 1
    num = np.zeros(n, dtype=complex)
    den = np.zeros(n)
    W = np.zeros((M, n))
    for rank, mu in enumerate(order):
        lower = order[rank - 1] if rank > 0 else None
        upper = order[rank + 1] if rank + 1 < M else None
        or_w = 0
        if upper is not None:
            or_w = max(or_w, 2 * kB - (off[upper] - off[mu]))
        if lower is not None:
            or_w = max(or_w, 2 * kB - (off[mu] - off[lower]))
        w = _edge_taper(j, kB, or_w, lower is not None, upper is not None, taper_fraction)
        if weights_mode == "mrc":
            v = np.asarray(variances[mu], dtype=float)
            w = w / np.where(v > 0, v, np.inf)
        idx = off[mu] - g0 + j
        W[mu, idx] = w
    den = W.sum(axis=0)
    if np.any(den <= 0):
        # zero-weight points at outer OR edges: fall back to equal weights there
        bad = den <= 0
        for mu in range(M):
            idx = off[mu] - g0 + j
            cover = np.zeros(n, dtype=bool)
            cover[idx] = True
            W[mu, bad & cover] = 1.0
        den = W.sum(axis=0)
    W /= den
    for mu in range(M):
        idx = off[mu] - g0 + j
        num[idx] += W[mu, idx] * slices[mu]
    spec = Spectrum(num, g0 * df, df)
    return (spec, W) if return_weights else spec


# --------------------------------------------------------------------------
# drift estimation


@dataclass
class _ORProblem:
    H: np.ndarray        # undrifted matrices at the needed bins (nb, 2N, 2M)
    y: np.ndarray        # record vectors at those bins (nb, 2N)
    pairs: list          # per OR: (mu, idx_a, use_top_a, mu+1, idx_b, use_top_b)
    N: int
    M: int
    energy: float
    leak_idx: np.ndarray = None   # bins carrying pilots
    leak_mask: np.ndarray = None  # (n_leak, 2M) True where a pilot must not appear
    leak_energy: float = 0.0


def _slice_value_index(j: np.ndarray):
    """Bin index and half (top/conj) that delivers slice baseband bin j."""
    return np.abs(j), j >= 0


def _pilot_entries(pilot_freqs, grid: _Grid) -> dict:
    """Record bin -> solution entries that legitimately hold pilot energy."""
    out: dict = {}
    for g in np.atleast_1d(np.asarray(pilot_freqs, dtype=float)):
        jg = int(round(g / grid.df))
        for mu in range(grid.M):
            j = jg - int(grid.j_lo[mu])
            if abs(j) > grid.kB:
                continue
            ent = out.setdefault(abs(j), set())
            if j >= 0:
                ent.add(mu)
            if j <= 0:
                ent.add(grid.M + mu)
    return out


def _build_or_problem(Hset: TransferMatrixSet, y_all: np.ndarray, grid: _Grid,
                      order: np.ndarray, or_bins: int, rel_threshold: float = 0.0,
                      pilot_freqs=()) -> _ORProblem:
    N, M, kB = Hset.N, Hset.M, grid.kB
    inv0 = np.linalg.pinv(Hset.matrix)
    x0 = apply_inverse(inv0, y_all)
    sl0 = _slices_from_solution(x0, M)
    pairs_j = []
    needed = set()
    energy = 0.0
    for a, b in zip(order[:-1], order[1:]):
        d = grid.j_lo[b] - grid.j_lo[a]
        ja = np.arange(max(-kB, d - kB), kB + 1)
        if ja.size == 0:
            continue
        jb = ja - d
        e = np.abs(sl0[a, ja + kB]) ** 2 + np.abs(sl0[b, jb + kB]) ** 2
        keep = np.argsort(e)[::-1][: or_bins]
        keep = keep[e[keep] >= rel_threshold * e[keep[0]]]
        ja, jb = ja[keep], jb[keep]
        energy += float(e[keep].sum())
        pairs_j.append((a, ja, b, jb))
        needed.update(np.abs(ja).tolist())
        needed.update(np.abs(jb).tolist())
    pil = _pilot_entries(pilot_freqs, grid) if len(pilot_freqs) else {}
    needed.update(pil.keys())
    bins = np.array(sorted(needed), dtype=int)
    pos = {k: i for i, k in enumerate(bins)}
    pairs = []
    for a, ja, b, jb in pairs_j:
        ia = np.array([pos[abs(v)] for v in ja])
        ib = np.array([pos[abs(v)] for v in jb])
        pairs.append((a, ia, ja >= 0, b, ib, jb >= 0))
    leak_idx = np.array([pos[k] for k in sorted(pil)], dtype=int)
    leak_mask = np.ones((leak_idx.size, 2 * M), dtype=bool)
    for r, k in enumerate(sorted(pil)):
        leak_mask[r, sorted(pil[k])] = False
    leak_energy = float(np.sum(np.abs(x0[sorted(pil)]) ** 2)) if pil else 0.0
    return _ORProblem(Hset.matrix[bins], y_all[bins], pairs, N, M, energy, leak_idx, leak_mask,
                      leak_energy)


def _solve(prob: _ORProblem, phi_F: np.ndarray) -> np.ndarray:
    Hd = _with_drift(prob.H, prob.N, prob.M, phi_F, np.zeros(prob.M))
    if prob.N == prob.M:
        return np.linalg.solve(Hd, prob.y[..., None])[..., 0]
    return apply_inverse(np.linalg.pinv(Hd), prob.y)


def _or_values(prob: _ORProblem, phi_F: np.ndarray, x: np.ndarray | None = None):
    """Slice values on both sides of every OR for drift phi_F and tau_LO = 0."""
    x = _solve(prob, phi_F) if x is None else x
    M = prob.M
    sa, sb = [], []
    for a, ia, ta, b, ib, tb in prob.pairs:
        va = np.where(ta, x[ia, a], np.conj(x[ia, M + a]))
        vb = np.where(tb, x[ib, b], np.conj(x[ib, M + b]))
        sa.append(va)
        sb.append(vb)
    return sa, sb


def _leak_values(prob: _ORProblem, x: np.ndarray) -> np.ndarray:
    if prob.leak_idx is None or prob.leak_idx.size == 0:
        return np.zeros(0, dtype=complex)
    return x[prob.leak_idx][prob.leak_mask]


def _profile_cost(prob: _ORProblem, phi_F: np.ndarray):
    """OR disagreement minimized over the comb timing in closed form, plus the
    normalized pilot leakage when pilot frequencies are known.

    An unmodelled tau_LO leaves slice mu rotated by exp(j 2 pi f_FSR tau mu),
    i.e. every adjacent pair by the same relative phase, so the optimum is the
    argument of the summed cross products. Returns (cost, relative rotation psi).
    """
    x = _solve(prob, phi_F)
    sa, sb = _or_values(prob, phi_F, x)
    cross = sum(np.sum(a * np.conj(b)) for a, b in zip(sa, sb))
    tot = sum(np.sum(np.abs(a) ** 2) + np.sum(np.abs(b) ** 2) for a, b in zip(sa, sb))
    cost = max((tot - 2 * abs(cross)) / max(tot, 1e-300), 0.0)
    if prob.leak_energy > 0:
        cost += float(np.sum(np.abs(_leak_values(prob, x)) ** 2)) / prob.leak_energy
    return float(cost), float(np.angle(cross))


def estimate_drift(records: ChannelRecords, cal: CalibrationRecord, or_bins: int = 256,
                   n_scan: int = 64, max_iter: int = 8, tol: float = 1e-6,
                   max_extrapolation: float = 0.0, or_rel_threshold: float = 1e-2,
                   pilot_freqs=(), return_info: bool = False):
    """Estimate ``phi_F`` (channel 1 fixed to 0) and ``tau_LO`` from the overlap
    regions.

    The cost is the normalized squared disagreement between the two
    down-converted copies of each overlap-region bin. ``tau_LO`` enters only
    as a common rotation between adjacent slices and is solved in closed form
    for every candidate ``phi_F``; the channel phases are found by alternating
    scans over [0, 2 pi) with bounded golden-section refinement, followed by a
    joint Levenberg-Marquardt polish on the stacked residuals.

    With ``pilot_freqs`` the cost also includes the energy that the pilots
    leave in solution entries other than their own slice positions. Isolated
    tones in an otherwise empty overlap region are nearly blind to ``phi_F``
    when the channels are evenly delayed and the comb is flat, and the
    leakage term restores first-order sensitivity.
    """
    meta = cal.metadata
    f_lo, f_FSR, B = meta["f_lo"], meta["f_FSR"], meta["B"]
    N, M = cal.N, cal.M
    if records.N != N:
        raise ValueError("records and calibration disagree on N")
    if M < 2:
        raise ValueError("drift estimation needs at least two comb tones (no overlap regions)")
    if B < f_FSR / 2:
        raise ValueError("B must exceed f_FSR/2 for overlap regions to exist")
    grid = _grid(records, f_lo, f_FSR, B)
    k = np.arange(grid.kB + 1)
    Hset = build_matrix(cal, None, k * grid.df, max_extrapolation)
    y = _record_vectors(records, grid.kB)
    order = np.argsort(grid.j_lo)
    prob = _build_or_problem(Hset, y, grid, order, or_bins, or_rel_threshold, pilot_freqs)
    noise_ref = float(np.mean(np.abs(y) ** 2)) * 1e-20
    if prob.energy <= noise_ref or not prob.pairs:
        raise ValueError("no signal energy in the overlap regions; add pilot tones so "
                         "redundant components exist for drift estimation")

    phi = np.zeros(N)
    grid_pts = np.linspace(0, 2 * np.pi, n_scan, endpoint=False)
    step = 2 * np.pi / n_scan
    prev = np.inf
    it = 0
    # coarse stage: alternating 1-D scans with bounded golden-section refinement
    for it in range(1, max_iter + 1):
        for nu in range(1, N):
            def c1(p, nu=nu):
                q = phi.copy()
                q[nu] = p
                return _profile_cost(prob, q)[0]
            if it == 1:
                vals = np.array([c1(p) for p in grid_pts])
                p0, half = grid_pts[int(np.argmin(vals))], step
            else:
                p0, half = phi[nu], step / 2
            res = optimize.minimize_scalar(c1, bounds=(p0 - half, p0 + half), method="bounded",
                                           options={"xatol": 1e-6})
            phi[nu] = float(np.angle(np.exp(1j * res.x)))
        cost = _profile_cost(prob, phi)[0]
        if prev - cost < 1e-3 * prev:
            break
        prev = cost

    # joint Gauss-Newton polish on the stacked OR residuals
    if N > 1:
        def resid(p):
            x = _solve(prob, np.concatenate([[0.0], p]))
            sa, sb = _or_values(prob, None, x)
            a, b = np.concatenate(sa), np.concatenate(sb)
            rot = np.exp(-1j * np.angle(np.vdot(b, a)))
            r = (a - b / rot) / np.sqrt(max(prob.energy, 1e-300))
            if prob.leak_energy > 0:
                r = np.concatenate([r, _leak_values(prob, x) / np.sqrt(prob.leak_energy)])
            return np.concatenate([r.real, r.imag])
        res = optimize.least_squares(resid, phi[1:], method="lm",
                                     xtol=1e-12, ftol=1e-15, gtol=1e-15)
        trial = np.concatenate([[0.0], res.x])
        if _profile_cost(prob, trial)[0] <= _profile_cost(prob, phi)[0]:
            phi = trial
        if not res.success:
            logger.warning("drift polish did not converge: %s", res.message)
    cost, psi = _profile_cost(prob, phi)
    # solved without tau_LO, slice mu carries exp(j phi_LO[mu]), so psi = -2 pi f_FSR tau_LO
    tau = float(np.mod(-psi / (2 * np.pi * f_FSR), 1.0 / f_FSR))
    drift = DriftParams(np.angle(np.exp(1j * phi)), tau)
    info = dict(or_cost=cost, iterations=it, or_bins=int(sum(p[1].size for p in prob.pairs)))
    return (drift, info) if return_info else drift


# --------------------------------------------------------------------------
# full reconstruction


@dataclass(frozen=True)
class ReconstructionOptions:
    """Knobs of :func:`reconstruct`.

    ``drift`` is ``"estimate"``, ``"none"`` (zero drift) or a DriftParams.
    """

    drift: object = "estimate"
    rcond_threshold: float = 1e-6
    tikhonov: float = 0.0
    weights_mode: str = "mrc"
    taper_fraction: float = 0.1
    max_extrapolation: float = 0.0
    or_bins: int = 256
    or_rel_threshold: float = 1e-2
    pilot_freqs: tuple = ()
    n_scan: int = 64
    max_iter: int = 8
    flagged_weight: float = 1e-6
    output_sample_rate: float | None = None
    record_noise: str = "auto"


def _record_noise(records: ChannelRecords, mode: str):
    """Relative record noise variances for the stitching weights.

    ``"full_scale"`` scales with the squared per-record ADC full scale, which
    sets the converter noise; ``"auto"`` uses it when the records carry it.
    """
    if mode not in ("auto", "equal", "full_scale"):
        raise ValueError("record_noise must be 'auto', 'equal' or 'full_scale'")
    U = records.metadata.get("U_FS_records")
    if mode == "equal" or (mode == "auto" and U is None):
        return None
    if U is None:
        raise ValueError("records carry no per-record full scale")
    U = np.asarray(U, dtype=float).reshape(2 * records.N)
    return U ** 2 / np.mean(U ** 2)


@dataclass
class ReconstructionResult:
    stitched_spectrum: Spectrum
    slices: list
    drift_estimate: DriftParams
    diagnostics: dict
    matrix: TransferMatrixSet
    weights: np.ndarray
    offsets: np.ndarray
    kB: int

    @property
    def waveform(self) -> SampledWaveform:
        return idft(self.stitched_spectrum)

    def on_sample_rate(self, sample_rate: float) -> Spectrum:
        """Stitched spectrum zero-padded to a symmetric grid of the given width."""
        return _pad_spectrum(self.stitched_spectrum, sample_rate)


def _pad_spectrum(s: Spectrum, sample_rate: float) -> Spectrum:
    n = int(round(sample_rate / s.df))
    if abs(n * s.df - sample_rate) > 1e-6 * sample_rate:
        raise ValueError("output sample rate must be a multiple of the bin spacing")
    start = -(n // 2)
    k0 = int(round(s.f_start / s.df))
    if k0 < start or k0 + len(s) > start + n:
        raise ValueError("output sample rate too low for the reconstructed band")
    out = np.zeros(n, dtype=complex)
    out[k0 - start: k0 - start + len(s)] = s.bins
    return Spectrum(out, start * s.df, s.df)


def reconstruct(records: ChannelRecords, cal: CalibrationRecord,
                options: ReconstructionOptions | None = None, **kw) -> ReconstructionResult:
    """Full pipeline: per-bin solve on [0, B], slice shift and stitching.

    Keyword arguments override fields of ``options``.
    """
    opt = options or ReconstructionOptions()
    if kw:
        opt = ReconstructionOptions(**{**opt.__dict__, **kw})
    meta = cal.metadata
    f_lo, f_FSR, B = meta["f_lo"], meta["f_FSR"], meta["B"]
    if records.N != cal.N:
        raise ValueError(f"records have N={records.N} channels, calibration has N={cal.N}")
    if cal.M > 1 and B < f_FSR / 2:
        raise ValueError("B must be at least f_FSR/2")
    grid = _grid(records, f_lo, f_FSR, B)
    M = cal.M
    info: dict = {}
    if isinstance(opt.drift, DriftParams):
        drift = opt.drift
    elif opt.drift == "estimate" and M > 1:
        drift, info = estimate_drift(records, cal, or_bins=opt.or_bins,
                                     or_rel_threshold=opt.or_rel_threshold,
                                     pilot_freqs=opt.pilot_freqs, n_scan=opt.n_scan,
                                     max_iter=opt.max_iter, max_extrapolation=opt.max_extrapolation,
                                     return_info=True)
    else:
        drift = DriftParams.zero(cal.N)
    k = np.arange(grid.kB + 1)
    Hset = build_matrix(cal, drift, k * grid.df, opt.max_extrapolation)
    Hset = invert_matrix_set(Hset, opt.rcond_threshold, opt.tikhonov)
    y = _record_vectors(records, grid.kB)
    x = apply_inverse(Hset.inverse, y)
    sl = _slices_from_solution(x, M)
    var = _slice_variances(Hset.inverse, M, _record_noise(records, opt.record_noise))
    if Hset.flagged.any():
        fl = np.concatenate([Hset.flagged[:0:-1], Hset.flagged])
        var = np.where(fl[None, :], var / opt.flagged_weight, var)
    spec, W = stitch(sl, grid.j_lo, grid.kB, grid.df, var, opt.weights_mode,
                     opt.taper_fraction, return_weights=True)
    if opt.output_sample_rate:
        spec = _pad_spectrum(spec, opt.output_sample_rate)
    slices = [Spectrum(sl[mu], -grid.kB * grid.df, grid.df) for mu in range(M)]
    or_res = _or_residuals(sl, grid)
    diag = dict(cond=Hset.cond, max_cond=float(np.max(Hset.cond)),
                n_flagged=int(Hset.flagged.sum()), or_residuals=or_res,
                clipped_fraction=float(records.metadata.get("clipped_fraction", 0.0)),
                drift_phi_F=[float(v) for v in drift.phi_F], drift_tau_LO=float(drift.tau_LO),
                **{f"drift_{k_}": v for k_, v in info.items()})
    return ReconstructionResult(spec, slices, drift, diag, Hset, W, grid.j_lo, grid.kB)


def _or_residuals(sl: np.ndarray, grid: _Grid) -> list:
    """Relative disagreement of the two copies in each overlap region."""
    order = np.argsort(grid.j_lo)
    kB = grid.kB
    out = []
    for a, b in zip(order[:-1], order[1:]):
        d = grid.j_lo[b] - grid.j_lo[a]
        ja = np.arange(max(-kB, d - kB), kB + 1)
        if ja.size == 0:
            out.append(float("nan"))
            continue
        va, vb = sl[a, ja + kB], sl[b, ja - d + kB]
        den = np.sum(np.abs(va) ** 2 + np.abs(vb) ** 2)
        out.append(float(np.sum(np.abs(va - vb) ** 2) / den) if den > 0 else float("nan"))
    return out

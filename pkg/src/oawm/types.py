"""Data containers shared by the front-end, calibration and reconstruction modules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


def _ro(a, dtype=None) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DriftParams:
    """Slowly time-variant factors of one recording.

    ``phi_F`` holds the per-channel path phases (channel 1 is the gauge
    reference and is normally 0). ``tau_LO`` is the comb pulse-train
    position; tone ``mu`` (1-based) picks up ``2*pi*f_FSR*tau_LO*mu``.
    """

    phi_F: np.ndarray
    tau_LO: float = 0.0

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.phi_F, dtype=float))
        if not np.all(np.isfinite(p)):
            raise ValueError("phi_F must be finite")
        if not np.isfinite(self.tau_LO):
            raise ValueError("tau_LO must be finite")
        object.__setattr__(self, "phi_F", _ro(p))
        object.__setattr__(self, "tau_LO", float(self.tau_LO))

    @classmethod
    def zero(cls, N: int) -> "DriftParams":
        return cls(np.zeros(N), 0.0)

    @property
    def N(self) -> int:
        return self.phi_F.size

    def phi_LO(self, f_FSR: float, M: int) -> np.ndarray:
        return 2 * np.pi * f_FSR * self.tau_LO * np.arange(1, M + 1)

    def factors(self, f_FSR: float, M: int) -> np.ndarray:
        """``exp(j(phi_F[nu] + phi_LO[mu]))`` as an (N, M) array."""
        return np.exp(1j * (self.phi_F[:, None] + self.phi_LO(f_FSR, M)[None, :]))

    def regauged(self) -> "DriftParams":
        """Same drift with channel 1 moved to zero phase."""
        return DriftParams(np.angle(np.exp(1j * (self.phi_F - self.phi_F[0]))), self.tau_LO)


@dataclass(frozen=True)
class ChannelRecords:
    """The 2N digitized baseband records of one acquisition, in volts."""

    I: np.ndarray
    Q: np.ndarray
    f_s: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        I = np.atleast_2d(np.asarray(self.I, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if I.shape != Q.shape:
            raise ValueError("I and Q records must have identical shapes")
        if I.shape[1] < 1:
            raise ValueError("records are empty")
        if not (np.all(np.isfinite(I)) and np.all(np.isfinite(Q))):
            raise ValueError("records must be finite")
        if not self.f_s > 0:
            raise ValueError("f_s must be positive")
        object.__setattr__(self, "I", _ro(I))
        object.__setattr__(self, "Q", _ro(Q))
        object.__setattr__(self, "f_s", float(self.f_s))

    @property
    def N(self) -> int:
        return self.I.shape[0]

    @property
    def n_samples(self) -> int:
        return self.I.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.f_s

    @property
    def df(self) -> float:
        return self.f_s / self.n_samples

    def spectra(self) -> tuple[np.ndarray, np.ndarray]:
        """Continuous-FT spectra on the unshifted FFT grid, shape (N, K)."""
        dt = 1.0 / self.f_s
        return np.fft.fft(self.I, axis=1) * dt, np.fft.fft(self.Q, axis=1) * dt

    def __add__(self, other: "ChannelRecords") -> "ChannelRecords":
        if self.I.shape != other.I.shape or self.f_s != other.f_s:
            raise ValueError("records are not congruent")
        return ChannelRecords(self.I + other.I, self.Q + other.Q, self.f_s, dict(self.metadata))

    def __sub__(self, other: "ChannelRecords") -> "ChannelRecords":
        if self.I.shape != other.I.shape or self.f_s != other.f_s:
            raise ValueError("records are not congruent")
        return ChannelRecords(self.I - other.I, self.Q - other.Q, self.f_s, dict(self.metadata))


@dataclass(frozen=True)
class TransferMatrixSet:
    """Per-bin block matrices ``[[H_I(f), H_I*(-f)], [H_Q(f), H_Q*(-f)]]``.

    ``matrix`` has shape ``(n, 2N, 2M)``; ``f_grid`` is ascending on [0, B].
    The inverse is attached by :func:`oawm.recon.invert_matrix_set`.
    """

    f_grid: np.ndarray
    matrix: np.ndarray
    cond: np.ndarray | None = None
    inverse: np.ndarray | None = None
    flagged: np.ndarray | None = None

    def __post_init__(self):
        f = np.asarray(self.f_grid, dtype=float).ravel()
        H = np.asarray(self.matrix, dtype=complex)
        if H.ndim != 3 or H.shape[0] != f.size:
            raise ValueError("matrix must have shape (len(f_grid), 2N, 2M)")
        if H.shape[1] % 2 or H.shape[2] % 2:
            raise ValueError("matrix blocks must have even dimensions")
        if f.size > 1 and np.any(np.diff(f) <= 0):
            raise ValueError("f_grid must be strictly increasing")
        if not np.all(np.isfinite(H)):
            raise ValueError("transfer matrix entries must be finite")
        object.__setattr__(self, "f_grid", _ro(f))
        object.__setattr__(self, "matrix", _ro(H))
        for name in ("cond", "inverse", "flagged"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _ro(v))

    @property
    def N(self) -> int:
        return self.matrix.shape[1] // 2

    @property
    def M(self) -> int:
        return self.matrix.shape[2] // 2

    @classmethod
    def from_blocks(cls, f_grid, HI_pos, HQ_pos, HI_neg, HQ_neg) -> "TransferMatrixSet":
        """Assemble from (n, N, M) transfer functions evaluated at +f and -f."""
        top = np.concatenate([HI_pos, np.conj(HI_neg)], axis=2)
        bot = np.concatenate([HQ_pos, np.conj(HQ_neg)], axis=2)
        return cls(f_grid, np.concatenate([top, bot], axis=1))

    def blocks(self):
        """Return ``(H_I(f), H_Q(f), H_I(-f), H_Q(-f))`` each (n, N, M)."""
        N, M = self.N, self.M
        H = self.matrix
        return (H[:, :N, :M], H[:, N:, :M], np.conj(H[:, :N, M:]), np.conj(H[:, N:, M:]))


@dataclass(frozen=True)
class CalibrationRecord:
    """Transfer functions on a grid spanning [-B, B].

    ``H_I`` and ``H_Q`` have shape (n, N, M); ``uncertainty`` holds the
    per-point relative standard error (same shape, may be zeros).
    ``metadata`` carries at least ``f_lo`` (tone offsets), ``f_FSR`` and ``B``.
    """

    f_grid: np.ndarray
    H_I: np.ndarray
    H_Q: np.ndarray
    uncertainty: np.ndarray | None = None
    uncertainty_dB: float = -np.inf
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.f_grid, dtype=float).ravel()
        HI = np.asarray(self.H_I, dtype=complex)
        HQ = np.asarray(self.H_Q, dtype=complex)
        if HI.shape != HQ.shape or HI.ndim != 3 or HI.shape[0] != f.size:
            raise ValueError("H_I/H_Q must both have shape (len(f_grid), N, M)")
        if f.size > 1 and np.any(np.diff(f) <= 0):
            raise ValueError("calibration grid must be strictly increasing")
        if not (np.all(np.isfinite(HI)) and np.all(np.isfinite(HQ))):
            raise ValueError("calibration matrices must be finite")
        u = np.zeros(HI.shape) if self.uncertainty is None else np.asarray(self.uncertainty, float)
        if u.shape != HI.shape:
            raise ValueError("uncertainty must match H shape")
        object.__setattr__(self, "f_grid", _ro(f))
        object.__setattr__(self, "H_I", _ro(HI))
        object.__setattr__(self, "H_Q", _ro(HQ))
        object.__setattr__(self, "uncertainty", _ro(u))
        object.__setattr__(self, "uncertainty_dB", float(self.uncertainty_dB))

    @property
    def N(self) -> int:
        return self.H_I.shape[1]

    @property
    def M(self) -> int:
        return self.H_I.shape[2]

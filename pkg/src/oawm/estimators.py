"""
Estimator-style wrappers around the functional pipeline.

The classes follow the scikit-learn conventions: constructor arguments are
stored verbatim, ``fit`` validates and learns state (suffixed with ``_``),
``transform`` applies it, and ``get_params``/``set_params`` come from
:class:`sklearn.base.BaseEstimator`.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import calib, frontend, recon
from .signalkit import SampledWaveform, Spectrum
from .types import CalibrationRecord, ChannelRecords, DriftParams


def _check_fitted(est, attr: str):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


class FrontEndSimulator(TransformerMixin, BaseEstimator):
    """Optical waveform in, 2N digitized records out.

    ``fit`` checks the band plan and stores the model calibration
    (``calibration_``); ``transform`` simulates one acquisition per call.
    """

    def __init__(self, comb: frontend.CombLO, fe: frontend.FrontEndConfig, adc: frontend.ADCConfig,
                 drift: DriftParams | None = None, noise_toggles=(), seed: int = 0,
                 n_cal_points: int = 513):
        self.comb = comb
        self.fe = fe
        self.adc = adc
        self.drift = drift
        self.noise_toggles = noise_toggles
        self.seed = seed
        self.n_cal_points = n_cal_points

    def fit(self, X=None, y=None):
        if self.comb.M != self.fe.N:
            raise ValueError("comb tone count must equal the channel count")
        frontend.check_band_plan(self.comb, self.adc)
        self.toggles_ = frontend.parse_toggles(self.noise_toggles)
        self.calibration_ = frontend.calibration_from_model(self.comb, self.fe, self.adc,
                                                            n_points=self.n_cal_points)
        return self

    def transform(self, X: SampledWaveform) -> ChannelRecords:
        _check_fitted(self, "calibration_")
        if not isinstance(X, SampledWaveform):
            raise TypeError("X must be a SampledWaveform")
        return frontend.simulate_frontend(X, self.comb, self.fe, self.adc, self.drift,
                                          self.toggles_, self.seed)


class MultiShotCalibrator(BaseEstimator):
    """Transfer-function estimation from ORW recordings at several offsets.

    ``fit(records, offsets)`` takes one ChannelRecords per shot and the
    matching ORW/LO frequency offsets; the merged result is ``calibration_``.
    """

    def __init__(self, orw: calib.ORWConfig, f_lo: Sequence[float], B: float, anchor: int = 0,
                 guard: float = 10e6, snr_min_dB: float = 10.0, f_tol: float = 1.0):
        self.orw = orw
        self.f_lo = f_lo
        self.B = B
        self.anchor = anchor
        self.guard = guard
        self.snr_min_dB = snr_min_dB
        self.f_tol = f_tol

    def fit(self, X: Sequence[ChannelRecords], y: Sequence[float] | None = None):
        X = list(X)
        if not X:
            raise ValueError("need at least one shot")
        offsets = [0.0] * len(X) if y is None else [float(v) for v in y]
        if len(offsets) != len(X):
            raise ValueError("one offset per shot required")
        if not 0 <= self.anchor < len(X):
            raise ValueError("anchor index out of range")
        self.shots_ = [calib.calibrate_single_shot(r, self.orw, self.f_lo, o, B=self.B,
                                                   guard=self.guard, snr_min_dB=self.snr_min_dB)
                       for r, o in zip(X, offsets)]
        self.calibration_ = calib.merge_multishot(self.shots_, anchor=self.anchor, f_tol=self.f_tol)
        return self

    def transform(self, X=None) -> CalibrationRecord:
        _check_fitted(self, "calibration_")
        return self.calibration_


class OAWMReconstructor(TransformerMixin, BaseEstimator):
    """Records in, stitched spectrum out.

    ``fit(calibration)`` validates and stores the calibration; every
    ``transform`` estimates the drift of that recording (unless ``drift``
    is fixed) and returns the stitched spectrum. The last full result is
    kept in ``result_``. ``max_extrapolation=None`` allows one calibration
    grid step beyond the measured span, since a measured grid rarely lands
    exactly on the band edge.
    """

    def __init__(self, drift="estimate", weights_mode: str = "mrc", taper_fraction: float = 0.1,
                 rcond_threshold: float = 1e-6, tikhonov: float = 0.0, or_bins: int = 256,
                 or_rel_threshold: float = 1e-2, pilot_freqs: tuple = (), n_scan: int = 64,
                 max_iter: int = 8, max_extrapolation: float | None = None,
                 output_sample_rate: float | None = None, record_noise: str = "auto"):
        self.drift = drift
        self.weights_mode = weights_mode
        self.taper_fraction = taper_fraction
        self.rcond_threshold = rcond_threshold
        self.tikhonov = tikhonov
        self.or_bins = or_bins
        self.or_rel_threshold = or_rel_threshold
        self.pilot_freqs = pilot_freqs
        self.n_scan = n_scan
        self.max_iter = max_iter
        self.max_extrapolation = max_extrapolation
        self.output_sample_rate = output_sample_rate
        self.record_noise = record_noise

    def _options(self, max_extrapolation: float) -> recon.ReconstructionOptions:
        return recon.ReconstructionOptions(
            drift=self.drift, rcond_threshold=self.rcond_threshold, tikhonov=self.tikhonov,
            weights_mode=self.weights_mode, taper_fraction=self.taper_fraction,
            max_extrapolation=max_extrapolation, or_bins=self.or_bins,
            or_rel_threshold=self.or_rel_threshold, pilot_freqs=tuple(self.pilot_freqs),
            n_scan=self.n_scan, max_iter=self.max_iter, output_sample_rate=self.output_sample_rate,
            record_noise=self.record_noise)

    def fit(self, X: CalibrationRecord, y=None):
        if not isinstance(X, CalibrationRecord):
            raise TypeError("fit expects a CalibrationRecord")
        missing = {"f_lo", "f_FSR", "B"} - set(X.metadata)
        if missing:
            raise ValueError(f"calibration metadata lacks {sorted(missing)}")
        if self.weights_mode not in ("mrc", "equal"):
            raise ValueError(f"unknown weights_mode {self.weights_mode!r}")
        if not (isinstance(self.drift, DriftParams) or self.drift in ("estimate", "none")):
            raise ValueError("drift must be 'estimate', 'none' or DriftParams")
        ext = self.max_extrapolation
        if ext is None:
            ext = float(np.max(np.diff(X.f_grid))) if X.f_grid.size > 1 else 0.0
        self.options_ = self._options(ext)
        self.calibration_ = X
        self.n_channels_ = X.N
        return self

    def transform(self, X: ChannelRecords) -> Spectrum:
        _check_fitted(self, "calibration_")
        if not isinstance(X, ChannelRecords):
            raise TypeError("transform expects ChannelRecords")
        if X.N != self.n_channels_:
            raise ValueError(f"records have {X.N} channels, fitted on {self.n_channels_}")
        self.result_ = recon.reconstruct(X, self.calibration_, self.options_)
        return self.result_.stitched_spectrum

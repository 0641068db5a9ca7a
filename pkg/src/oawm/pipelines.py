"""
End-to-end flows built from a scenario: simulate, calibrate, reconstruct and
characterize. Shared by the command-line tool and the acceptance tests.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import calib, frontend, metrics, recon
from .estimators import FrontEndSimulator, MultiShotCalibrator, OAWMReconstructor
from .scenario import (Scenario, build_adc, build_comb, build_drift, build_frontend, build_signal,
                       load_scenario, noise_toggles, signal_power)
from .signalkit import dft
from .types import CalibrationRecord, DriftParams

logger = logging.getLogger(__name__)

# Single-tone characterization with the receiver non-idealities that make the
# drift observable (delay errors, comb ripple, IQ phase errors), AC coupling,
# a full scale that the largest sample just fills, and a clean CW source.
CW_PRESET = (
    "signal.kind=cw", "signal.duration=1e-6", "signal.sample_rate=400e9", "signal.pilots=true",
    "signal.pilot_extra=[70.5e9]", "frontend.OSNR_sig_dB=inf", "frontend.dc_block=true",
    "frontend.iq_phase_deg=[84, 86, 88, 89]", "frontend.delay_error=[0, 0.8e-12, -0.6e-12, 0.5e-12]",
    "comb.tone_ripple_dB=[0, -0.8, 0.5, -0.3]", "adc.peak_fill=1.0",
    "drift.phi_F=[0, 1, -2, 0.5]", "drift.tau_LO=2e-12",
)

CW_TONES = tuple(np.linspace(-77.5e9, 77.5e9, 11))


def cw_scenario(overrides=()) -> Scenario:
    return load_scenario(None, CW_PRESET + tuple(overrides))


@dataclass
class System:
    fe: frontend.FrontEndConfig
    comb: frontend.CombLO
    adc: frontend.ADCConfig
    drift: DriftParams

    @property
    def acquisition_band(self) -> tuple:
        return (float(self.comb.f_mu[0] - self.comb.f_FSR / 2),
                float(self.comb.f_mu[-1] + self.comb.f_FSR / 2))


def build_system(sc: Scenario, f_FSR: float | None = None) -> System:
    fe = build_frontend(sc, f_FSR)
    comb = build_comb(sc, fe, f_FSR)
    return System(fe, comb, build_adc(sc), build_drift(sc))


def simulate(sc: Scenario):
    """Returns (records, waveform, info) for the scenario signal."""
    sys_ = build_system(sc)
    w, info = build_signal(sc, sys_.fe, sys_.comb, sys_.adc)
    sim = FrontEndSimulator(sys_.comb, sys_.fe, sys_.adc, sys_.drift,
                            noise_toggles(sc["frontend"]["noise"]), sc.seed)
    sim.fit()
    return sim.transform(w), w, info


def model_calibration(sc: Scenario) -> CalibrationRecord:
    """Exact transfer functions of the configured system (dense grid)."""
    s = build_system(sc)
    return frontend.calibration_from_model(s.comb, s.fe, s.adc)


def multishot_calibration(sc: Scenario) -> CalibrationRecord:
    """Simulated ORW calibration with ``n_shots`` frequency offsets.

    The comb is detuned to ``calibration.f_FSR`` so that ORW lines and their
    mirror images stay distinct.
    """
    c = sc["calibration"]
    s = build_system(sc, c["f_FSR"])
    df = 1 / c["duration"]
    offsets = [k * c["offset_step"] for k in range(c["n_shots"])]
    orw = calib.plan_orw(s.comb.f_mu, s.adc.B, c["f_ORW"], s.fe.P_S_nominal, offsets, df,
                         seed=sc.seed)
    rng = np.random.default_rng([sc.seed, 0xCA1])
    recs = []
    for k, off in enumerate(offsets):
        w = calib.gen_orw(orw, c["duration"], c["sample_rate"], off)
        d = DriftParams.zero(s.fe.N) if k == 0 else DriftParams(
            rng.uniform(-np.pi, np.pi, s.fe.N), rng.uniform(0, 1 / s.comb.f_FSR))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", frontend.ClippingWarning)
            recs.append(frontend.simulate_frontend(w, s.comb, s.fe, s.adc, d,
                                                   noise_toggles(c["noise"]), seed=sc.seed + k))
    est = MultiShotCalibrator(orw, s.comb.f_mu, s.adc.B, guard=c["guard"],
                              snr_min_dB=c["snr_min_dB"])
    return est.fit(recs, offsets).calibration_


def reconstructor(sc: Scenario, pilots=(), drift: DriftParams | None = None) -> OAWMReconstructor:
    r = sc["reconstruction"]
    mode = r["drift"]
    d = drift if mode == "true" else mode
    return OAWMReconstructor(drift=d, weights_mode=r["weights_mode"],
                             taper_fraction=r["taper_fraction"], or_bins=r["or_bins"],
                             or_rel_threshold=r["or_rel_threshold"],
                             rcond_threshold=r["rcond_threshold"], pilot_freqs=tuple(pilots),
                             record_noise=r["record_noise"])


@dataclass
class RunResult:
    scenario: Scenario
    records: object
    waveform: object
    info: dict
    result: recon.ReconstructionResult
    system: System
    report: metrics.DistortionReport | None = None
    extras: dict = field(default_factory=dict)


def reconstruct(sc: Scenario, cal: CalibrationRecord | None = None) -> RunResult:
    """Simulate the scenario signal and reconstruct it."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", frontend.ClippingWarning)
        rec, w, info = simulate(sc)
    cal = model_calibration(sc) if cal is None else cal
    s = build_system(sc)
    est = reconstructor(sc, info.get("pilots", ()), s.drift).fit(cal)
    est.transform(rec)
    return RunResult(sc, rec, w, info, est.result_, s)


def characterize(sc: Scenario, cal: CalibrationRecord | None = None) -> RunResult:
    """Reconstruct and attach the distortion report (cw) or the EVM (qam)."""
    run = reconstruct(sc, cal)
    kind = sc["signal"]["kind"]
    comb = run.system.comb
    if kind == "cw":
        spurs = ()
        a = run.system.adc
        if np.isfinite(a.clock_spur_dBc) and a.clock_spur_freq:
            spurs = metrics.clock_spur_frequencies(comb.f_mu, a.clock_spur_freq, a.B)
        run.report = metrics.sinad_report(run.result.stitched_spectrum, [run.info["tone"]],
                                          spurs, pilot_freqs=run.info["pilots"], f_lo=comb.f_mu,
                                          band=run.system.acquisition_band)
    elif kind == "qam":
        from .signalkit import qam_demodulate

        s = sc["signal"]
        out = run.result.waveform
        rx = qam_demodulate(_resample_to(out, run.waveform.sample_rate), s["qam_symbol_rate"],
                            len(run.info["symbols"]), s["rrc_rolloff"])
        run.extras["evm"] = metrics.evm_csnr(rx, run.info["symbols"], s["qam_order"])
    else:
        ref = dft(run.waveform)
        # an AC-coupled receiver cannot observe the bins at the comb lines
        skip = comb.f_mu if run.system.fe.dc_block else ()
        run.extras["relative_error_dB"] = relative_error_dB(run.result, ref, skip)
    return run


def _resample_to(w, sample_rate):
    """Zero-pad or truncate the spectrum of ``w`` to a new sample rate."""
    from .signalkit import SampledWaveform

    n_new = int(round(len(w) * sample_rate / w.sample_rate))
    X = np.fft.fftshift(np.fft.fft(w.samples))
    n = len(w)
    Y = np.zeros(n_new, dtype=complex)
    c_old, c_new = n // 2, n_new // 2
    m = min(n, n_new) // 2
    Y[c_new - m:c_new + m] = X[c_old - m:c_old + m]
    y = np.fft.ifft(np.fft.ifftshift(Y)) * (n_new / n)
    return SampledWaveform(y, sample_rate, w.start_time)


def relative_error_dB(result: recon.ReconstructionResult, truth, skip_freqs=()) -> float:
    """Error power of the stitched spectrum relative to the true spectrum on the same bins.

    Bins nearest to ``skip_freqs`` are left out of both sums.
    """
    s = result.stitched_spectrum
    k0 = int(round((s.f_start - truth.f_start) / truth.df))
    if abs(truth.df - s.df) > 1e-9 * s.df or k0 < 0 or k0 + len(s) > len(truth):
        raise ValueError("truth spectrum does not cover the reconstructed bins")
    ref = truth.bins[k0:k0 + len(s)]
    keep = np.ones(len(s), dtype=bool)
    for f in skip_freqs:
        k = int(round((f - s.f_start) / s.df))
        if 0 <= k < len(s):
            keep[k] = False
    d = np.abs(s.bins - ref)[keep] ** 2
    e = np.sum(d) / np.sum(np.abs(ref[keep]) ** 2)
    return float(10 * np.log10(max(e, 1e-300)))


def cw_sweep(tones=CW_TONES, overrides=()) -> list:
    """SINAD reports of the single-tone characterization across the band."""
    out = []
    for k, f0 in enumerate(tones):
        sc = cw_scenario(tuple(overrides) + (f"signal.cw_freq={float(f0)!r}", f"scenario.seed={k}"))
        run = characterize(sc)
        out.append((float(run.info["tone"]), run.report, run.result.drift_estimate))
    return out

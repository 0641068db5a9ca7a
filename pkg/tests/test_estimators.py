import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from oawm import DriftParams, FrontEndSimulator, MultiShotCalibrator, OAWMReconstructor
from oawm import calib
from oawm.frontend import calibration_from_model, simulate_frontend
from oawm.pipelines import relative_error_dB
from oawm.signalkit import dft

from .conftest import make_system, random_signal


def test_params_roundtrip_and_clone(system4):
    comb, fe, adc = system4
    sim = FrontEndSimulator(comb, fe, adc, seed=3)
    assert sim.get_params()["seed"] == 3
    sim.set_params(seed=5)
    assert sim.seed == 5
    c = clone(sim)
    assert c.seed == 5 and c is not sim
    rec = OAWMReconstructor(weights_mode="equal")
    assert clone(rec).get_params() == rec.get_params()


def test_not_fitted(system4):
    comb, fe, adc = system4
    with pytest.raises(NotFittedError):
        FrontEndSimulator(comb, fe, adc).transform(random_signal(fe))
    with pytest.raises(NotFittedError):
        OAWMReconstructor().transform(None)
    with pytest.raises(NotFittedError):
        MultiShotCalibrator(calib.ORWConfig(1e9, 3, 1.0), comb.f_mu, adc.B).transform()


def test_simulator_and_reconstructor_pipeline(system4):
    comb, fe, adc = system4
    w = random_signal(fe, duration=25e-9)
    drift = DriftParams([0.0, 0.4, -0.9, 1.7], 3e-12)
    sim = FrontEndSimulator(comb, fe, adc, drift=drift).fit()
    records = sim.transform(w)
    assert records.N == 4
    with pytest.raises(TypeError):
        sim.transform(w.samples)
    rec = OAWMReconstructor(drift=drift).fit(sim.calibration_)
    spec = rec.transform(records)
    assert spec is rec.result_.stitched_spectrum
    assert relative_error_dB(rec.result_, dft(w)) < -60


def test_simulator_rejects_inconsistent_system():
    comb, fe, adc = make_system(N=4)
    c2, _, _ = make_system(N=2)
    with pytest.raises(ValueError):
        FrontEndSimulator(c2, fe, adc).fit()
    with pytest.raises(ValueError):
        FrontEndSimulator(comb, fe, adc, noise_toggles=["gremlins"]).fit()


def test_reconstructor_validation(system4):
    comb, fe, adc = system4
    cal = calibration_from_model(comb, fe, adc)
    with pytest.raises(TypeError):
        OAWMReconstructor().fit("cal")
    with pytest.raises(ValueError, match="weights_mode"):
        OAWMReconstructor(weights_mode="best").fit(cal)
    with pytest.raises(ValueError, match="drift"):
        OAWMReconstructor(drift="guess").fit(cal)
    bare = cal.__class__(cal.f_grid, cal.H_I, cal.H_Q, None, -np.inf, {})
    with pytest.raises(ValueError, match="metadata"):
        OAWMReconstructor().fit(bare)
    c2, f2, a2 = make_system(N=2)
    rec2 = simulate_frontend(random_signal(f2, N=2), c2, f2, a2, None, "none")
    r = OAWMReconstructor(drift="none").fit(cal)
    with pytest.raises(ValueError, match="channels"):
        r.transform(rec2)
    with pytest.raises(TypeError):
        r.transform(cal)


def test_reconstructor_edge_tolerance_is_one_grid_step(system4):
    comb, fe, adc = system4
    cal = calibration_from_model(comb, fe, adc, n_points=21)
    step = cal.f_grid[1] - cal.f_grid[0]
    assert OAWMReconstructor().fit(cal).options_.max_extrapolation == pytest.approx(step)
    assert OAWMReconstructor(max_extrapolation=0.0).fit(cal).options_.max_extrapolation == 0.0


def test_multishot_calibrator():
    comb, fe, adc = make_system(f_FSR=39.96e9)
    duration, fs = 0.8e-6, 200e9
    orw = calib.plan_orw(comb.f_mu, adc.B, 250e6, fe.P_S_nominal, [0.0, 31.25e6], 1 / duration, seed=0)
    offsets = [0.0, 31.25e6]
    shots = [simulate_frontend(calib.gen_orw(orw, duration, fs, o), comb, fe, adc,
                               DriftParams([0.0, 0.3 * k, -0.2, 0.1], 1e-12 * k), "none")
             for k, o in enumerate(offsets)]
    est = MultiShotCalibrator(orw, comb.f_mu, adc.B).fit(shots, offsets)
    cal = est.transform()
    assert cal is est.calibration_ and len(est.shots_) == 2
    assert cal.metadata["n_shots"] == 2
    with pytest.raises(ValueError):
        MultiShotCalibrator(orw, comb.f_mu, adc.B).fit([])
    with pytest.raises(ValueError):
        MultiShotCalibrator(orw, comb.f_mu, adc.B).fit(shots, [0.0])
    with pytest.raises(ValueError):
        MultiShotCalibrator(orw, comb.f_mu, adc.B, anchor=2).fit(shots, offsets)

import dataclasses

import numpy as np
import pytest

from oawm import CalibrationRecord, DriftParams
from oawm import calib
from oawm.frontend import simulate_frontend, transfer_functions
from oawm.signalkit import papr

from .conftest import make_system

F_FSR_CAL = 39.96e9
DURATION = 0.8e-6
FS_SIM = 200e9


@pytest.fixture(scope="module")
def cal_system():
    comb, fe, adc = make_system(f_FSR=F_FSR_CAL)
    orw = calib.plan_orw(comb.f_mu, adc.B, 250e6, fe.P_S_nominal, [0.0, 31.25e6], 1 / DURATION, seed=0)
    return comb, fe, adc, orw


def shot(system, offset=0.0, drift=None, fiber=None, noise="none", seed=0):
    comb, fe, adc, orw = system
    w = calib.gen_orw(orw, DURATION, FS_SIM, offset)
    if fiber is not None:
        w = calib.apply_fiber(w, fiber)
    r = simulate_frontend(w, comb, fe, adc, drift, noise, seed=seed)
    return calib.calibrate_single_shot(r, orw, comb.f_mu, offset, B=adc.B)


def rel_error_dB(cal, comb, fe, adc):
    HI, HQ = transfer_functions(comb, fe, adc, None, cal.f_grid)
    e = np.sum(np.abs(cal.H_I - HI) ** 2 + np.abs(cal.H_Q - HQ) ** 2)
    return 10 * np.log10(e / np.sum(np.abs(HI) ** 2 + np.abs(HQ) ** 2))


def test_orw_config_validation():
    with pytest.raises(ValueError):
        calib.ORWConfig(0.0, 10, 1.0)
    with pytest.raises(ValueError):
        calib.ORWConfig(1e9, 3, 1.0, line_phases=(0.0, 1.0))
    c = calib.ORWConfig(1e9, 3, 3.0)
    assert c.line_frequencies(0.5e9) == pytest.approx([-0.5e9, 0.5e9, 1.5e9])
    assert np.sum(np.abs(c.line_amplitudes()) ** 2) == pytest.approx(3.0)


def test_orw_lines_and_power():
    cfg = calib.ORWConfig(250e6, 100, 1e-3)
    w = calib.gen_orw(cfg, 0.2e-6, 100e9)
    assert w.power == pytest.approx(1e-3, rel=1e-9)
    spec = np.abs(np.fft.fft(w.samples)) ** 2
    assert np.count_nonzero(spec > 1e-6 * spec.max()) == 100


def test_fiber_reduces_papr_and_keeps_energy():
    cfg = calib.ORWConfig(250e6, 100, 1e-3)
    w = calib.gen_orw(cfg, 4e-9 * 10, 100e9)
    d = calib.apply_fiber(w, calib.FiberConfig(20e3))
    assert d.energy == pytest.approx(w.energy, rel=1e-12)
    assert papr(d) < papr(w)
    assert calib.apply_fiber(w, calib.FiberConfig(0.0)) is w
    two = calib.apply_fiber(calib.apply_fiber(w, calib.FiberConfig(10e3)), calib.FiberConfig(10e3))
    assert np.allclose(two.samples, d.samples, atol=1e-12 * np.abs(d.samples).max())
    with pytest.raises(ValueError):
        calib.FiberConfig(-1.0)


def test_probe_points_drop_collisions():
    phi, li, mi, bad = calib.probe_points([1e9, 2.5e9, 5e9], [0.0, 4e9], B=5e9, guard=10e6)
    # line 0 - tone 0 and line 2 - tone 1 both land at +1 GHz
    assert bad == 2
    assert np.all(np.abs(np.abs(phi) - 1e9) > 5e6)
    assert set(zip(li.tolist(), mi.tolist())) == {(0, 1), (1, 0), (1, 1), (2, 0)}


def test_single_shot_matches_model(cal_system):
    comb, fe, adc, orw = cal_system
    s = shot(cal_system)
    assert s.H_I.shape[1] == 4 and len(s.f) > 500
    HI, _ = transfer_functions(comb, fe, adc, None, s.f)
    ref = HI[np.arange(len(s.f)), :, s.mu]
    assert np.max(np.abs(s.H_I - ref)) < 1e-8 * np.max(np.abs(ref))


def test_multishot_merge_removes_shot_drift(cal_system):
    comb, fe, adc, orw = cal_system
    shots = [shot(cal_system, 0.0),
             shot(cal_system, 31.25e6, DriftParams([0.0, 0.7, -2.1, 1.3], 5e-12))]
    cal = calib.merge_multishot(shots, anchor=0)
    assert cal.f_grid[0] == pytest.approx(-adc.B, abs=1e9)
    assert cal.metadata["n_shots"] == 2
    assert rel_error_dB(cal, comb, fe, adc) < -60
    with pytest.raises((ValueError, IndexError)):
        calib.merge_multishot(shots, anchor=5)


def test_noisy_multishot_reaches_minus_40_dB(cal_system):
    comb, fe, adc0, orw = cal_system
    adc = dataclasses.replace(adc0, headroom_sigma=None, peak_fill=1.0)
    system = (comb, fe, adc, orw)
    rng = np.random.default_rng(0)
    shots = []
    for k in range(8):
        d = None if k == 0 else DriftParams(rng.uniform(-np.pi, np.pi, 4), rng.uniform(0, 25e-12))
        shots.append(shot(system, k * 31.25e6, d, noise=["adc_noise"], seed=k))
    cal = calib.merge_multishot(shots)
    assert rel_error_dB(cal, comb, fe, adc) <= -40
    assert cal.uncertainty_dB < -40


def _synthetic(H, phase):
    return CalibrationRecord(np.linspace(-1, 1, H.shape[0]), H * np.exp(-1j * phase),
                             H * np.exp(-1j * phase), None, -np.inf, {"f_lo": [0.0], "f_FSR": 1.0,
                                                                       "B": 1.0})


def test_fiber_phase_removal_symbolic(rng):
    n = 64
    H = (rng.standard_normal((n, 2, 2)) + 1j * rng.standard_normal((n, 2, 2)))
    s1 = rng.uniform(-40, 40, (n, 1, 1))
    s2 = rng.uniform(-40, 40, (n, 1, 1))
    out = calib.remove_fiber_phase(_synthetic(H, s1), _synthetic(H, s2), _synthetic(H, s1 + s2))
    assert np.max(np.abs(np.angle(out.H_I * np.conj(H)))) < 1e-9
    assert np.allclose(np.abs(out.H_I), np.abs(H))
    zero = calib.remove_fiber_phase(_synthetic(H, 0 * s1), _synthetic(H, 0 * s1), _synthetic(H, 0 * s1))
    assert np.allclose(zero.H_Q, H, atol=1e-12)


def test_fiber_phase_removal_grid_mismatch(rng):
    H = np.ones((8, 1, 1), complex)
    a = _synthetic(H, 0.0)
    b = CalibrationRecord(np.linspace(-2, 2, 8), H, H)
    with pytest.raises(ValueError, match="grid"):
        calib.remove_fiber_phase(a, b, a)


def test_calibration_file_roundtrip(tmp_path, cal_system):
    comb, fe, adc, orw = cal_system
    from oawm.frontend import calibration_from_model

    cal = calibration_from_model(comb, fe, adc, n_points=21)
    p = calib.save_calibration(tmp_path / "cal.json", cal, "abc")
    back = calib.load_calibration(p)
    assert np.array_equal(back.H_I, cal.H_I) and np.array_equal(back.f_grid, cal.f_grid)
    assert back.metadata["f_lo"] == cal.metadata["f_lo"]
    blob = bytearray((tmp_path / "cal.bin").read_bytes())
    blob[10] ^= 0xFF
    (tmp_path / "cal.bin").write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="checksum"):
        calib.load_calibration(p)

import dataclasses

import numpy as np
import pytest

from oawm import ADCConfig, CombLO, DriftParams, FrontEndConfig
from oawm.frontend import (ClippingWarning, apply_lo_jitter, calibration_from_model, check_band_plan,
                           evaluate_linear_model, forward_transfer, lo_tone_phase_noise,
                           parse_toggles, simulate_frontend, transfer_functions)
from oawm.signalkit import gen_cw_tone

from .conftest import make_system, random_signal


def residual_dB(a, b):
    e = np.sum((a.I - b.I) ** 2) + np.sum((a.Q - b.Q) ** 2)
    return 10 * np.log10(e / (np.sum(b.I ** 2) + np.sum(b.Q ** 2)))


def test_config_validation():
    with pytest.raises(ValueError):
        FrontEndConfig(N=2, delays=(0.0,))
    with pytest.raises(ValueError):
        FrontEndConfig.evenly_delayed(2, 40e9, iq_phase_deg=180)
    with pytest.raises(ValueError):
        CombLO.centered(2, 40e9, 1e-3, tone_amplitudes=(1.0, 1.0))
    with pytest.raises(ValueError):
        ADCConfig(B=30e9, f_s=50e9)
    with pytest.raises(ValueError):
        ADCConfig(B=20e9, f_s=50e9, peak_fill=1.5)


def test_band_plan_needs_half_fsr():
    comb = CombLO.centered(4, 40e9, 1e-2)
    check_band_plan(comb, ADCConfig(B=20e9, f_s=50e9))
    with pytest.raises(ValueError, match="f_FSR/2"):
        check_band_plan(comb, ADCConfig(B=19e9, f_s=50e9))


def test_parse_toggles():
    assert parse_toggles("none") == frozenset()
    assert "ssbi" in parse_toggles("all")
    assert parse_toggles("shot, ase") == {"shot", "ase"}
    with pytest.raises(ValueError, match="unknown"):
        parse_toggles(["shot", "cosmic_rays"])


def test_comb_geometry():
    comb = CombLO.centered(4, 40e9, 4e-3)
    assert comb.f_mu == pytest.approx([-60e9, -20e9, 20e9, 60e9])
    assert comb.f_cntr == 0.0
    assert np.sum(np.abs(comb.amplitudes) ** 2) == pytest.approx(4e-3)


@pytest.mark.parametrize("N", [1, 2, 4, 8])
def test_evenly_delayed_matrix_is_unitary(N):
    comb, fe, adc = make_system(N=N)
    H = forward_transfer(comb, fe, adc, None, np.linspace(0, adc.B, 33)).matrix
    G = np.einsum("kij,kil->kjl", H.conj(), H)
    c = np.trace(G, axis1=1, axis2=2).real / (2 * N)
    dev = np.abs(G - c[:, None, None] * np.eye(2 * N)).max() / c.max()
    assert dev < 1e-9


def test_uneven_delays_break_unitarity():
    comb, fe, adc = make_system()
    fe = dataclasses.replace(fe, delays=(0.0, 3e-12, 9e-12, 12e-12))
    H = forward_transfer(comb, fe, adc, None, [5e9]).matrix[0]
    G = H.conj().T @ H
    assert np.abs(G - np.trace(G).real / 8 * np.eye(8)).max() > 1e-3 * np.abs(G).max()


def test_transfer_functions_vanish_out_of_band(system4):
    comb, fe, adc = system4
    HI, HQ = transfer_functions(comb, fe, adc, None, [0.0, adc.B * 1.01])
    assert np.all(HI[1] == 0) and np.all(HQ[1] == 0)
    assert np.all(np.abs(HI[0]) > 0)


def test_noiseless_simulation_matches_linear_model(system4):
    comb, fe, adc = system4
    fe = dataclasses.replace(fe, iq_phase_deg=(90, 85, 92, 88), delays=(0, 7e-12, 13e-12, 21e-12))
    w = random_signal(fe)
    d = DriftParams([0.0, 0.4, -1.1, 2.0], 3e-12)
    sim = simulate_frontend(w, comb, fe, adc, d, "none")
    lin = evaluate_linear_model(w, comb, fe, adc, d, adc.f_s)
    assert residual_dB(sim, lin) < -90


def test_simulation_is_deterministic():
    comb, fe, adc = make_system(ideal=False)
    w = random_signal(fe)
    a = simulate_frontend(w, comb, fe, adc, None, "all", seed=5)
    b = simulate_frontend(w, comb, fe, adc, None, "all", seed=5)
    c = simulate_frontend(w, comb, fe, adc, None, "all", seed=6)
    assert np.array_equal(a.I, b.I) and np.array_equal(a.Q, b.Q)
    assert not np.array_equal(a.I, c.I)


def test_noise_sources_are_independent_streams(system4):
    """Enabling a second source leaves the first one's realization unchanged."""
    comb, fe, adc = system4
    w = random_signal(fe)
    ref = simulate_frontend(w, comb, fe, adc, None, "none")
    shot = simulate_frontend(w, comb, fe, adc, None, ["shot"], seed=2)
    rf = simulate_frontend(w, comb, fe, adc, None, ["rf_amp"], seed=2)
    both = simulate_frontend(w, comb, fe, adc, None, ["shot", "rf_amp"], seed=2)
    assert np.allclose(both.I - ref.I, (shot.I - ref.I) + (rf.I - ref.I), atol=1e-15)


def test_adc_full_scale_and_clipping(system4):
    comb, fe, _ = system4
    w = random_signal(fe)
    adc = ADCConfig(B=21e9, f_s=50e9, headroom_sigma=4.0)
    r = simulate_frontend(w, comb, fe, adc, None, "none")
    assert np.shape(r.metadata["U_FS_records"]) == (2, 4)
    assert r.metadata["U_FS"] == pytest.approx(np.max(r.metadata["U_FS_records"]))
    with pytest.warns(ClippingWarning):
        simulate_frontend(w, comb, fe, ADCConfig(B=21e9, f_s=50e9, headroom_sigma=1.0), None, "none")
    r = simulate_frontend(w, comb, fe, ADCConfig(B=21e9, f_s=50e9, peak_fill=1.0), None, "none")
    assert r.metadata["clipped_fraction"] == 0.0


def test_quantizer_levels(system4):
    comb, fe, _ = system4
    w = random_signal(fe)
    adc = ADCConfig(B=21e9, f_s=50e9, U_FS=0.2, n_bits=3, headroom_sigma=None)
    r = simulate_frontend(w, comb, fe, adc, None, ["quantization"])
    assert np.unique(r.I[0]).size <= 8
    r = simulate_frontend(w, comb, fe, adc, None, "none")
    assert np.unique(r.I[0]).size > 8
    with pytest.raises(ValueError, match="full scale"):
        simulate_frontend(w, comb, fe, system4[2], None, ["quantization"])


def test_dc_block_removes_mean(system4):
    comb, fe, adc = system4
    fe = dataclasses.replace(fe, dc_block=True)
    w = random_signal(fe)
    r = simulate_frontend(w, comb, fe, adc, None, ["ssbi"])
    assert np.abs(r.I.mean(axis=1)).max() < 1e-12 * np.abs(r.I).max()


def test_lo_jitter_spares_center_tone():
    comb = CombLO.centered(3, 40e9, 3e-3)
    dtau = apply_lo_jitter(comb, 25e-15, 1000, seed=1)
    assert dtau.std() == pytest.approx(25e-15, rel=0.1)
    ph = lo_tone_phase_noise(comb, dtau)
    assert np.all(ph[1] == 0)
    assert ph[2].std() == pytest.approx(2 * np.pi * 40e9 * dtau.std())
    band = dataclasses.replace(comb, jitter_bandwidth=1e9)
    with pytest.raises(ValueError):
        apply_lo_jitter(band, 25e-15, 1000)
    slow = apply_lo_jitter(band, 25e-15, 4000, seed=1, f_s=50e9)
    assert slow.std() == pytest.approx(25e-15, rel=0.2)
    assert np.abs(np.diff(slow)).mean() < 0.5 * np.abs(np.diff(dtau)).mean()


def test_model_calibration_grid(system4):
    comb, fe, adc = system4
    cal = calibration_from_model(comb, fe, adc, n_points=101)
    assert cal.f_grid[0] == -adc.B and cal.f_grid[-1] == adc.B
    assert cal.H_I.shape == (101, 4, 4)
    assert cal.metadata["f_lo"] == pytest.approx(list(comb.f_mu))


def test_cw_tone_appears_in_right_channel():
    comb, fe, adc = make_system(N=1, f_FSR=40e9, B=21e9)
    w = gen_cw_tone(5e9, fe.P_S_nominal, 0.0, 20e-9, 200e9)
    r = simulate_frontend(w, comb, fe, adc, None, "none")
    XI, _ = r.spectra()
    f = np.fft.fftfreq(r.n_samples, 1 / r.f_s)
    assert abs(abs(f[np.argmax(np.abs(XI[0]))]) - 5e9) < 1e-3 * 5e9

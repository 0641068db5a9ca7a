import dataclasses

import numpy as np
import pytest

from oawm import DriftParams
from oawm import recon
from oawm.frontend import calibration_from_model, forward_transfer, simulate_frontend
from oawm.pipelines import relative_error_dB
from oawm.signalkit import dft

from .conftest import make_system, random_signal

TRUE_DRIFT = DriftParams([0.0, 0.5, -1.2, 2.0], 4e-12)


@pytest.fixture(scope="module")
def loopback():
    comb, fe, adc = make_system()
    fe = dataclasses.replace(fe, iq_phase_deg=(84, 86, 88, 89),
                             delays=tuple(np.add(fe.delays, [0, 0.8e-12, -0.6e-12, 0.5e-12])))
    w = random_signal(fe, duration=25e-9)
    rec = simulate_frontend(w, comb, fe, adc, TRUE_DRIFT, "none")
    cal = calibration_from_model(comb, fe, adc)
    return comb, fe, adc, w, rec, cal


def same_drift(a: DriftParams, b: DriftParams, f_FSR, M, tol):
    """Drift factors equal up to a common phase."""
    fa, fb = a.factors(f_FSR, M), b.factors(f_FSR, M)
    r = fa * np.conj(fb)
    return np.max(np.abs(r - r[0, 0])) < tol


def test_loopback_true_drift(loopback):
    comb, fe, adc, w, rec, cal = loopback
    res = recon.reconstruct(rec, cal, drift=TRUE_DRIFT)
    assert relative_error_dB(res, dft(w)) < -60
    assert res.diagnostics["n_flagged"] == 0


def test_loopback_estimated_drift(loopback):
    comb, fe, adc, w, rec, cal = loopback
    res = recon.reconstruct(rec, cal, drift="estimate")
    assert same_drift(res.drift_estimate, TRUE_DRIFT, comb.f_FSR, comb.M, 1e-3)
    assert res.drift_estimate.phi_F[0] == 0.0
    # the estimate carries an unobservable common phase; fit one complex gain
    s = res.stitched_spectrum
    ref = dft(w)
    k0 = int(round((s.f_start - ref.f_start) / ref.df))
    t = ref.bins[k0:k0 + len(s)]
    g = np.vdot(s.bins, t) / np.vdot(s.bins, s.bins)
    e = np.sum(np.abs(g * s.bins - t) ** 2) / np.sum(np.abs(t) ** 2)
    assert 10 * np.log10(e) < -60
    assert abs(abs(g) - 1) < 1e-6


def test_wrong_drift_degrades(loopback):
    comb, fe, adc, w, rec, cal = loopback
    res = recon.reconstruct(rec, cal, drift="none")
    assert relative_error_dB(res, dft(w)) > -20


def test_gauge_invariance(loopback):
    comb, fe, adc, w, rec, cal = loopback
    a = recon.reconstruct(rec, cal, drift=TRUE_DRIFT).stitched_spectrum
    shifted = DriftParams(TRUE_DRIFT.phi_F + 0.9, TRUE_DRIFT.tau_LO)
    b = recon.reconstruct(rec, cal, drift=shifted).stitched_spectrum
    assert np.max(np.abs(np.abs(a.bins) - np.abs(b.bins))) < 1e-9 * np.abs(a.bins).max()


def test_drift_rows_are_unit_phasors(system4):
    comb, fe, adc = system4
    cal = calibration_from_model(comb, fe, adc)
    f = np.linspace(0, adc.B, 9)
    H0 = recon.build_matrix(cal, None, f).matrix
    H1 = recon.build_matrix(cal, TRUE_DRIFT, f).matrix
    assert np.allclose(np.abs(np.linalg.det(H0)), np.abs(np.linalg.det(H1)), rtol=1e-9)
    assert np.allclose(np.abs(H0), np.abs(H1))


def test_unitary_inverse_is_scaled_adjoint(system4):
    comb, fe, adc = system4
    H = forward_transfer(comb, fe, adc, None, np.linspace(0, adc.B, 5))
    inv = recon.invert_matrix_set(H)
    A = H.matrix
    c = np.einsum("kij,kij->k", A.conj(), A).real / A.shape[1]
    adj = np.conj(np.swapaxes(A, 1, 2)) / c[:, None, None]
    assert np.allclose(inv.inverse, adj, atol=1e-9 * np.abs(inv.inverse).max())
    assert np.allclose(inv.cond, 1.0)
    assert not inv.flagged.any()


def test_singular_bins_are_flagged():
    from oawm.types import TransferMatrixSet

    A = np.stack([np.eye(2, dtype=complex), np.array([[1, 1], [1, 1 + 1e-9]], complex)])
    inv = recon.invert_matrix_set(TransferMatrixSet([0.0, 1.0], A), rcond_threshold=1e-6)
    assert inv.flagged.tolist() == [False, True]
    reg = recon.invert_matrix_set(TransferMatrixSet([0.0, 1.0], A), tikhonov=1e-3)
    assert np.all(np.isfinite(reg.inverse))
    assert np.abs(reg.inverse[1]).max() < 1e4
    with pytest.raises(ValueError):
        recon.invert_matrix_set(TransferMatrixSet([0.0], np.ones((1, 2, 4), complex)))


def test_interpolation_and_extrapolation(system4):
    comb, fe, adc = system4
    cal = calibration_from_model(comb, fe, adc, n_points=41)
    HI, _ = recon.interpolate_calibration(cal, cal.f_grid[3:5])
    assert np.allclose(HI, cal.H_I[3:5])
    with pytest.raises(ValueError, match="exceed calibration span"):
        recon.interpolate_calibration(cal, [adc.B * 1.1])
    HI, _ = recon.interpolate_calibration(cal, [adc.B + 1e6], max_extrapolation=2e6)
    assert np.allclose(HI[0], cal.H_I[-1])


def test_stitch_constant_slices():
    kB = 20
    sl = np.ones((3, 2 * kB + 1), complex)
    spec, wts = recon.stitch(sl, [0, 30, 60], kB, 1.0, weights_mode="equal", return_weights=True)
    assert np.allclose(spec.bins, 1.0)
    assert np.allclose(wts.sum(axis=0), 1.0)
    assert spec.f_start == -kB and len(spec) == 60 + 2 * kB + 1
    with pytest.raises(ValueError):
        recon.stitch(sl, [0, 30, 60], kB, 1.0, weights_mode="mrc")


def test_stitch_mrc_prefers_low_noise():
    kB = 20
    sl = np.stack([np.ones(2 * kB + 1), 2 * np.ones(2 * kB + 1)]).astype(complex)
    var = np.stack([np.full(2 * kB + 1, 1.0), np.full(2 * kB + 1, 100.0)])
    spec = recon.stitch(sl, [0, 30], kB, 1.0, variances=var, taper_fraction=0.0)
    k = spec.index_of(15)
    assert abs(spec.bins[k] - 1.0) < 0.02


def test_estimate_drift_preconditions(system4):
    comb, fe, adc = make_system(N=1)
    cal = calibration_from_model(comb, fe, adc)
    w = random_signal(fe, N=1)
    rec = simulate_frontend(w, comb, fe, adc, None, "none")
    with pytest.raises(ValueError, match="two comb tones"):
        recon.estimate_drift(rec, cal)


def test_channel_mismatch(loopback):
    comb, fe, adc, w, rec, cal = loopback
    c2, f2, a2 = make_system(N=2)
    with pytest.raises(ValueError):
        recon.reconstruct(rec, calibration_from_model(c2, f2, a2), drift="none")

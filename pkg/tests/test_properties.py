"""Property-based checks of the structural invariants."""

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oawm import DriftParams, budget as bm, recon
from oawm.budget import BudgetParams
from oawm.frontend import calibration_from_model, evaluate_linear_model, forward_transfer, simulate_frontend
from oawm.signalkit import SampledWaveform, dft, idft

from .conftest import make_system, random_signal

FAST = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
SLOW = settings(max_examples=6, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
complex_arrays = arrays(np.complex128, st.integers(1, 257),
                        elements=st.builds(complex, finite, finite))
phases = st.lists(st.floats(-math.pi, math.pi), min_size=4, max_size=4)
sndr_dB = st.floats(-20, 250, allow_nan=False)


@FAST
@given(x=complex_arrays, fs=st.floats(1e3, 1e12))
def test_parseval(x, fs):
    w = SampledWaveform(x, fs)
    s = dft(w)
    e = w.energy
    assert s.energy == pytest.approx(e, rel=1e-10, abs=1e-300)


@FAST
@given(x=complex_arrays, fs=st.floats(1e3, 1e12), shift=st.integers(-300, 300))
def test_dft_roundtrip(x, fs, shift):
    w = SampledWaveform(x, fs)
    s = dft(w, f_start=shift * fs / len(x))
    back = idft(s)
    scale = max(np.abs(x).max(), 1e-300)
    assert back.sample_rate == pytest.approx(fs, rel=1e-12)
    assert np.abs(back.samples - x).max() <= 1e-10 * scale


@SLOW
@given(N=st.sampled_from([1, 2, 4]), phi=phases, tau=st.floats(0, 20e-12),
       iq=st.lists(st.floats(80, 100), min_size=4, max_size=4), seed=st.integers(0, 2**16))
def test_simulation_matches_linear_model(N, phi, tau, iq, seed):
    comb, fe, adc = make_system(N=N, iq_phase_deg=tuple(iq[:N]))
    w = random_signal(fe, N=N, duration=10e-9, seed=seed)
    d = DriftParams([0.0] + phi[1:N], tau)
    sim = simulate_frontend(w, comb, fe, adc, d, "none")
    lin = evaluate_linear_model(w, comb, fe, adc, d, adc.f_s)
    e = np.sum((sim.I - lin.I) ** 2) + np.sum((sim.Q - lin.Q) ** 2)
    assert 10 * np.log10(e / (np.sum(lin.I ** 2) + np.sum(lin.Q ** 2))) < -90


@FAST
@given(N=st.sampled_from([1, 2, 3, 4, 6, 8]), f=st.floats(0, 1))
def test_evenly_delayed_front_end_is_unitary(N, f):
    comb, fe, adc = make_system(N=N)
    H = forward_transfer(comb, fe, adc, None, [f * adc.B]).matrix[0]
    G = H.conj().T @ H
    c = np.trace(G).real / (2 * N)
    assert np.abs(G - c * np.eye(2 * N)).max() < 1e-9 * c


@pytest.fixture(scope="module")
def gauge_setup():
    comb, fe, adc = make_system()
    w = random_signal(fe, duration=10e-9)
    d = DriftParams([0.0, 0.5, -1.2, 2.0], 4e-12)
    rec = simulate_frontend(w, comb, fe, adc, d, "none")
    cal = calibration_from_model(comb, fe, adc)
    ref = recon.reconstruct(rec, cal, drift=d).stitched_spectrum
    return rec, cal, d, ref


@SLOW
@given(offset=st.floats(-math.pi, math.pi), k=st.integers(-2, 2))
def test_common_phase_is_a_gauge(gauge_setup, offset, k):
    rec, cal, d, ref = gauge_setup
    f_FSR = cal.metadata["f_FSR"]
    # a common phase and a whole period of the LO delay leave the magnitude untouched
    shifted = DriftParams(d.phi_F + offset, d.tau_LO + k / f_FSR)
    s = recon.reconstruct(rec, cal, drift=shifted).stitched_spectrum
    assert np.abs(np.abs(s.bins) - np.abs(ref.bins)).max() < 1e-9 * np.abs(ref.bins).max()


@FAST
@given(vals=st.lists(sndr_dB, min_size=1, max_size=8), perm=st.randoms())
def test_combine_commutative(vals, perm):
    shuffled = list(vals)
    perm.shuffle(shuffled)
    assert bm.combine(shuffled).total_SNDR_dB == pytest.approx(bm.combine(vals).total_SNDR_dB, abs=1e-9)


@FAST
@given(a=st.lists(sndr_dB, min_size=1, max_size=5), b=st.lists(sndr_dB, min_size=1, max_size=5))
def test_combine_partial_totals(a, b):
    whole = bm.combine(a + b).total_SNDR_dB
    staged = bm.combine([bm.combine(a).total_SNDR_dB, bm.combine(b).total_SNDR_dB]).total_SNDR_dB
    assert staged == pytest.approx(whole, abs=1e-9)


@FAST
@given(vals=st.lists(st.floats(-20, 150), min_size=1, max_size=6), extra=st.floats(-20, 150))
def test_combine_monotone(vals, extra):
    t = bm.combine(vals).total_SNDR_dB
    assert t <= min(vals) + 1e-9
    assert bm.combine(vals + [extra]).total_SNDR_dB <= t + 1e-12


@FAST
@given(N1=st.integers(1, 64), N2=st.integers(1, 64), B_opt=st.floats(20e9, 800e9))
def test_shot_and_equal_jitter_do_not_depend_on_N(N1, N2, B_opt):
    p1 = BudgetParams(N=N1, B_opt=B_opt, enforce_cap=False)
    p2 = BudgetParams(N=N2, B_opt=B_opt, enforce_cap=False)
    assert bm.sndr_shot(p1) == pytest.approx(bm.sndr_shot(p2), abs=1e-9)
    assert bm.sndr_jitter(p1) == pytest.approx(bm.sndr_jitter(p2), abs=1e-9)


@FAST
@given(N=st.integers(1, 50), B_opt=st.floats(20e9, 800e9))
def test_adc_gains_ten_dB_per_decade_of_N(N, B_opt):
    a = bm.sndr_adc(BudgetParams(N=N, B_opt=B_opt, enforce_cap=False))
    b = bm.sndr_adc(BudgetParams(N=10 * N, B_opt=B_opt, enforce_cap=False))
    assert b - a == pytest.approx(10.0, abs=1e-9)

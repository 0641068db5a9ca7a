import warnings

import numpy as np
import pytest

from oawm import ADCConfig, CombLO, FrontEndConfig, RandomSignalSpec
from oawm.signalkit import gen_random_test_signal


@pytest.fixture(autouse=True)
def _quiet_clipping():
    from oawm.frontend import ClippingWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClippingWarning)
        yield


def make_system(N=4, f_FSR=40e9, B=21e9, f_s=50e9, ideal=True, **fe_kw):
    fe = FrontEndConfig.evenly_delayed(N, f_FSR, **fe_kw)
    comb = CombLO.centered(N, f_FSR, fe.P_LO_nominal)
    adc = ADCConfig(B=B, f_s=f_s, headroom_sigma=None) if ideal else ADCConfig(B=B, f_s=f_s)
    return comb, fe, adc


def random_signal(fe, N=4, f_FSR=40e9, duration=20e-9, sample_rate=400e9, seed=1):
    spec = RandomSignalSpec(fe.P_S_nominal, N * f_FSR, 0.0, seed)
    return gen_random_test_signal(spec, duration, sample_rate)


@pytest.fixture
def system4():
    return make_system()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

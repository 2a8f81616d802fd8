import numpy as np
import pytest

from chaosfilt.lyapunov import lyapunov_spectrum
from chaosfilt.model import ModelParams


@pytest.fixture(scope="module")
def short_spectrum():
    return lyapunov_spectrum(ModelParams(10, 8.0), t_total=150.0, renorm_interval=0.5,
                             transient=20.0, seed=0)


def test_sum_equals_phase_volume_contraction(short_spectrum):
    # the Jacobian trace is -J everywhere, so the exponents sum to -J
    assert short_spectrum.sum == pytest.approx(-10.0, rel=1e-6)


def test_sorted_with_one_neutral_exponent(short_spectrum):
    lam = short_spectrum.exponents
    assert np.all(np.diff(lam) <= 0)
    assert lam[0] > 0.5
    # the flow direction carries a zero exponent
    assert np.min(np.abs(lam)) < 0.05
    assert short_spectrum.n_positive == int(np.sum(lam > short_spectrum.tol))


def test_summary_fields(short_spectrum):
    s = short_spectrum.summary({"J": 10})
    assert s["n_positive"] == short_spectrum.n_positive
    assert s["params"] == {"J": 10}


def test_fixed_point_regime_has_no_positive_exponent():
    # F = 0.5 is below the first bifurcation: a stable fixed point
    res = lyapunov_spectrum(ModelParams(8, 0.5), t_total=60.0, transient=20.0, seed=0)
    assert res.n_positive == 0
    assert res.sum == pytest.approx(-8.0, rel=1e-6)


def test_rejects_transient_longer_than_run():
    with pytest.raises(ValueError):
        lyapunov_spectrum(ModelParams(8, 8.0), t_total=10.0, transient=10.0)

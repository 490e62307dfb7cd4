import math

import numpy as np
import pytest
from sklearn.base import clone

from clup.engine import run_clup
from clup.model import ClupConfig, FixedVector, generate_instance
from clup.estimator import ClupDetector


@pytest.fixture(scope="module")
def inst():
    return generate_instance(80, 0.8, 0.2238, 21)


def test_fit_matches_engine(inst):
    x0 = np.where(np.arange(80) % 3 == 0, 1.0, -1.0)
    det = ClupDetector(r_sc=1.5, max_iters=5, x0=x0).fit(inst.A, inst.y)
    run = run_clup(inst, ClupConfig(r_sc=1.5, max_iters=5, init=FixedVector(x0)))
    np.testing.assert_array_equal(det.x_continuous_, run.final.x_s)
    assert det.n_iter_ == 5 and det.n_features_in_ == 80
    assert np.all(np.abs(det.coef_) == 1 / math.sqrt(80))
    assert det.error_rate(inst.x_sol) == pytest.approx(run.final.p_err)


def test_predict(inst):
    det = ClupDetector(r_sc=1.5, max_iters=3, seed=2).fit(inst.A, inst.y)
    np.testing.assert_allclose(det.predict(inst.A), inst.A @ det.coef_)
    assert det.error_rate(inst.x_sol) < 0.3


def test_sklearn_protocol(inst):
    det = ClupDetector(r_sc=2.0, max_iters=4)
    params = det.get_params()
    assert params["r_sc"] == 2.0 and params["max_iters"] == 4
    twin = clone(det).set_params(max_iters=2)
    assert twin.max_iters == 2 and det.max_iters == 4
    with pytest.raises(Exception):
        det.predict(inst.A)

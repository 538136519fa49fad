import numpy as np
import pytest

from fedcox import _pykernels
from fedcox.survival import loss_terms
from oracles import random_dataset

ck = pytest.importorskip("fedcox._ckernels")


def _inputs(d, beta):
    X, event, group_start = d._sorted
    return np.ascontiguousarray(X), np.ascontiguousarray(X @ beta), event, group_start


@pytest.mark.parametrize("order", [0, 1, 2])
def test_cox_terms_parity(order):
    rng = np.random.default_rng(99)
    for _ in range(100):
        d = random_dataset(rng)
        beta = rng.normal(size=d.n_features)
        args = _inputs(d, beta)
        a = _pykernels.cox_terms(*args, order)
        b = ck.cox_terms(*args, order)
        assert a[0] == pytest.approx(b[0], rel=1e-12, abs=1e-12)
        for x, y in zip(a[1:], b[1:]):
            if x is None:
                assert y is None
            else:
                np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)


def test_concordance_counts_identical():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(1, 60))
        time = rng.integers(0, 10, n).astype(float)
        event = (rng.random(n) < 0.5).astype(np.uint8)
        risk = rng.integers(-3, 3, n).astype(float)
        assert tuple(_pykernels.concordance_counts(time, event, risk)) == tuple(
            ck.concordance_counts(time, event, risk)
        )


def test_empty_input():
    X = np.zeros((0, 2))
    empty = np.zeros(0)
    for mod in (_pykernels, ck):
        loss, g, H = mod.cox_terms(X, empty, np.zeros(0, np.uint8), np.zeros(0, np.int64), 2)
        assert loss == 0.0
        assert g.shape == (2,) and H.shape == (2, 2)


def test_loss_terms_uses_selected_backend(backend):
    d = random_dataset(np.random.default_rng(1), n=20, p=2)
    loss, g, H = loss_terms(d, np.array([0.1, -0.2]), 0.0, 2)
    assert np.isfinite(loss) and g.shape == (2,) and H.shape == (2, 2)


def test_concordance_counts_large_with_ties():
    rng = np.random.default_rng(8)
    for n in (500, 2000):
        time = rng.integers(0, n // 10, n).astype(float)
        event = rng.random(n) < 0.4
        risk = np.round(rng.normal(size=n), 1)
        assert tuple(_pykernels.concordance_counts(time, event, risk)) == tuple(
            ck.concordance_counts(time, event, risk)
        )

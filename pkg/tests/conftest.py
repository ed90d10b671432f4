import numpy as np
import pytest

from tprcap import tensor as T
from tprcap.captioner import Dims, Model
from tprcap.cell import VARIANTS

SMALL = Dims(d=8, m=6, k_v=5, k_S=4, V=12, d_emb=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dims():
    return SMALL


@pytest.fixture(params=sorted(VARIANTS))
def variant_name(request):
    return request.param


def make_model(name="e+dt", dims=SMALL, seed=0, **kw):
    return Model.build(dims, VARIANTS[name], seed=seed, **kw)


def gradcheck(fn, inputs, rng, eps=1e-5, tol=1e-6):
    """Compare backward() of sum(w * fn(*inputs)) with central differences."""
    params = [T.parameter(x) for x in inputs]
    out = fn(*params)
    w = rng.uniform(-1, 1, size=out.shape)
    T.backward(T.weighted_sum(out, w))

    def loss():
        with T.no_grad():
            return float((fn(*params).data * w).sum())

    numeric = T.finite_diff(loss, params, eps)
    for p in params:
        err = T.relative_error(p.grad, numeric[p]).max()
        assert err < tol, f"relative gradient error {err:.2e}"


# acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

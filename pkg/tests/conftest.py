import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dofprop.graph import GraphBuilder

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


def quadratic_form(m):
    """Graph for 0.5 x^T M x built from Mul and affine nodes only."""
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    b = GraphBuilder(n)
    xs = b.inputs
    prods, weights = [], []
    for i in range(n):
        for j in range(i, n):
            prods.append(b.mul(xs[i], xs[j]))
            weights.append(0.5 * m[i, i] if i == j else m[i, j])
    b.affine(prods, weights)
    return b.build()


def sum_of_squares(n, act="square"):
    b = GraphBuilder(n)
    sq = [b.unary(act, x) for x in b.inputs]
    b.affine(sq, [1.0] * n)
    return b.build()


def x1sq_x2():
    """x1^2 * x2 on two inputs."""
    b = GraphBuilder(2)
    x1, x2 = b.inputs
    b.mul(b.unary("square", x1), x2)
    return b.build()


def sym(rng, n):
    a = rng.standard_normal((n, n))
    return 0.5 * (a + a.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

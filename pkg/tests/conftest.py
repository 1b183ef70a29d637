import numpy as np
import pytest

from opstab import deeponet as dn
from opstab import problems as pb
from opstab import training as tr
from opstab.attacks import AttackConfig


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(b), 1e-300)
    return np.linalg.norm(a - b) / denom


def central_diff(fn, x, h):
    """Central finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    xf = x.reshape(-1)
    for j in range(xf.size):
        xp, xm = xf.copy(), xf.copy()
        xp[j] += h
        xm[j] -= h
        flat[j] = (fn(xp.reshape(x.shape)) - fn(xm.reshape(x.shape))) / (2 * h)
    return g


FLAGSHIP = {
    "poisson1d": dict(steps=20000, learning_rate=5e-4),
    "antiderivative": dict(steps=12000, learning_rate=5e-4),
}


def flagship_train_config(kind, seed):
    prob = pb.default_problem(kind)
    return tr.TrainConfig(
        problem=prob, arch=pb.default_arch(prob), batch_size=32, seed=seed,
        attack=AttackConfig(epsilon=0.1, relative=True, n_iter=20),
        **FLAGSHIP[kind])


@pytest.fixture(scope="session")
def trained_poisson_baseline():
    """Shared desk-scale baseline model for the 1-d elliptic problem.

    Used by the attack-effectiveness and training-quality tests and by
    the acceptance module (same configuration, so one training run
    serves all of them).
    """
    cfg = flagship_train_config("poisson1d", seed=0)
    result = tr.train_baseline(cfg)
    return cfg.problem, result.params

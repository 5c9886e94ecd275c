import numpy as np
import pytest

from diffmerge import ParamSet


def finite_difference_grads(f, params: ParamSet, h: float = 1e-5) -> dict:
    """Central-difference gradient of a scalar function of a ParamSet.

    Independent of the autodiff engine: perturbs one entry at a time and
    re-evaluates ``f`` from scratch.
    """
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = g.ravel()
        base = arr.copy()
        for k in range(arr.size):
            for sign in (+1.0, -1.0):
                bumped = base.copy()
                bumped.ravel()[k] += sign * h
                entries = {n: (bumped if n == name else v) for n, v in params.items()}
                val = f(ParamSet(entries))
                flat[k] += sign * val / (2.0 * h)
        grads[name] = g
    return grads


def assert_close_rel(actual, expected, rel: float, abs_floor: float = 0.0, msg: str = ""):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    denom = np.maximum(np.abs(actual), np.abs(expected))
    tol = np.maximum(rel * denom, abs_floor)
    diff = np.abs(actual - expected)
    assert np.all(diff <= tol), (
        f"{msg} max diff {diff.max():.3e} exceeds tolerance "
        f"(rel={rel}, floor={abs_floor}); worst pair "
        f"{actual.ravel()[diff.argmax()]} vs {expected.ravel()[diff.argmax()]}"
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

import numpy as np
import pytest


def rand_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def rand_off_zero(rng, *shape):
    z = rand_complex(rng, *shape)
    return z + (np.abs(z) < 0.3) * (0.5 + 0.5j)


def assert_close(got, want, rel=1e-5, floor=1e-8, label=""):
    got = np.asarray(got)
    want = np.asarray(want)
    err = np.abs(got - want)
    tol = np.maximum(rel * np.abs(want), floor)
    if not np.all(err <= tol):
        worst = float(np.max(err - tol))
        raise AssertionError(f"{label or 'values'} differ: worst excess {worst:.3e}\n"
                             f"got  {got}\nwant {want}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

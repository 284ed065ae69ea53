import numpy as np
import pytest

from cfflab import autodiff as ad


def central_difference(f, arrays, h=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. each array, perturbed in place."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = a[i]
            a[i] = orig + h
            up = f()
            a[i] = orig - h
            down = f()
            a[i] = orig
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b, floor=0.0):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def check_gradients(build, shapes_or_arrays, rng=None, tol=1e-6, h=1e-5):
    """Compare tape gradients of ``build(*tensors)`` (scalar) against central differences.

    Returns the worst relative error.
    """
    rng = rng or np.random.default_rng(0)
    arrays = [np.asarray(s, dtype=np.float64).copy() if not isinstance(s, tuple) else rng.standard_normal(s)
              for s in shapes_or_arrays]
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        loss = build(*tensors)
    analytic = tape.grad(loss, tensors)

    def f():
        return float(build(*[ad.Tensor(a) for a in arrays]).values)

    numeric = central_difference(f, arrays, h)
    # Tensors whose true gradient vanishes (e.g. a key bias under softmax) are
    # compared against the overall gradient scale instead of their own.
    floor = 1e-4 * max(np.linalg.norm(g) for g in analytic)
    worst = max(rel_err(x, y, floor) for x, y in zip(analytic, numeric))
    assert worst < tol, f"relative error {worst:.3g} >= {tol}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

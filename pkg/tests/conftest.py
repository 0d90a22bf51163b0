import numpy as np
import pytest

from epmap.endpoint import make_problem
from epmap.polyalg import Polynomial, PolyVectorField
from epmap.signals import ControlSignal, QuasiTrigPoly, parse_control


def example_fields(p: int, n: int = 3):
    """The R^3 family: f1 = d/dx1, f2 = (1 - x1) d/dx2 + x1^p d/dx3."""
    x1 = Polynomial.var(n, 0)
    one, zero = Polynomial.const(n, 1.0), Polynomial.zero(n)
    f1 = PolyVectorField([one, zero, zero])
    f2 = PolyVectorField([zero, one - x1, x1**p])
    return [f1, f2]


_PROBLEM_CACHE = {}


def example_problem(p: int):
    if p not in _PROBLEM_CACHE:
        u = parse_control(["0", "1"])
        _PROBLEM_CACHE[p] = make_problem(example_fields(p), u, [0.0, 0.0, 0.0])
    return _PROBLEM_CACHE[p]


def example_v() -> ControlSignal:
    """v = (2 pi sin(2 pi t), 1), the kernel control of the worked example."""
    return ControlSignal(
        [QuasiTrigPoly.trig(1, "sin", c=2.0 * np.pi), QuasiTrigPoly.const(1.0)]
    )


def random_kernel_control(rng: np.random.Generator, max_freq: int = 3) -> ControlSignal:
    """Random trig control in ker(d_0 G) of the builtin family.

    Channel-1 trig terms are automatically zero-mean; the channel-2
    constant compensates the moment int (t-1) v1 dt.
    """
    v1 = QuasiTrigPoly.zero()
    for j in range(1, max_freq + 1):
        v1 = v1 + QuasiTrigPoly.trig(j, "sin", c=float(rng.uniform(-2, 2)))
        v1 = v1 + QuasiTrigPoly.trig(j, "cos", c=float(rng.uniform(-2, 2)))
    tm1 = QuasiTrigPoly.monomial(1) - 1.0
    moment = (tm1 * v1).antiderivative().eval(1.0)
    v2 = QuasiTrigPoly.const(-moment) + QuasiTrigPoly.trig(
        1, "cos", c=float(rng.uniform(-1, 1))
    )
    return ControlSignal([v1, v2])


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)

"""Named coefficient families, Robin fields, drivers, domains and torus test functions.

Names follow the config syntax ``name(arg, ...)``:

families
    identity                  A = I, b = 0
    layered(amp)              A = diag(1/(1 + amp sin 2 pi x1), 1), b = 0
    admissible(amp)           A = I, b = grad m/(2m), m = 1 + amp sin 2 pi x1
    checkerboard-smooth(amp)  A = (1 + amp sin 2 pi x1 sin 2 pi x2) I, b = 0
robin
    const(kappa)              c = kappa <= 0
    oscillating(mean, amp)    c = mean + amp sin 2 pi eta1
drivers f
    zero, decay (-y), decay-tilt(beta) (-y + beta z1), quadratic-gradient (min(|z|^2, 1))
terminal g
    one, paraboloid(kappa) (1 - kappa |x|^2)
domains
    disk(radius), ellipse(a, b)
test functions
    zero, one, sin(k), cos(k) of 2 pi k eta1
"""

import re
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from tools.coefficients import Driver, PeriodicCoefficients, make_admissible_drift
from tools.domain import ConvexDomain
from tools.errors import ConfigError

TWO_PI = 2.0 * np.pi
Z_BOUND = 4.0

_SPEC = re.compile(r"^\s*([A-Za-z][\w-]*)\s*(?:\((.*)\))?\s*$")


def parse_spec(spec: str) -> Tuple[str, List[float]]:
    """'layered(0.5)' -> ('layered', [0.5])."""
    match = _SPEC.match(spec)
    if not match:
        raise ConfigError(f"cannot parse '{spec}'; expected name or name(args)")
    name, args = match.group(1), match.group(2)
    try:
        values = [float(a) for a in args.split(",")] if args and args.strip() else []
    except ValueError as exc:
        raise ConfigError(f"non-numeric argument in '{spec}'") from exc
    return name, values


def _expect(name: str, args: Sequence[float], count: int, defaults: Sequence[float] = ()) -> List[float]:
    values = list(args) + list(defaults[len(args):])
    if len(values) != count:
        raise ConfigError(f"'{name}' takes {count} argument(s), got {len(args)}")
    return values


def _robin_field(spec: str) -> Tuple[Callable[[np.ndarray], np.ndarray], float]:
    name, args = parse_spec(spec)
    if name == "const":
        (kappa,) = _expect(name, args, 1, (-1.0,))
        if kappa > 0:
            raise ConfigError(f"Robin constant must be nonpositive, got {kappa}")

        def c_const(y):
            return np.full(y.shape[0], kappa)

        return c_const, -kappa
    if name == "oscillating":
        mean, amp = _expect(name, args, 2, (-1.0, 0.5))
        if mean + abs(amp) > 0:
            raise ConfigError(f"oscillating Robin field must stay nonpositive: mean={mean}, amp={amp}")

        def c_osc(y):
            return mean + amp * np.sin(TWO_PI * y[:, 0])

        return c_osc, -(mean - abs(amp))
    raise ConfigError(f"unknown Robin field '{name}'")


def robin_field(spec: str) -> Callable[[np.ndarray], np.ndarray]:
    return _robin_field(spec)[0]


def coefficient_family(spec: str, robin: str = "const(-1)", dim: int = 2) -> PeriodicCoefficients:
    """Build the named family with the given Robin field."""
    name, args = parse_spec(spec)
    c, alpha = _robin_field(robin)
    label = f"{spec.strip()}|{robin.strip()}"

    def zeros(y):
        return np.zeros((y.shape[0], dim))

    def identity(y):
        return np.broadcast_to(np.eye(dim), (y.shape[0], dim, dim)).copy()

    if name == "identity":
        _expect(name, args, 0)
        return PeriodicCoefficients(dim, identity, zeros, zeros, c, alpha, 1.0, label, constant_a=True)

    if name == "layered":
        (amp,) = _expect(name, args, 1, (0.5,))
        if not 0 <= amp < 1:
            raise ConfigError(f"layered amplitude must lie in [0, 1), got {amp}")

        def a_layered(y):
            out = identity(y)
            out[:, 0, 0] = 1.0 / (1.0 + amp * np.sin(TWO_PI * y[:, 0]))
            return out

        def div_layered(y):
            out = zeros(y)
            s = 1.0 + amp * np.sin(TWO_PI * y[:, 0])
            out[:, 0] = -amp * TWO_PI * np.cos(TWO_PI * y[:, 0]) / s ** 2
            return out

        return PeriodicCoefficients(dim, a_layered, div_layered, zeros, c, alpha, 1.0 / (1.0 - amp), label)

    if name == "admissible":
        (amp,) = _expect(name, args, 1, (0.5,))
        if not 0 <= amp < 1:
            raise ConfigError(f"admissible amplitude must lie in [0, 1), got {amp}")

        def m_target(y):
            return 1.0 + amp * np.sin(TWO_PI * y[:, 0])

        def grad_m(y):
            out = zeros(y)
            out[:, 0] = amp * TWO_PI * np.cos(TWO_PI * y[:, 0])
            return out

        b = make_admissible_drift(identity, m_target, grad_m, dim)
        return PeriodicCoefficients(dim, identity, zeros, b, c, alpha, 1.0, label, constant_a=True)

    if name == "checkerboard-smooth":
        (amp,) = _expect(name, args, 1, (0.5,))
        if not 0 <= amp < 1:
            raise ConfigError(f"checkerboard amplitude must lie in [0, 1), got {amp}")

        def scale(y):
            return 1.0 + amp * np.sin(TWO_PI * y[:, 0]) * np.sin(TWO_PI * y[:, 1])

        def a_check(y):
            return scale(y)[:, None, None] * identity(y)

        def div_check(y):
            out = zeros(y)
            out[:, 0] = amp * TWO_PI * np.cos(TWO_PI * y[:, 0]) * np.sin(TWO_PI * y[:, 1])
            out[:, 1] = amp * TWO_PI * np.sin(TWO_PI * y[:, 0]) * np.cos(TWO_PI * y[:, 1])
            return out

        return PeriodicCoefficients(dim, a_check, div_check, zeros, c, alpha, 1.0 / (1.0 - amp), label)

    raise ConfigError(f"unknown coefficient family '{name}'")


def admissible_target(spec: str) -> Optional[Callable[[np.ndarray], np.ndarray]]:
    """The invariant density built into an admissible(amp) family, else None."""
    name, args = parse_spec(spec)
    if name != "admissible":
        return None
    (amp,) = _expect(name, args, 1, (0.5,))

    def m_target(y):
        return 1.0 + amp * np.sin(TWO_PI * y[:, 0])

    return m_target


def _terminal(spec: str, radius: float):
    name, args = parse_spec(spec)
    if name == "one":
        _expect(name, args, 0)

        def g_one(x):
            return np.ones(x.shape[0])

        def g_one_radial(r):
            return np.ones_like(r)

        return g_one, g_one_radial, 1.0
    if name == "paraboloid":
        (kappa,) = _expect(name, args, 1, (0.5,))

        def g_para(x):
            return 1.0 - kappa * np.sum(x * x, axis=1)

        def g_para_radial(r):
            return 1.0 - kappa * r ** 2

        return g_para, g_para_radial, max(1.0, abs(1.0 - kappa * radius ** 2))
    raise ConfigError(f"unknown terminal condition '{name}'")


def driver(f_spec: str = "zero", g_spec: str = "one", radius: float = 1.0) -> Driver:
    """Driver f with terminal value g; radius bounds |g| on the domain."""
    g, g_radial, g_sup = _terminal(g_spec, radius)
    name, args = parse_spec(f_spec)
    label = f"{f_spec.strip()}|{g_spec.strip()}"

    if name == "zero":
        _expect(name, args, 0)

        def f_zero(x, y, z):
            return np.zeros_like(y, dtype=float)

        def f_zero_radial(r, y, zr):
            return np.zeros_like(y, dtype=float)

        return Driver(f_zero, g, 0.0, 0.0, 0.0, g_sup, True, label, f_zero_radial, g_radial)

    if name == "decay":
        _expect(name, args, 0)

        def f_decay(x, y, z):
            return -np.asarray(y, dtype=float)

        def f_decay_radial(r, y, zr):
            return -np.asarray(y, dtype=float)

        return Driver(f_decay, g, -1.0, 0.0, g_sup, g_sup, True, label, f_decay_radial, g_radial)

    if name == "decay-tilt":
        (beta,) = _expect(name, args, 1, (0.1,))

        def f_tilt(x, y, z):
            return -np.asarray(y, dtype=float) + beta * z[:, 0]

        return Driver(f_tilt, g, -1.0, abs(beta), g_sup + abs(beta) * Z_BOUND, g_sup, True, label)

    if name == "quadratic-gradient":
        _expect(name, args, 0)

        def f_quad(x, y, z):
            return np.minimum(np.sum(z * z, axis=1), 1.0)

        def f_quad_radial(r, y, zr):
            return np.minimum(zr * zr, 1.0)

        return Driver(f_quad, g, 0.0, 2.0, 1.0, g_sup, False, label, f_quad_radial, g_radial)

    raise ConfigError(f"unknown driver '{name}'")


def domain(spec: str) -> ConvexDomain:
    name, args = parse_spec(spec)
    if name == "disk":
        (radius,) = _expect(name, args, 1, (1.0,))
        return ConvexDomain.disk(radius)
    if name == "ellipse":
        a, b = _expect(name, args, 2, (2.0, 1.0))
        return ConvexDomain.ellipse((a, b))
    raise ConfigError(f"unknown domain '{name}'")


def torus_function(spec: str) -> Callable[[np.ndarray], np.ndarray]:
    """Torus function psi(eta) of the first coordinate."""
    name, args = parse_spec(spec)
    if name == "zero":
        return lambda y: np.zeros(y.shape[0])
    if name == "one":
        return lambda y: np.ones(y.shape[0])
    if name in ("sin", "cos"):
        (k,) = _expect(name, args, 1, (1.0,))
        trig = np.sin if name == "sin" else np.cos
        return lambda y: trig(TWO_PI * k * y[:, 0])
    raise ConfigError(f"unknown test function '{name}'")

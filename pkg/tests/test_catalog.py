from __future__ import annotations

import numpy as np
import pytest

from tools import catalog
from tools.errors import ConfigError


def test_parse_spec() -> None:
    assert catalog.parse_spec("layered(0.5)") == ("layered", [0.5])
    assert catalog.parse_spec(" identity ") == ("identity", [])
    assert catalog.parse_spec("ellipse(2, 1)") == ("ellipse", [2.0, 1.0])
    with pytest.raises(ConfigError):
        catalog.parse_spec("layered(a)")
    with pytest.raises(ConfigError):
        catalog.parse_spec("(0.5)")


def test_family_labels_carry_robin_field() -> None:
    coeffs = catalog.coefficient_family("layered(0.3)", robin="oscillating(-1, 0.5)")

    assert coeffs.name == "layered(0.3)|oscillating(-1, 0.5)"
    assert coeffs.alpha == pytest.approx(1.5)
    assert coeffs.lam == pytest.approx(1.0 / 0.7)


@pytest.mark.parametrize("spec", ["identity", "layered(0.5)", "admissible(0.5)", "checkerboard-smooth(0.5)"])
def test_divergence_matches_finite_differences(spec: str) -> None:
    coeffs = catalog.coefficient_family(spec)
    y = np.random.default_rng(2).uniform(size=(20, 2))
    h = 1e-5

    div = np.zeros((20, 2))
    for j in range(2):
        shift = np.zeros(2)
        shift[j] = h
        div += (coeffs.a(y + shift)[:, :, j] - coeffs.a(y - shift)[:, :, j]) / (2.0 * h)

    assert np.allclose(coeffs.div_a(y), div, atol=1e-6)


def test_admissible_target_only_for_admissible_family() -> None:
    target = catalog.admissible_target("admissible(0.4)")

    assert target(np.array([[0.25, 0.0]]))[0] == pytest.approx(1.4)
    assert catalog.admissible_target("layered(0.4)") is None


def test_invalid_catalog_entries() -> None:
    with pytest.raises(ConfigError):
        catalog.coefficient_family("layered(1.5)")
    with pytest.raises(ConfigError):
        catalog.coefficient_family("marble")
    with pytest.raises(ConfigError):
        catalog.robin_field("const(0.5)")
    with pytest.raises(ConfigError):
        catalog.robin_field("oscillating(-0.2, 0.5)")
    with pytest.raises(ConfigError):
        catalog.driver("cubic", "one")
    with pytest.raises(ConfigError):
        catalog.domain("square(1)")


def test_drivers_and_terminal_values() -> None:
    drv = catalog.driver("decay", "paraboloid(0.5)", radius=2.0)
    x = np.array([[0.0, 0.0], [1.0, 1.0]])

    assert np.allclose(drv.g(x), [1.0, 0.0])
    assert drv.g_sup == pytest.approx(1.0)
    assert np.allclose(drv.f(x, np.array([2.0, -1.0]), np.zeros((2, 2))), [-2.0, 1.0])
    assert np.allclose(drv.g_radial(np.array([0.0, 1.0])), [1.0, 0.5])


def test_domains() -> None:
    assert catalog.domain("disk(2)").bounding_radius == 2.0
    assert catalog.domain("ellipse(3, 1)").semi_axes == (3.0, 1.0)


def test_torus_functions() -> None:
    y = np.array([[0.25, 0.0], [0.5, 0.3]])

    assert np.allclose(catalog.torus_function("sin(1)")(y), [1.0, 0.0], atol=1e-12)
    assert np.allclose(catalog.torus_function("cos(2)")(y), [-1.0, 1.0])
    assert np.allclose(catalog.torus_function("one")(y), 1.0)
    with pytest.raises(ConfigError):
        catalog.torus_function("tan(1)")

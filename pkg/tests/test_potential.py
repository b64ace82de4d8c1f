import math

import pytest

from adiabat.field import make_builtin_field
from adiabat.potential import (
    eval_omega_kernel,
    eval_potential,
    eval_q0,
    eval_q2,
    langer_delta,
    make_effective_potential,
    potential_derivative,
)

_POINTS = (0.3, -1.2 + 0.4j, 2.0 + 1.5j, -0.1 - 0.8j)


def _nikitin_closed_form(b, delta_eps):
    def q2(s, T):
        u = b * b + s * s
        return (0.25 * delta_eps**2 * (1 + u**-3)
                - (1.5j * delta_eps / T) * s / u
                - (0.75 / T**2) * (2 * b * b + s * s) / u**2)
    return q2


@pytest.mark.parametrize("params", [
    {"b": 1.0, "delta_eps": 2.0, "mu": 1.0},
    {"b": 0.7, "delta_eps": 1.3, "mu": 0.8},
])
def test_q2_matches_closed_form(params):
    ep = make_effective_potential(make_builtin_field("nikitin", params),
                                  "full_q2")
    closed = _nikitin_closed_form(params["b"], params["delta_eps"])
    for s in _POINTS:
        for T in (3.0, 17.0):
            assert eval_q2(ep, s, T) == pytest.approx(closed(s, T), rel=1e-10)


def test_q0_values_and_large_T_limit():
    ep = make_effective_potential(make_builtin_field("nikitin"))
    assert eval_q0(ep, 0.0) == pytest.approx(2.0, rel=1e-14)
    berman = make_effective_potential(make_builtin_field("berman"))
    assert eval_q0(berman, 0.0) == pytest.approx(0.5, rel=1e-14)
    for s in _POINTS:
        assert eval_q2(ep, s, 1e9) == pytest.approx(eval_q0(ep, s), rel=1e-8)


def test_q0_is_meromorphic_across_component_cut():
    # The x component has a half-integer branch cut up the imaginary axis;
    # its square must not, so the potential agrees from both sides.
    ep = make_effective_potential(make_builtin_field("nikitin"))
    for height in (1.2, 1.5, 3.0):
        left = eval_q0(ep, complex(-1e-9, height))
        right = eval_q0(ep, complex(1e-9, height))
        assert left == pytest.approx(right, rel=1e-7)


def test_potential_derivatives_match_finite_difference():
    ep = make_effective_potential(make_builtin_field("nikitin"), "full_q2")
    s0, T = 0.4 + 0.2j, 9.0
    h = 1e-5
    fd1 = (eval_q2(ep, s0 + h, T) - eval_q2(ep, s0 - h, T)) / (2 * h)
    fd2 = (eval_q2(ep, s0 + h, T) - 2 * eval_q2(ep, s0, T)
           + eval_q2(ep, s0 - h, T)) / h**2
    assert potential_derivative(ep, s0, T) == pytest.approx(fd1, rel=1e-8)
    assert potential_derivative(ep, s0, T, order=2) == pytest.approx(fd2, rel=1e-4)


def test_mode_dispatch():
    profile = make_builtin_field("nikitin")
    leading = make_effective_potential(profile, "adiabatic_q0")
    corrected = make_effective_potential(profile, "full_q2")
    assert eval_potential(leading, 0.5) == eval_q0(leading, 0.5)
    assert eval_potential(corrected, 0.5, 7.0) == eval_q2(corrected, 0.5, 7.0)
    with pytest.raises(ValueError):
        eval_potential(corrected, 0.5)
    with pytest.raises(ValueError):
        make_effective_potential(profile, "wkb")


def test_langer_lists_follow_declared_pole_orders():
    nikitin = make_effective_potential(make_builtin_field("nikitin"))
    assert nikitin.poles == ((1j, 3), (-1j, 3))
    assert nikitin.langer == ()
    assert langer_delta(nikitin, 0.3) == 0

    berman = make_effective_potential(make_builtin_field("berman"))
    assert berman.langer == ((1j, 0.25), (-1j, 0.25))
    value = langer_delta(berman, 0.3)
    assert value.imag == pytest.approx(0.0, abs=1e-15)
    assert value.real == pytest.approx(-0.3829643969362848, rel=1e-12)


def test_omega_kernel_assembly_against_direct_formula():
    ep = make_effective_potential(make_builtin_field("berman"), "full_q2")
    s0, T = 0.7 + 0.3j, 11.0
    qt = eval_q2(ep, s0, T)
    qp = potential_derivative(ep, s0, T)
    qpp = potential_derivative(ep, s0, T, order=2)
    root = qt ** 0.5
    expected = (-0.25 * qpp / root**3 + (5.0 / 16.0) * qp**2 / root**5
                + langer_delta(ep, s0) / root)
    assert eval_omega_kernel(ep, s0, T) == pytest.approx(expected, rel=1e-12)
    bare = eval_omega_kernel(ep, s0, T, include_langer=False)
    assert bare == pytest.approx(expected - langer_delta(ep, s0) / root, rel=1e-12)


def test_omega_kernel_real_on_axis_and_integrable_near_pole():
    ep = make_effective_potential(make_builtin_field("berman"))
    on_axis = eval_omega_kernel(ep, 0.5)
    assert abs(on_axis.imag) < 1e-12
    # With the counterterm the kernel grows slower than 1/u near the
    # second-order pole at i; without it, like 1/u.
    for eps in (1e-2, 1e-3):
        with_delta = eval_omega_kernel(ep, 1j * (1 - eps))
        without = eval_omega_kernel(ep, 1j * (1 - eps), include_langer=False)
        assert abs(with_delta) < 0.2 * abs(without)

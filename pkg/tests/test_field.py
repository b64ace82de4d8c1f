import cmath
import math

import mpmath
import pytest

from adiabat.field import (
    BranchAmbiguityError,
    FieldError,
    eval_F,
    eval_field,
    make_builtin_field,
    make_custom_field,
    validate_assumptions,
)

_S1 = complex(-0.5, math.sqrt(3) / 2)  # lowest left turning point, nikitin b=1


def test_nikitin_sample_at_origin():
    profile = make_builtin_field("nikitin")
    sample = eval_field(profile, 0.0)
    assert sample.b[0] == pytest.approx(2.0)
    assert sample.b[1] == 0
    assert sample.b[2] == pytest.approx(2.0)
    assert sample.bmag == pytest.approx(2 * math.sqrt(2))
    assert sample.e_plus == pytest.approx(math.sqrt(2))
    assert sample.e_minus == pytest.approx(-math.sqrt(2))
    assert sample.theta == pytest.approx(math.pi / 4)
    assert sample.phi == 0
    assert sample.theta_dot == pytest.approx(0.0, abs=1e-15)


def test_berman_sample_at_origin():
    profile = make_builtin_field("berman")
    sample = eval_field(profile, 0.0)
    assert sample.b[0] == pytest.approx(1.0)
    assert sample.b[2] == pytest.approx(1.0)
    assert sample.theta == pytest.approx(math.pi / 4)


@pytest.mark.parametrize("name,params", [
    ("nikitin", None),
    ("berman", None),
    ("berman", {"f": "s/(1+s^2)", "poles": [(0, 1, 2), (0, -1, 2)]}),
])
@pytest.mark.parametrize("point", [0.7, -1.3, 0.4 + 0.3j])
def test_theta_dot_matches_finite_difference(name, params, point):
    profile = make_builtin_field(name, params)
    h = 1e-6
    upper = eval_field(profile, point + h)
    lower = eval_field(profile, point - h, sheet_hint=upper)
    fd = (upper.theta - lower.theta) / (2 * h)
    sample = eval_field(profile, point, sheet_hint=upper)
    assert sample.theta_dot == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_branch_ambiguity_at_turning_point():
    profile = make_builtin_field("nikitin")
    with pytest.raises(BranchAmbiguityError):
        eval_field(profile, _S1)


def test_sheet_tracking_flips_around_turning_point():
    profile = make_builtin_field("nikitin")
    start = eval_field(profile, _S1 + 0.1)
    sample = start
    for k in range(1, 101):
        z = _S1 + 0.1 * cmath.exp(2j * cmath.pi * k / 100)
        sample = eval_field(profile, z, sheet_hint=sample)
    assert sample.bmag == pytest.approx(-start.bmag, rel=1e-9)


def test_sheet_tracking_closed_loop_away_from_turning_points():
    profile = make_builtin_field("nikitin")
    center = 0.2 + 0.3j
    start = eval_field(profile, center + 0.15)
    sample = start
    for k in range(1, 81):
        z = center + 0.15 * cmath.exp(2j * cmath.pi * k / 80)
        sample = eval_field(profile, z, sheet_hint=sample)
    assert sample.bmag == pytest.approx(start.bmag, rel=1e-9)


def test_tangent_map_value_and_identity():
    profile = make_builtin_field("nikitin")
    value = eval_F(profile, 0.0)
    assert value.f == pytest.approx(3 - 2 * math.sqrt(2), rel=1e-12)
    for point in (0.6, -0.9 + 0.4j, 1.2 + 0.8j):
        sample = eval_field(profile, point)
        via_theta = cmath.tan(sample.theta / 2) ** 2
        assert eval_F(profile, point).f == pytest.approx(via_theta, rel=1e-10)


def test_custom_field_normalized_to_z_axis():
    profile = make_custom_field("1", "0", "1")
    vals = profile.component_values(100.0 + 0j)
    assert abs(vals[0]) < 1e-9
    assert vals[2].real == pytest.approx(math.sqrt(2), rel=1e-9)
    assert profile.planar


def test_unknown_builtin_and_parameters_rejected():
    with pytest.raises(FieldError):
        make_builtin_field("landau")
    with pytest.raises(FieldError):
        make_builtin_field("nikitin", {"width": 2.0})
    with pytest.raises(FieldError):
        make_builtin_field("nikitin", {"b": -1.0})


def test_validate_assumptions_builtin_clean():
    report = validate_assumptions(make_builtin_field("nikitin"))
    assert report.ok
    names = {check.name for check in report.checks}
    assert "simple_turning_points" in names
    assert "finite_limits" in names


def test_validate_assumptions_warns_without_raising():
    slow = make_builtin_field(
        "berman", {"f": "s/(1+s^2)", "poles": [(0, 1, 2), (0, -1, 2)]})
    report = validate_assumptions(slow)
    assert any(c.name == "aligned_at_plus_infinity" and not c.passed
               for c in report.checks)

    imaginary_tail = make_custom_field("1", "0", "2+sqrt(s-100)")
    report = validate_assumptions(imaginary_tail)
    assert any(c.name == "real_on_axis" and not c.passed for c in report.checks)


def test_mpmath_backend_sampling():
    profile = make_builtin_field("nikitin")
    old_dps = mpmath.mp.dps
    try:
        mpmath.mp.dps = 30
        fast = eval_field(profile, 0.7)
        slow = eval_field(profile, mpmath.mpf("0.7"))
        assert complex(slow.bmag) == pytest.approx(fast.bmag, rel=1e-14)
        assert complex(slow.theta_dot) == pytest.approx(fast.theta_dot, rel=1e-12)
    finally:
        mpmath.mp.dps = old_dps

import cmath
import random

import mpmath
import pytest

from adiabat.exprlang import (
    Add,
    Call,
    Const,
    Div,
    EvalDomainError,
    ExprSyntaxError,
    Mul,
    Neg,
    Pow,
    Sub,
    Var,
    compile_expr,
    differentiate,
    evaluate,
    format_expr,
    parse,
)


def test_parse_structure_nested_power():
    tree = parse("1/(1+s^2)^(3/2)")
    expected = Div(
        Const(1.0),
        Pow(Add(Const(1.0), Pow(Var(), Const(2.0))), Div(Const(3.0), Const(2.0))),
    )
    assert tree == expected


def test_precedence_and_associativity():
    assert parse("-s^2") == Neg(Pow(Var(), Const(2.0)))
    assert evaluate(parse("2^3^2"), 0.0) == 512
    assert evaluate(parse("1-2-3"), 0.0) == -4
    assert parse("2*s+1") == Add(Mul(Const(2.0), Var()), Const(1.0))
    assert parse("s^-2") == Pow(Var(), Neg(Const(2.0)))
    assert evaluate(parse("s^-2"), 2.0) == pytest.approx(0.25)


def test_no_implicit_multiplication():
    with pytest.raises(ExprSyntaxError) as info:
        parse("2s")
    assert info.value.offset == 1
    with pytest.raises(ExprSyntaxError) as info:
        parse("(s)(s)")
    assert info.value.offset == 3
    assert "end of input" in info.value.expected


def test_no_imaginary_literal():
    with pytest.raises(ExprSyntaxError) as info:
        parse("3i")
    assert info.value.offset == 1
    with pytest.raises(ExprSyntaxError) as info:
        parse("i")
    assert info.value.offset == 0
    assert "'s'" in info.value.expected


def test_number_literals():
    assert evaluate(parse(".5"), 0.0) == 0.5
    assert evaluate(parse("2."), 0.0) == 2.0
    assert evaluate(parse("1.5e-3"), 0.0) == 1.5e-3
    assert evaluate(parse("1E+2"), 0.0) == 100.0


def test_syntax_error_offsets_and_expected_sets():
    with pytest.raises(ExprSyntaxError) as info:
        parse("1+")
    assert info.value.offset == 2
    assert "number" in info.value.expected

    with pytest.raises(ExprSyntaxError) as info:
        parse("(1+s")
    assert info.value.offset == 4
    assert "')'" in info.value.expected

    with pytest.raises(ExprSyntaxError) as info:
        parse("1+*2")
    assert info.value.offset == 2

    with pytest.raises(ExprSyntaxError) as info:
        parse("sin 0.3")
    assert info.value.offset == 4
    assert "'('" in info.value.expected

    with pytest.raises(ExprSyntaxError) as info:
        parse("cosh(s")
    assert info.value.offset == 6


def test_evaluate_values():
    assert evaluate(parse("1/(1+s^2)^(3/2)"), 0.3) == pytest.approx(
        (1 + 0.09) ** -1.5, rel=1e-14
    )
    assert evaluate(parse("sqrt(s)"), -1.0) == pytest.approx(1j)
    assert evaluate(parse("log(exp(s))"), 0.7) == pytest.approx(0.7)
    value = evaluate(parse("tan(s)+tanh(s)*cos(s)"), 0.4 + 0.1j)
    expected = cmath.tan(0.4 + 0.1j) + cmath.tanh(0.4 + 0.1j) * cmath.cos(0.4 + 0.1j)
    assert value == pytest.approx(expected, rel=1e-14)


def test_pole_errors():
    with pytest.raises(EvalDomainError):
        evaluate(parse("1/s"), 0.0)
    with pytest.raises(EvalDomainError):
        evaluate(parse("1/(s-1)"), 1.0)
    with pytest.raises(EvalDomainError):
        evaluate(parse("log(s)"), 0.0)
    with pytest.raises(EvalDomainError):
        evaluate(parse("s^-2"), 0.0)
    with pytest.raises(EvalDomainError):
        compile_expr(parse("1/s"))(0.0)


# Value frozen from the closed form -3 s (1+s^2)^(-5/2) at s = 0.3, checked
# below against both the symbolic derivative and a finite difference.
_DERIV_AT_03 = -0.7255648991659255


def test_derivative_closed_form_value():
    deriv = differentiate(parse("1/(1+s^2)^(3/2)"))
    assert evaluate(deriv, 0.3) == pytest.approx(_DERIV_AT_03, rel=1e-12)
    assert -3 * 0.3 * (1 + 0.3**2) ** -2.5 == pytest.approx(_DERIV_AT_03, rel=1e-14)


_FD_BATTERY = [
    "1/(1+s^2)^(3/2)",
    "exp(-s^2/2)*sin(3*s)",
    "tan(s/2)+tanh(s)",
    "sqrt(1+s^2)",
    "s^s",
    "log(2+cos(s))",
    "(s^3-2*s+1)/(s^2+4)",
    "cosh(s)*sinh(s/3)",
]


@pytest.mark.parametrize("source", _FD_BATTERY)
def test_differentiate_matches_finite_difference(source):
    expr = parse(source)
    deriv = differentiate(expr)
    for point in (0.3, 0.9, 1.7):
        h = 1e-6
        fd = (evaluate(expr, point + h) - evaluate(expr, point - h)) / (2 * h)
        sym = evaluate(deriv, point)
        assert sym == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_mpmath_backend_matches_double():
    expr = parse("exp(-s^2/2)*sin(3*s)/(1+s^2)^(3/2)")
    deriv = differentiate(expr)
    old_dps = mpmath.mp.dps
    try:
        mpmath.mp.dps = 30
        for point in (0.3, 1.1):
            fast = evaluate(deriv, point)
            slow = evaluate(deriv, mpmath.mpf(point))
            assert isinstance(slow, (mpmath.mpf, mpmath.mpc))
            assert complex(slow) == pytest.approx(fast, rel=1e-12)
    finally:
        mpmath.mp.dps = old_dps


def _random_tree(rng: random.Random, depth: int):
    if depth == 0 or rng.random() < 0.3:
        return rng.choice(
            [Const(0.0), Const(1.0), Const(2.0), Const(0.5), Const(1.5), Var(), Var()]
        )
    kind = rng.randrange(7)
    if kind == 0:
        return Neg(_random_tree(rng, depth - 1))
    if kind == 1:
        return Add(_random_tree(rng, depth - 1), _random_tree(rng, depth - 1))
    if kind == 2:
        return Sub(_random_tree(rng, depth - 1), _random_tree(rng, depth - 1))
    if kind == 3:
        return Mul(_random_tree(rng, depth - 1), _random_tree(rng, depth - 1))
    if kind == 4:
        return Div(_random_tree(rng, depth - 1), _random_tree(rng, depth - 1))
    if kind == 5:
        return Pow(_random_tree(rng, depth - 1), _random_tree(rng, min(2, depth - 1)))
    fn = rng.choice(["exp", "log", "sin", "cos", "tan", "sinh", "cosh", "tanh", "sqrt"])
    return Call(fn, _random_tree(rng, depth - 1))


def test_format_parse_roundtrip_random_trees():
    rng = random.Random(20240817)
    for _ in range(300):
        tree = _random_tree(rng, rng.randrange(1, 9))
        assert parse(format_expr(tree)) == tree


def test_compile_matches_evaluate_random_trees():
    rng = random.Random(7)
    checked = 0
    while checked < 120:
        tree = _random_tree(rng, rng.randrange(1, 6))
        point = complex(rng.uniform(-1.5, 1.5), rng.uniform(-0.5, 0.5))
        try:
            reference = evaluate(tree, point)
        except (EvalDomainError, OverflowError, ValueError):
            continue
        if abs(reference) > 1e12 or reference != reference:
            continue
        fast = compile_expr(tree)(point)
        assert fast == pytest.approx(reference, rel=1e-12, abs=1e-12)
        checked += 1

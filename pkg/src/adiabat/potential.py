"""Effective potentials governing the amplitude evolution equations.

The two-level system maps onto a one-dimensional scattering problem whose
potential is, to leading order in the slowness parameter, a quarter of the
squared level splitting:

    q0(s) = (mu^2 / 4) B(s)^2

This is meromorphic even when individual field components carry branch
cuts, since only squares enter.  The corrected potential adds terms built
from the logarithmic derivative L = (d/ds)(B_x + i B_y) / (B_x + i B_y) of
the transverse combination:

    q2(s, T) = q0(s) - (i mu / 2T) (B_z' - B_z L) + (1/2T^2) (L' - L^2/2)

Both are assembled symbolically from the profile's component expressions,
so all derivatives here are exact.  The module also evaluates the Langer
counterterm (a quarter at each declared first- or second-order pole) and
the correction kernel used to bound the accuracy of connection formulas.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass, field as dc_field

import mpmath

from .exprlang import (
    Add,
    Const,
    Div,
    Mul,
    Sub,
    compile_expr,
    differentiate,
)
from .field import FieldProfile

__all__ = [
    "EffectivePotential",
    "POTENTIAL_MODES",
    "make_effective_potential",
    "eval_q0",
    "eval_q2",
    "eval_potential",
    "potential_derivative",
    "langer_delta",
    "eval_omega_kernel",
]

POTENTIAL_MODES = ("adiabatic_q0", "full_q2")


@dataclass
class EffectivePotential:
    """A field profile together with its scattering potential data.

    ``poles`` lists the declared singularities of the potential with their
    orders; ``langer`` carries the counterterm coefficients (a quarter at
    each declared pole of order one or two, where the correction kernel
    would otherwise fail to be integrable).  ``mode`` selects which
    potential downstream consumers integrate: the leading ``adiabatic_q0``
    or the slowness-corrected ``full_q2``.
    """

    profile: FieldProfile
    mode: str
    poles: tuple[tuple[complex, int], ...]
    langer: tuple[tuple[complex, float], ...]
    _evals: dict = dc_field(default_factory=dict, repr=False, compare=False)

    def _fn(self, name: str):
        return self._evals[name]


def make_effective_potential(profile: FieldProfile,
                             mode: str = "adiabatic_q0") -> EffectivePotential:
    """Assemble the potential evaluators for ``profile``.

    Builds symbolic trees for the leading potential, the two slowness
    corrections, and their first and second derivatives, then compiles
    them once.  ``mode`` must be one of :data:`POTENTIAL_MODES`.
    """
    if mode not in POTENTIAL_MODES:
        raise ValueError(f"unknown potential mode {mode!r}; "
                         f"choose from {POTENTIAL_MODES}")
    bx, by, bz = profile.components
    dbx, dby, dbz = profile.derivatives
    mu = profile.mu

    b2 = Add(Add(Mul(bx, bx), Mul(by, by)), Mul(bz, bz))
    q0 = Mul(Const(0.25 * mu * mu), b2)

    if profile.planar:
        w, w_dot = bx, dbx
    else:
        w = Add(bx, Mul(Const(1j), by))
        w_dot = Add(dbx, Mul(Const(1j), dby))
    log_deriv = Div(w_dot, w)
    # -(i mu / 2)(B_z' - B_z L); the 1/T factor is applied at evaluation.
    q1 = Mul(Const(-0.5j * mu), Sub(dbz, Mul(bz, log_deriv)))
    # (1/2)(L' - L^2/2); the 1/T^2 factor is applied at evaluation.
    q2c = Mul(Const(0.5), Sub(differentiate(log_deriv),
                              Mul(Const(0.5), Mul(log_deriv, log_deriv))))

    evals: dict = {}
    for name, expr in (("q0", q0), ("q1", q1), ("q2c", q2c)):
        prime = differentiate(expr)
        evals[name] = compile_expr(expr)
        evals[name + "_p"] = compile_expr(prime)
        evals[name + "_pp"] = compile_expr(differentiate(prime))

    langer = tuple((z, 0.25) for z, order in profile.poles if order <= 2)
    return EffectivePotential(profile=profile, mode=mode,
                              poles=tuple(profile.poles), langer=langer,
                              _evals=evals)


def _lib_for(s):
    return mpmath if isinstance(s, (mpmath.mpf, mpmath.mpc)) else cmath


def eval_q0(ep: EffectivePotential, s) -> complex:
    """Leading potential (mu^2/4) B^2 at ``s``; meromorphic in ``s``."""
    return ep._fn("q0")(s, _lib_for(s))


def eval_q2(ep: EffectivePotential, s, T: float) -> complex:
    """Slowness-corrected potential at ``s`` for scale factor ``T``."""
    lib = _lib_for(s)
    return (ep._fn("q0")(s, lib) + ep._fn("q1")(s, lib) / T
            + ep._fn("q2c")(s, lib) / (T * T))


def eval_potential(ep: EffectivePotential, s, T: float | None = None) -> complex:
    """Evaluate the potential selected by ``ep.mode``.

    ``T`` is required in ``full_q2`` mode and ignored otherwise.
    """
    if ep.mode == "full_q2":
        if T is None:
            raise ValueError("full_q2 mode requires the scale factor T")
        return eval_q2(ep, s, T)
    return eval_q0(ep, s)


def potential_derivative(ep: EffectivePotential, s, T: float | None = None,
                         order: int = 1) -> complex:
    """Exact first or second derivative of the mode potential at ``s``."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    suffix = "_p" if order == 1 else "_pp"
    lib = _lib_for(s)
    value = ep._fn("q0" + suffix)(s, lib)
    if ep.mode == "full_q2":
        if T is None:
            raise ValueError("full_q2 mode requires the scale factor T")
        value = (value + ep._fn("q1" + suffix)(s, lib) / T
                 + ep._fn("q2c" + suffix)(s, lib) / (T * T))
    return value


def langer_delta(ep: EffectivePotential, s) -> complex:
    """Counterterm sum: a quarter inverse square at each listed pole.

    Only declared poles of order one or two carry a coefficient; at higher
    orders the correction kernel is already integrable and the list simply
    omits them, making the sum zero.
    """
    total = 0j
    for z, coeff in ep.langer:
        u = s - z
        total += coeff / (u * u)
    return total


def eval_omega_kernel(ep: EffectivePotential, s, T: float | None = None,
                      include_langer: bool = True,
                      sqrt_hint: complex | None = None) -> complex:
    """Correction kernel controlling the connection-formula error.

    Evaluates ``delta/q^(1/2) - q''/(4 q^(3/2)) + 5 q'^2/(16 q^(5/2))`` for
    the mode potential ``q``.  The square root takes its principal branch
    unless ``sqrt_hint`` supplies a nearby previous value to continue from.
    ``include_langer`` switches the counterterm sum; with it the kernel
    stays integrable at the declared low-order poles.
    """
    lib = _lib_for(s)
    qt = eval_potential(ep, s, T)
    qp = potential_derivative(ep, s, T, order=1)
    qpp = potential_derivative(ep, s, T, order=2)
    root = lib.sqrt(qt)
    if sqrt_hint is not None and abs(root - sqrt_hint) > abs(-root - sqrt_hint):
        root = -root
    root3 = qt * root
    root5 = qt * qt * root
    value = -0.25 * qpp / root3 + 0.3125 * qp * qp / root5
    if include_langer:
        value += langer_delta(ep, s) / root
    return value

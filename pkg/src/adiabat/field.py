"""Driving field profiles for the two-level problem.

A profile bundles the three field components as symbolic expressions of the
slow time ``s`` together with the coupling strength ``mu`` and the declared
singularities of the associated effective potential.  Components extend to
complex ``s`` by analytic continuation; sampling tracks the branch of the
field magnitude ``B = sqrt(B_x^2 + B_y^2 + B_z^2)`` across the two sheets
joined at the zeros of ``B^2``.

Conventions: for planar profiles (``B_y = 0``) the transverse magnitude is
taken to be ``B_x`` itself, which fixes the azimuth to zero and lets the
polar angle carry the sign.  Profiles are normalized at construction so the
field points along ``+z`` at large positive ``s``.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass, field as dc_field
from typing import Iterable, Union

import mpmath

from .exprlang import (
    Add,
    Const,
    EvalDomainError,
    Expr,
    Mul,
    Pow,
    Var,
    compile_expr,
    differentiate,
    parse,
)

__all__ = [
    "BranchAmbiguityError",
    "FieldError",
    "FieldProfile",
    "FieldSample",
    "FMapValue",
    "AssumptionCheck",
    "AssumptionReport",
    "make_builtin_field",
    "make_custom_field",
    "eval_field",
    "eval_F",
    "validate_assumptions",
    "BUILTIN_FIELDS",
]

#: |B^2| below this times the squared component scale is treated as a zero.
BRANCH_TOLERANCE = 1e-12


class FieldError(ValueError):
    """Malformed profile or evaluation outside the field's domain."""


class BranchAmbiguityError(FieldError):
    """Sampling requested too close to a zero of B^2 to resolve the sheet."""


@dataclass
class FieldProfile:
    """A driving field with symbolic components and their derivatives.

    Attributes
    ----------
    kind:
        ``"nikitin"``, ``"berman"``, or ``"custom"``.
    mu:
        Coupling strength multiplying the field in the Hamiltonian.
    components:
        Expressions for ``(B_x, B_y, B_z)`` after normalization.
    derivatives:
        Their exact symbolic derivatives.
    poles:
        Declared singularities of the effective potential as
        ``(location, order)`` pairs; used downstream for Langer terms and
        path avoidance.
    params:
        The construction parameters, kept for reporting.
    planar:
        True when ``B_y`` is identically zero.
    """

    kind: str
    mu: float
    components: tuple[Expr, Expr, Expr]
    derivatives: tuple[Expr, Expr, Expr]
    poles: tuple[tuple[complex, int], ...] = ()
    params: dict = dc_field(default_factory=dict)
    planar: bool = False
    _fns: tuple = dc_field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self._fns is None:
            self._fns = tuple(compile_expr(e)
                              for e in (*self.components, *self.derivatives))

    def component_values(self, s):
        """Evaluate ``(B_x, B_y, B_z, dB_x, dB_y, dB_z)`` at ``s``."""
        lib = mpmath if _is_mp(s) else cmath
        return tuple(fn(s, lib) for fn in self._fns)


@dataclass(frozen=True)
class FieldSample:
    """Field data at one complex time, on a resolved magnitude sheet."""

    s: complex
    b: tuple[complex, complex, complex]
    db: tuple[complex, complex, complex]
    b2: complex
    bmag: complex
    e_plus: complex
    e_minus: complex
    w: complex          # B_x + i B_y
    w_dot: complex
    wt: complex         # B_x - i B_y
    wt_dot: complex
    p_perp: complex     # transverse magnitude on the tracked sheet
    cos_theta: complex
    sin_theta: complex
    theta: complex
    phi: complex
    theta_dot: complex
    phi_dot: complex


@dataclass(frozen=True)
class FMapValue:
    """Value of the tangent-half-angle map F = (B - B_z)/(B + B_z)."""

    s: complex
    f: complex
    bmag: complex
    bz: complex


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple[AssumptionCheck, ...]

    @property
    def ok(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def warnings(self) -> tuple[AssumptionCheck, ...]:
        return tuple(check for check in self.checks if not check.passed)


BUILTIN_FIELDS = ("nikitin", "berman")

_NIKITIN_DEFAULTS = {"b": 1.0, "delta_eps": 2.0, "mu": 1.0}
_BERMAN_DEFAULTS = {"f": "1/(1+s^2)", "omega": 1.0, "mu": 1.0}
_BERMAN_DEFAULT_POLES = ((1j, 2), (-1j, 2))


def make_builtin_field(name: str, params: dict | None = None) -> FieldProfile:
    """Construct one of the named builtin profiles.

    ``"nikitin"`` takes ``b`` (pole height), ``delta_eps`` (asymptotic level
    splitting) and ``mu``; the components are
    ``B = (delta_eps/mu) * ((b^2+s^2)^(-3/2), 0, 1)``.

    ``"berman"`` takes a planar pulse ``f`` (source text or expression),
    a constant detuning ``omega`` and ``mu``; the components are
    ``B = (f(s), 0, omega/mu)``.  Any pulse other than the default one
    must come with a ``poles`` declaration, a list of ``(re, im, order)``
    triples (empty for an entire pulse).
    """
    params = dict(params or {})
    if name == "nikitin":
        merged = _merge_params(params, _NIKITIN_DEFAULTS, name)
        b, delta_eps, mu = merged["b"], merged["delta_eps"], merged["mu"]
        if b <= 0 or delta_eps <= 0 or mu <= 0:
            raise FieldError("nikitin parameters must be positive")
        amp = delta_eps / mu
        bx = Mul(Const(amp),
                 Pow(Add(Const(b * b), Pow(Var(), Const(2.0))), Const(-1.5)))
        bz = Const(amp)
        poles = ((complex(0.0, b), 3), (complex(0.0, -b), 3))
        return _finish_profile("nikitin", mu, (bx, Const(0.0), bz),
                               poles, merged)
    if name == "berman":
        extra = {"poles": None}
        merged = _merge_params(params, {**_BERMAN_DEFAULTS, **extra}, name)
        mu, omega = merged["mu"], merged["omega"]
        if mu <= 0 or omega <= 0:
            raise FieldError("berman parameters must be positive")
        f_spec = merged["f"]
        bx = parse(f_spec) if isinstance(f_spec, str) else f_spec
        bz = Const(omega / mu)
        if merged["poles"] is not None:
            poles = tuple((complex(re, im), int(order))
                          for re, im, order in merged["poles"])
        elif isinstance(f_spec, str) and f_spec == _BERMAN_DEFAULTS["f"]:
            poles = _BERMAN_DEFAULT_POLES
        else:
            # Singularities of a black-box pulse are never auto-detected;
            # an unstated pole list would poison every argument-principle
            # count downstream, so demand one (possibly empty) up front.
            raise FieldError(
                "a non-default berman pulse needs a 'poles' declaration: "
                "a list of (re, im, order) triples, or [] for an entire "
                "pulse")
        merged["f"] = f_spec if isinstance(f_spec, str) else "<expr>"
        del merged["poles"]
        return _finish_profile("berman", mu, (bx, Const(0.0), bz),
                               poles, merged)
    raise FieldError(f"unknown builtin field {name!r}; "
                     f"choose from {BUILTIN_FIELDS}")


def make_custom_field(bx: Union[str, Expr], by: Union[str, Expr],
                      bz: Union[str, Expr], mu: float = 1.0,
                      poles: Iterable[tuple[complex, int]] = ()) -> FieldProfile:
    """Construct a profile from three component expressions.

    A fixed global rotation is applied so the field at large positive ``s``
    points along ``+z``; the declared ``poles`` are kept as given.
    """
    comps = tuple(parse(c) if isinstance(c, str) else c for c in (bx, by, bz))
    if mu <= 0:
        raise FieldError("mu must be positive")
    comps = _normalize_orientation(comps)
    return _finish_profile("custom", mu, comps,
                           tuple((complex(z), int(k)) for z, k in poles), {})


def _merge_params(params: dict, defaults: dict, name: str) -> dict:
    unknown = set(params) - set(defaults)
    if unknown:
        raise FieldError(f"unknown {name} parameters: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(params)
    return merged


def _finish_profile(kind, mu, comps, poles, params) -> FieldProfile:
    derivs = tuple(differentiate(c) for c in comps)
    planar = isinstance(comps[1], Const) and comps[1].value == 0
    return FieldProfile(kind=kind, mu=mu, components=comps,
                        derivatives=derivs, poles=poles, params=params,
                        planar=planar)


def _normalize_orientation(comps):
    s_far = 1e6
    fns = [compile_expr(c) for c in comps]
    vec = [complex(fn(complex(s_far), cmath)) for fn in fns]
    norm = max(abs(v) for v in vec)
    if norm == 0:
        raise FieldError("field vanishes at large positive s")
    bx, by, bz = (v.real for v in vec)
    mag = (bx * bx + by * by + bz * bz) ** 0.5
    transverse = (bx * bx + by * by) ** 0.5
    if transverse <= 1e-9 * mag and bz > 0:
        return comps
    # Rodrigues rotation taking the asymptotic direction onto +z.
    ux, uy, uz = bx / mag, by / mag, bz / mag
    axis = (uy, -ux, 0.0)
    axis_norm = (axis[0] ** 2 + axis[1] ** 2) ** 0.5
    if axis_norm < 1e-15:
        # Anti-aligned: rotate half a turn about x.
        rows = ((1.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, -1.0))
    else:
        kx, ky = axis[0] / axis_norm, axis[1] / axis_norm
        cos_a = uz
        sin_a = (1 - cos_a * cos_a) ** 0.5
        one_c = 1 - cos_a
        rows = (
            (cos_a + kx * kx * one_c, kx * ky * one_c, ky * sin_a),
            (kx * ky * one_c, cos_a + ky * ky * one_c, -kx * sin_a),
            (-ky * sin_a, kx * sin_a, cos_a),
        )
    return tuple(_lincomb(row, comps) for row in rows)


def _lincomb(coeffs, exprs) -> Expr:
    acc: Expr | None = None
    for coeff, expr in zip(coeffs, exprs):
        if abs(coeff) < 1e-15:
            continue
        term = expr if abs(coeff - 1.0) < 1e-15 else Mul(Const(coeff), expr)
        acc = term if acc is None else Add(acc, term)
    return acc if acc is not None else Const(0.0)


def _is_mp(s) -> bool:
    return isinstance(s, (mpmath.mpf, mpmath.mpc))


def eval_field(profile: FieldProfile, s,
               sheet_hint: Union[FieldSample, complex, None] = None) -> FieldSample:
    """Sample the field at complex time ``s`` on a resolved sheet.

    Without a hint the magnitude takes the principal square root of
    ``B^2``, which is the physical positive branch on the real axis.  With
    ``sheet_hint`` (a nearby previous sample, or its magnitude) the branch
    nearest the hint is taken, so successive calls along a path continue
    analytically across the principal cut.

    Raises
    ------
    BranchAmbiguityError
        If ``|B^2|`` is within :data:`BRANCH_TOLERANCE` (relative to the
        squared component scale) of zero, where the sheets collide.
    """
    mp_backend = _is_mp(s)
    lib = mpmath if mp_backend else cmath
    if not mp_backend:
        s = complex(s)
    bx, by, bz, dbx, dby, dbz = profile.component_values(s)
    b2 = bx * bx + by * by + bz * bz
    scale = abs(bx) ** 2 + abs(by) ** 2 + abs(bz) ** 2
    if scale == 0:
        raise FieldError(f"field vanishes identically at s={s}")
    if abs(b2) < BRANCH_TOLERANCE * scale:
        raise BranchAmbiguityError(
            f"|B^2|={abs(b2):.3e} at s={s} is too close to a sheet collision")
    bmag = lib.sqrt(b2)
    hint_mag = _hint_value(sheet_hint, "bmag")
    if hint_mag is not None and abs(bmag - hint_mag) > abs(-bmag - hint_mag):
        bmag = -bmag
    w = bx + 1j * by
    wt = bx - 1j * by
    w_dot = dbx + 1j * dby
    wt_dot = dbx - 1j * dby
    mu = profile.mu
    if profile.planar:
        p_perp = bx
        phi = bx * 0
        phi_dot = bx * 0
        theta_dot = (bz * dbx - bx * dbz) / b2
    else:
        p2 = w * wt
        p_perp = lib.sqrt(p2)
        hint_p = _hint_value(sheet_hint, "p_perp")
        if hint_p is not None and abs(p_perp - hint_p) > abs(-p_perp - hint_p):
            p_perp = -p_perp
        if abs(p2) < BRANCH_TOLERANCE * scale:
            # Transverse direction undefined; fall back to polar-only data.
            phi = p2 * 0
            phi_dot = p2 * 0
            theta_dot = p2 * 0
        else:
            phi = -1j * lib.log(w / p_perp)
            phi_dot = -1j * (w_dot * wt - w * wt_dot) / (2 * w * wt)
            bdotb = bx * dbx + by * dby + bz * dbz
            theta_dot = (bz * bdotb - dbz * b2) / (b2 * p_perp)
    cos_theta = bz / bmag
    sin_theta = p_perp / bmag
    theta = -1j * lib.log((bz + 1j * p_perp) / bmag)
    half = mu / 2
    return FieldSample(
        s=s, b=(bx, by, bz), db=(dbx, dby, dbz), b2=b2, bmag=bmag,
        e_plus=half * bmag, e_minus=-half * bmag,
        w=w, w_dot=w_dot, wt=wt, wt_dot=wt_dot, p_perp=p_perp,
        cos_theta=cos_theta, sin_theta=sin_theta, theta=theta, phi=phi,
        theta_dot=theta_dot, phi_dot=phi_dot)


def _hint_value(hint, attr):
    if hint is None:
        return None
    if isinstance(hint, FieldSample):
        return getattr(hint, attr)
    return hint if attr == "bmag" else None


def eval_F(profile: FieldProfile, s,
           sheet_hint: Union[FieldSample, complex, None] = None) -> FMapValue:
    """Evaluate F = (B - B_z)/(B + B_z) = tan^2(theta/2) at ``s``.

    The magnitude branch follows the same hint rules as
    :func:`eval_field`.  Raises :class:`FieldError` where ``B + B_z``
    vanishes (a pole of the map).
    """
    sample = eval_field(profile, s, sheet_hint)
    denom = sample.bmag + sample.b[2]
    if abs(denom) < 1e-14 * abs(sample.bmag):
        raise FieldError(f"tangent map pole at s={s}")
    return FMapValue(s=sample.s, f=(sample.bmag - sample.b[2]) / denom,
                     bmag=sample.bmag, bz=sample.b[2])


def validate_assumptions(profile: FieldProfile, s_max: float = 50.0,
                         box_half_width: float = 8.0) -> AssumptionReport:
    """Probe the structural assumptions behind the asymptotic machinery.

    All checks are advisory: failures come back as warnings in the report
    and never raise.  Probed properties: components real on the real axis;
    field magnitude bounded away from zero there; finite nonzero limits at
    both infinities; alignment with ``+z`` at large positive ``s``; and
    simplicity of the complex zeros of ``B^2`` found by a coarse scan of the
    upper half plane (each zero should be first order, with regular
    components and nonvanishing ``B_z``).
    """
    checks: list[AssumptionCheck] = []
    grid = [s_max * (k / 20.0 - 1.0) for k in range(41)]

    worst_imag = 0.0
    min_mag = float("inf")
    for x in grid:
        try:
            vals = profile.component_values(complex(x))
        except EvalDomainError:
            checks.append(AssumptionCheck(
                "real_on_axis", False, f"component singular at s={x:g}"))
            break
        comps = vals[:3]
        scale = max(1.0, max(abs(v) for v in comps))
        worst_imag = max(worst_imag, max(abs(v.imag) for v in comps) / scale)
        mag2 = sum(v * v for v in comps).real
        min_mag = min(min_mag, abs(mag2) ** 0.5)
    else:
        checks.append(AssumptionCheck(
            "real_on_axis", worst_imag <= 1e-9,
            f"max relative imaginary part {worst_imag:.2e} on the real axis"))
        checks.append(AssumptionCheck(
            "nonvanishing_magnitude", min_mag >= 1e-6,
            f"min |B| = {min_mag:.3e} over [{-s_max:g}, {s_max:g}]"))

    checks.append(_limit_check(profile, s_max))
    checks.append(_alignment_check(profile, s_max))
    checks.extend(_turning_point_checks(profile, box_half_width))
    return AssumptionReport(tuple(checks))


def _limit_check(profile, s_max) -> AssumptionCheck:
    drifts = []
    for sign in (1.0, -1.0):
        try:
            near = profile.component_values(complex(sign * s_max))[:3]
            far = profile.component_values(complex(sign * 2 * s_max))[:3]
        except EvalDomainError:
            return AssumptionCheck("finite_limits", False,
                                   "component singular at large |s|")
        scale = max(1.0, max(abs(v) for v in far))
        drifts.append(max(abs(n - f) for n, f in zip(near, far)) / scale)
        if max(abs(v) for v in far) < 1e-9:
            return AssumptionCheck("finite_limits", False,
                                   f"field decays to zero as s -> {sign:+g}inf")
    drift = max(drifts)
    return AssumptionCheck("finite_limits", drift <= 1e-2,
                           f"relative drift {drift:.2e} between |s|={s_max:g} "
                           f"and {2 * s_max:g}")


def _alignment_check(profile, s_max) -> AssumptionCheck:
    try:
        vals = profile.component_values(complex(2 * s_max))[:3]
    except EvalDomainError as exc:
        return AssumptionCheck("aligned_at_plus_infinity", False, str(exc))
    mag = max(abs(v) for v in vals)
    transverse = (abs(vals[0]) ** 2 + abs(vals[1]) ** 2) ** 0.5
    aligned = transverse <= 1e-3 * mag and vals[2].real > 0
    return AssumptionCheck(
        "aligned_at_plus_infinity", aligned,
        f"transverse fraction {transverse / mag:.2e} at s={2 * s_max:g}")


def _turning_point_checks(profile, half_width) -> list[AssumptionCheck]:
    mu2 = profile.mu ** 2

    def q0(z):
        bx, by, bz = profile.component_values(z)[:3]
        return 0.25 * mu2 * (bx * bx + by * by + bz * bz)

    def dq0(z):
        bx, by, bz, dbx, dby, dbz = profile.component_values(z)
        return 0.5 * mu2 * (bx * dbx + by * dby + bz * dbz)

    try:
        q_scale = abs(q0(0.0)) or 1.0
    except EvalDomainError as exc:
        return [AssumptionCheck("simple_turning_points", False, str(exc))]
    roots: list[complex] = []
    degenerate: list[complex] = []
    irregular: list[complex] = []
    for i in range(33):
        for j in range(17):
            z = complex(-half_width + i * half_width / 16,
                        0.05 + j * half_width / 16)
            try:
                for _ in range(50):
                    step = q0(z) / dq0(z)
                    z -= step
                    if abs(step) < 1e-12:
                        break
                else:
                    continue
                if abs(q0(z)) > 1e-9 * q_scale or not (
                        abs(z.real) <= half_width and 0 < z.imag <= half_width):
                    continue
            except (EvalDomainError, ZeroDivisionError, OverflowError):
                continue
            if any(abs(z - r) < 1e-6 for r in roots):
                continue
            roots.append(z)
            if abs(dq0(z)) < 1e-6 * q_scale:
                degenerate.append(z)
            bx, by, bz = profile.component_values(z)[:3]
            if abs(bz) < 1e-9:
                irregular.append(z)
    checks = [AssumptionCheck(
        "simple_turning_points", not degenerate,
        f"{len(roots)} upper-half zeros of B^2 found by coarse scan; "
        f"degenerate: {[f'{z:.3f}' for z in degenerate] or 'none'}")]
    checks.append(AssumptionCheck(
        "regular_components_at_turning_points", not irregular,
        f"B_z vanishing at: {[f'{z:.3f}' for z in irregular] or 'none'}"))
    return checks

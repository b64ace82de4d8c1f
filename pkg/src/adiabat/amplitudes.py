"""Transition amplitudes assembled from the turning-point chain.

The chain of potential zeros bounding the principal strip carries all the
asymptotic data of a slow sweep: the conjugate pair nearest the real axis
sets the exponentially small modulus, the zeros strung along the strip's
upper boundary interfere through real phases, and integer quarter-turn
counts of the tangent half-angle map fix the phase offsets.  This module
turns that data into numbers along two complementary routes.

* :func:`connection_matrices` builds the transfer matrices that relate
  the exponential basis solutions anchored at neighboring zeros of the
  finite-time potential.
* :func:`exact_leading_amplitude` combines the transfer-matrix corner
  element with regularized real-axis prefactor integrals; it is the
  finite-time form of the amplitude.
* :func:`adiabatic_amplitude` is its limit: an interference sum over the
  chain zeros with one term per zero.
* :func:`two_tp_amplitude` closes the two-zero sum into a single cosine,
  and :func:`nikitin_umanskii_probability` specializes further to planar
  fields with a constant axial component.
* :func:`chi_first_order` evaluates the first-order correction factor of
  an exponential basis solution along a phase-monotone path.

Branch policy: every magnitude and potential root is continued from the
real axis near the origin, where the physical branch is principal; paths
carry the sheet with them.  Probabilities are squared moduli, so the one
undetermined overall quarter-turn power of the amplitude never reaches
them.
"""

from __future__ import annotations

import cmath
import dataclasses
import json
import math
from dataclasses import dataclass

from .contours import (
    ContourError,
    ContourPath,
    action_integral,
    build_avoiding_path,
    build_enclosing_loop,
    winding_number,
)
from .exprlang import EvalDomainError
from .field import FieldError, FieldProfile, eval_field
from .potential import (
    EffectivePotential,
    eval_omega_kernel,
    eval_q2,
    make_effective_potential,
    potential_derivative,
    eval_potential,
)
from .stokes import build_graph

__all__ = [
    "METHOD_TAGS",
    "AmplitudeError",
    "FundamentalSolution",
    "ConnectionMatrices",
    "TransitionResult",
    "connection_matrices",
    "adiabatic_amplitude",
    "two_tp_amplitude",
    "nikitin_umanskii_probability",
    "exact_leading_amplitude",
    "chi_first_order",
]

METHOD_TAGS = ("adiabatic_sum", "two_tp", "nikitin_umanskii",
               "exact_leading", "oracle")


class AmplitudeError(ValueError):
    """An amplitude formula was applied outside its domain of validity."""


# --------------------------------------------------------------------------
# Result types

@dataclass(frozen=True)
class FundamentalSolution:
    """Bookkeeping for one exponential basis solution.

    ``label`` names the sector the solution spans, counted along the
    chain, with a ``-bar`` suffix for the mirror family; ``sigma`` is the
    sign of the exponent's phase and must match the family.  The common
    amplitude prefactor is the potential raised to
    ``prefactor_exponent``.  ``chi`` is the residual factor, one at
    leading order.
    """

    label: str
    turning_point: complex
    sigma: int
    prefactor_exponent: float = -0.25
    chi: complex = 1.0

    def __post_init__(self):
        if self.sigma not in (-1, 1):
            raise AmplitudeError("sigma must be +1 or -1")
        barred = self.label.endswith("-bar")
        if (self.sigma == -1) != barred:
            raise AmplitudeError(
                f"solution {self.label!r} carries sigma={self.sigma}, "
                "but the mirror family is the one with the negative phase")


@dataclass(frozen=True)
class ConnectionMatrices:
    """Transfer matrices across the chain, with their ingredients.

    ``matrices`` holds one 2x2 complex matrix per chain zero (row-major
    nested tuples); their ordered product connects the coefficients of
    the leftmost basis pair to the rightmost.  ``alphas`` are the
    vertical pair factors, ``alpha_exponents`` their logarithms (kept
    separate so scaling in the sweep time stays testable after the
    factors underflow), ``betas``/``beta_bars`` the re-anchoring
    exponents between consecutive zeros along the upper and lower
    boundary.  ``chi_ratios`` lists the named route correction factors,
    all exactly one at leading order.  ``upper_zeros``/``lower_zeros``
    are the polished finite-time zeros the integrals ran between.
    """

    matrices: tuple[tuple[tuple[complex, complex],
                          tuple[complex, complex]], ...]
    alphas: tuple[complex, ...]
    alpha_exponents: tuple[complex, ...]
    betas: tuple[complex, ...]
    beta_bars: tuple[complex, ...]
    chi_ratios: tuple[tuple[str, complex], ...]
    solutions: tuple[FundamentalSolution, ...]
    upper_zeros: tuple[complex, ...]
    lower_zeros: tuple[complex, ...]
    quadrature_error: float

    @property
    def product(self) -> tuple[tuple[complex, complex],
                               tuple[complex, complex]]:
        acc = self.matrices[0]
        for m in self.matrices[1:]:
            acc = (
                (acc[0][0] * m[0][0] + acc[0][1] * m[1][0],
                 acc[0][0] * m[0][1] + acc[0][1] * m[1][1]),
                (acc[1][0] * m[0][0] + acc[1][1] * m[1][0],
                 acc[1][0] * m[0][1] + acc[1][1] * m[1][1]),
            )
        return acc

    @property
    def m21(self) -> complex:
        return self.product[1][0]


@dataclass(frozen=True)
class TransitionResult:
    """A transition amplitude with its decomposition.

    The amplitude is defined up to an overall quarter turn; the reported
    choice is recorded in ``quarter_turns`` and never reaches the
    probability.  ``exponent`` is the decay exponent of the conjugate
    pair (the probability scales as its negative exponential),
    ``phases`` are the real interference phases of the summed terms, and
    the ``winding_*`` fields hold the integer loop counts of the tangent
    half-angle map that fixed the quarter-turn offsets.  ``tail_bound``
    reports the magnitude of the real-axis tail correction when improper
    integrals were truncated.
    """

    amplitude: complex
    probability: float
    method: str
    exponent: float | None = None
    phases: tuple[float, ...] = ()
    winding_pair: int | None = None
    winding_upper: tuple[int, ...] = ()
    winding_tail: tuple[int, ...] = ()
    quarter_turns: int = 0
    tail_bound: float | None = None

    def __post_init__(self):
        if self.method not in METHOD_TAGS:
            raise AmplitudeError(f"unknown method tag {self.method!r}; "
                                 f"choose from {METHOD_TAGS}")
        if not math.isfinite(self.probability) or self.probability < 0.0:
            raise AmplitudeError("probability must be finite and >= 0")
        square = abs(self.amplitude) ** 2
        if abs(self.probability - square) > 1e-9 * max(square, 1e-300):
            raise AmplitudeError("probability must equal the squared "
                                 "amplitude modulus")

    @property
    def decomposition(self) -> dict:
        return {
            "exponent": self.exponent,
            "phases": list(self.phases),
            "winding_pair": self.winding_pair,
            "winding_upper": list(self.winding_upper),
            "winding_tail": list(self.winding_tail),
            "quarter_turns": self.quarter_turns,
            "tail_bound": self.tail_bound,
        }

    def to_json(self) -> str:
        return json.dumps({
            "amplitude": [self.amplitude.real, self.amplitude.imag],
            "probability": self.probability,
            "method": self.method,
            "decomposition": self.decomposition,
        })


# --------------------------------------------------------------------------
# Shared plumbing

def _coerce_potential(source) -> EffectivePotential:
    if isinstance(source, EffectivePotential):
        return source
    if isinstance(source, FieldProfile):
        return make_effective_potential(source)
    raise TypeError(f"expected a field profile or effective potential, "
                    f"got {type(source).__name__}")


def _as_full(ep: EffectivePotential) -> EffectivePotential:
    if ep.mode == "full_q2":
        return ep
    return EffectivePotential(profile=ep.profile, mode="full_q2",
                              poles=ep.poles, langer=ep.langer,
                              _evals=ep._evals)


def _newton_zero(full: EffectivePotential, seed: complex,
                 T: float) -> complex:
    z = complex(seed)
    for _ in range(60):
        try:
            value = eval_q2(full, z, T)
            slope = potential_derivative(full, z, T)
        except (EvalDomainError, FieldError, ArithmeticError) as exc:
            raise AmplitudeError(
                f"potential evaluation failed near {z:.6g} while "
                f"polishing a zero: {exc}") from exc
        if slope == 0:
            raise AmplitudeError(
                f"flat potential at {z:.6g}; degenerate zero suspected")
        step = value / slope
        z -= step
        if abs(step) <= 1e-14 * (1.0 + abs(z)):
            break
    else:
        raise AmplitudeError(f"zero polishing stalled near {seed:.6g}")
    if abs(z - seed) > 0.5:
        raise AmplitudeError(
            f"polished zero drifted from {seed:.6g} to {z:.6g}; the "
            "finite-time potential has no zero near the chain point")
    return z


def _polished_ladder(ep: EffectivePotential, chain,
                     T: float) -> tuple[tuple[complex, ...],
                                        tuple[complex, ...]]:
    """Finite-time zeros above and below the axis, in chain order."""
    points = getattr(chain, "points", None)
    if not points:
        raise AmplitudeError("a chain with at least one zero is required")
    full = _as_full(ep)
    uppers = tuple(_newton_zero(full, seed, T) for seed in points)
    lowers = tuple(_newton_zero(full, complex(seed).conjugate(), T)
                   for seed in points)
    anchor = _newton_zero(full, chain.anchor, T)
    if abs(anchor - lowers[0]) > 1e-8 * (1.0 + abs(anchor)):
        raise AmplitudeError("the chain anchor does not polish onto the "
                             "mirror partner of the first chain zero")
    ladder = uppers + lowers
    for i in range(len(ladder)):
        for j in range(i + 1, len(ladder)):
            if abs(ladder[i] - ladder[j]) < 1e-6:
                raise AmplitudeError("two polished zeros merged; the "
                                     "chain is too degenerate to connect")
    return uppers, lowers


def _away_from(exclude, candidates) -> tuple[complex, ...]:
    keep: list[complex] = []
    for z in candidates:
        z = complex(z)
        if any(abs(z - e) <= 1e-9 for e in exclude):
            continue
        if any(abs(z - k) <= 1e-12 for k in keep):
            continue
        keep.append(z)
    return tuple(keep)


def _pair_winding(profile: FieldProfile, a: complex, b: complex) -> int:
    """Map winding along the clockwise stadium around two points."""
    radius = min(0.1, abs(b - a) / 3.0)
    failure = None
    while radius >= 1e-3:
        loop = build_enclosing_loop(a, b, radius)
        try:
            return winding_number(profile, loop, branch_anchor=0j)
        except ContourError as exc:
            failure = exc
            radius *= 0.5
    raise AmplitudeError(
        f"no clean loop fits around {a:.6g} and {b:.6g}: {failure}")


def _make_phase_action(ep: EffectivePotential, obstacles, T: float,
                       side: str, tol_factor: float):
    """Integrator for the driving phase rate between two chain points.

    Returns a closure computing the integral of the field magnitude
    scaled by the sweep rate, minus the azimuthal correction for
    non-planar fields, along the obstacle-avoiding path between two
    points.  Accumulated quadrature error is tracked on the closure.
    """
    profile = ep.profile
    abs_tol = 1e-12 * tol_factor
    rel_tol = 1e-11 * tol_factor
    state = {"error": 0.0}

    def action(start: complex, end: complex,
               tags: tuple[str, str]) -> complex:
        clear = _away_from((start, end), obstacles)
        path = build_avoiding_path(start, end, obstacles=clear,
                                   endpoint_tags=tags, side=side)
        act = action_integral(ep, path, "mu_T_B", T=T, abs_tol=abs_tol,
                              rel_tol=rel_tol, branch_anchor=0j)
        value = act.value
        state["error"] += act.error
        if not profile.planar:
            turn = action_integral(ep, path, "phidot_cos_theta",
                                   abs_tol=abs_tol, rel_tol=rel_tol,
                                   branch_anchor=0j)
            value -= turn.value
            state["error"] += turn.error
        return value

    return action, state


def _validate_side(side: str):
    if side not in ("upper", "lower"):
        raise AmplitudeError(f"unknown detour side {side!r}")


# --------------------------------------------------------------------------
# Connection matrices

def connection_matrices(ep, chain, T: float,
                        chi_order: int = 0) -> ConnectionMatrices:
    """Transfer matrices across the zeros of the finite-time potential.

    The chain's zeros are polished into zeros of the full potential at
    the given sweep time, and the root of the potential is integrated
    between them along obstacle-avoiding paths: vertically between each
    mirror pair (the ``alpha`` factors) and along the upper and lower
    boundary between consecutive zeros (the ``beta`` exponents).  With
    ``chi_order=1`` each named route factor becomes one plus the
    first-order correction of :func:`chi_first_order` along the route's
    chord, trimmed a tenth at each end to stay clear of the zeros;
    routes into the sector past the last zero reuse that zero's pair,
    and degenerate routes stay exactly one.
    """
    ep = _coerce_potential(ep)
    if T <= 0:
        raise AmplitudeError("the sweep time must be positive")
    if chi_order not in (0, 1):
        raise AmplitudeError("chi_order must be 0 or 1")
    uppers, lowers = _polished_ladder(ep, chain, T)
    full = _as_full(ep)
    n = len(uppers)
    ladder = uppers + lowers
    pole_locations = tuple(location for location, _ in ep.poles)
    state = {"error": 0.0}

    def root_action(start: complex, end: complex) -> complex:
        clear = _away_from((start, end), pole_locations + ladder)
        path = build_avoiding_path(
            start, end, obstacles=clear,
            endpoint_tags=("turning-point", "turning-point"))
        act = action_integral(full, path, "sqrt_q2", T=T, abs_tol=1e-13,
                              rel_tol=1e-12, branch_anchor=0j)
        state["error"] += act.error
        return act.value

    alpha_exponents = tuple(1j * T * root_action(v, u)
                            for u, v in zip(uppers, lowers))
    alphas = tuple(cmath.exp(e) for e in alpha_exponents)
    betas = tuple(1j * T * root_action(uppers[j - 1], uppers[j])
                  for j in range(1, n))
    beta_bars = tuple(-1j * T * root_action(lowers[j - 1], lowers[j])
                      for j in range(1, n))

    def sector_zero(index: int, barred: bool) -> complex:
        # both first-sector solutions are anchored at the first lower zero
        if index == 1:
            return lowers[0]
        at = min(index - 2, n - 1)
        return lowers[at] if barred else uppers[at]

    route_values: dict[tuple[int, bool, int, bool], complex] = {}

    def route(a: int, a_bar: bool, b: int, b_bar: bool) -> complex:
        key = (a, a_bar, b, b_bar)
        if key in route_values:
            return route_values[key]
        value = 1.0 + 0j
        if chi_order == 1:
            start = sector_zero(a, a_bar)
            end = sector_zero(b, b_bar)
            if abs(end - start) > 1e-9:
                chord = ContourPath(points=(start + 0.1 * (end - start),
                                            start + 0.9 * (end - start)))
                value = 1.0 + chi_first_order(full, chord, T)
        route_values[key] = value
        return value

    def route_name(a: int, a_bar: bool, b: int, b_bar: bool) -> str:
        first = f"{a}-bar" if a_bar else f"{a}"
        second = f"{b}-bar" if b_bar else f"{b}"
        return f"{first}->{second}"

    matrices = []
    front = route(2, False, 2, True)
    matrices.append((
        (0j, 0j),
        (-1j * alphas[0] * route(1, True, 2, True) / front,
         route(1, True, 2, False) / front),
    ))
    for k in range(2, n + 1):
        alpha = alphas[k - 1]
        grow = cmath.exp(betas[k - 2])
        decay = cmath.exp(beta_bars[k - 2])
        front = route(k + 1, False, k + 1, True)
        matrices.append((
            (grow * route(k, False, k + 1, True) / front,
             1j * alpha * grow * route(k, False, k + 1, False) / front),
            (-1j * alpha * decay * route(k, True, k + 1, True) / front,
             decay * route(k, True, k + 1, False) / front),
        ))

    chi_ratios = tuple(
        (route_name(*key), value) for key, value in route_values.items())
    solutions = []
    for index in range(1, n + 2):
        solutions.append(FundamentalSolution(
            label=f"{index}", turning_point=sector_zero(index, False),
            sigma=1))
        solutions.append(FundamentalSolution(
            label=f"{index}-bar", turning_point=sector_zero(index, True),
            sigma=-1))
    return ConnectionMatrices(
        matrices=tuple(matrices), alphas=alphas,
        alpha_exponents=alpha_exponents, betas=betas, beta_bars=beta_bars,
        chi_ratios=chi_ratios, solutions=tuple(solutions),
        upper_zeros=uppers, lower_zeros=lowers,
        quadrature_error=state["error"])


# --------------------------------------------------------------------------
# Interference sum over the chain

def adiabatic_amplitude(ep, chain, T: float, *, l: int = 0,
                        side: str = "upper",
                        tol_factor: float = 1.0) -> TransitionResult:
    """Leading-order amplitude as an interference sum over chain zeros.

    One term per chain zero: the conjugate pair nearest the real axis
    contributes the common exponentially small modulus, each zero adds a
    phase built from the driving-rate integral along the upper boundary
    and an integer quarter-turn offset from the map winding around the
    zeros passed.  ``l`` picks the undetermined overall quarter turn,
    ``side`` the detour side of obstacle-avoiding paths, and
    ``tol_factor`` scales the quadrature tolerances; the probability is
    invariant under all three.
    """
    ep = _coerce_potential(ep)
    _validate_side(side)
    if T <= 0:
        raise AmplitudeError("the sweep time must be positive")
    points = getattr(chain, "points", None)
    if not points:
        raise AmplitudeError("a chain with at least one zero is required")
    profile = ep.profile
    uppers = tuple(complex(p) for p in points)
    anchor = complex(chain.anchor)
    n = len(uppers)
    first, last = uppers[0], uppers[-1]
    mirror = tuple(u.conjugate() for u in uppers)
    obstacles = tuple(loc for loc, _ in ep.poles) + uppers + mirror
    action, _ = _make_phase_action(ep, obstacles, T, side, tol_factor)

    pair = action(anchor, first, ("turning-point", "turning-point"))
    left = action(anchor, 0j, ("turning-point", "origin"))
    right = action(last, 0j, ("turning-point", "origin"))
    winding_pair = _pair_winding(profile, anchor, first)

    heads = []
    tails = []
    winding_upper = []
    winding_tail = []
    for k, zero in enumerate(uppers):
        if k == 0:
            heads.append(0j)
            winding_upper.append(0)
        else:
            heads.append(action(first, zero,
                                ("turning-point", "turning-point")))
            winding_upper.append(_pair_winding(profile, first, zero))
        if k == n - 1:
            tails.append(0j)
            winding_tail.append(0)
        else:
            tails.append(action(zero, last,
                                ("turning-point", "turning-point")))
            winding_tail.append(_pair_winding(profile, zero, last))

    shared = 0.5j * (pair + left + right)
    total = 0j
    phases = []
    for head, tail, up, down in zip(heads, tails, winding_upper,
                                    winding_tail):
        exponent = -0.5j * (head - tail)
        offset = 0.25 * math.pi * (up - down)
        phases.append(exponent.imag + offset)
        total += cmath.exp(exponent + 1j * offset)
    amplitude = (-(1j ** (l + 1))
                 * cmath.exp(-0.25j * math.pi * winding_pair + shared)
                 * total)
    return TransitionResult(
        amplitude=amplitude, probability=abs(amplitude) ** 2,
        method="adiabatic_sum", exponent=pair.imag, phases=tuple(phases),
        winding_pair=winding_pair, winding_upper=tuple(winding_upper),
        winding_tail=tuple(winding_tail), quarter_turns=l)


# --------------------------------------------------------------------------
# Two-zero closed form

def _transverse_square(profile: FieldProfile, s: complex) -> complex:
    # sheet-free: the transverse square needs no magnitude branch
    bx, by, _bz, _dx, _dy, _dz = profile.component_values(s)
    return bx * bx + by * by


def _edge_turns(profile: FieldProfile, start: complex, end: complex,
                budget: int = 20000) -> float:
    """Continuous argument change of the transverse square along an edge."""
    count = 96
    ts = [k / count for k in range(count + 1)]
    values = [_transverse_square(profile, start + t * (end - start))
              for t in ts]
    total = 0.0
    position = 0
    spent = len(ts)
    while position < len(ts) - 1:
        a, b = values[position], values[position + 1]
        scale = max(abs(a), abs(b))
        if scale < 1e-13:
            raise AmplitudeError(
                "the transverse component vanishes on the strip boundary")
        step = cmath.phase(b / a)
        if abs(step) > 1.2 and ts[position + 1] - ts[position] > 1e-9:
            if spent >= budget:
                raise AmplitudeError("strip boundary sampling budget "
                                     "exhausted; zero hugging the edge")
            mid = 0.5 * (ts[position] + ts[position + 1])
            ts.insert(position + 1, mid)
            values.insert(position + 1, _transverse_square(
                profile, start + mid * (end - start)))
            spent += 1
            continue
        total += step
        position += 1
    return total


def _strip_zero_count(ep: EffectivePotential, chain) -> int:
    """Zeros of the transverse square inside the principal strip.

    The strip is truncated to a rectangle spanning the chain's real
    extent plus the default search reach; the count comes from the
    argument principle along the boundary, with declared pole orders
    added back.  The rectangle grows slightly if a declared pole sits on
    its boundary, which can only widen the zero hunt.
    """
    profile = ep.profile
    uppers = tuple(complex(p) for p in chain.points)
    anchor = complex(chain.anchor)
    top = max(u.imag for u in uppers)
    bottom = min((anchor.imag,) + tuple(-u.imag for u in uppers))
    reach = max(8.0, max(abs(u.real) for u in uppers) + 2.0)
    for _ in range(8):
        near_edge = False
        for location, _ in ep.poles:
            on_x = abs(location.real) <= reach + 1e-7
            on_y = bottom - 1e-7 <= location.imag <= top + 1e-7
            at_x = abs(abs(location.real) - reach) < 1e-7
            at_y = (abs(location.imag - top) < 1e-7
                    or abs(location.imag - bottom) < 1e-7)
            if (at_x and on_y) or (at_y and on_x):
                near_edge = True
        if not near_edge:
            break
        reach += 3.3e-4
        top += 2.7e-4
        bottom -= 3.1e-4
    corners = (complex(-reach, bottom), complex(reach, bottom),
               complex(reach, top), complex(-reach, top))
    total = 0.0
    for a, b in zip(corners, corners[1:] + corners[:1]):
        total += _edge_turns(profile, a, b)
    turns = total / (2.0 * math.pi)
    nearest = round(turns)
    if abs(turns - nearest) > 1e-3:
        raise AmplitudeError(
            f"strip boundary count did not close to an integer ({turns})")
    inside = sum(order for location, order in ep.poles
                 if -reach < location.real < reach
                 and bottom < location.imag < top)
    return int(nearest) + inside


def two_tp_amplitude(ep, chain, T: float, *, l: int = 0,
                     side: str = "upper",
                     tol_factor: float = 1.0) -> TransitionResult:
    """Closed cosine form of the amplitude for a two-zero chain.

    The interference sum collapses to twice a cosine whose argument is
    half the driving-rate integral between the two upper zeros, offset
    by a quarter turn per winding unit.  Requires the transverse square
    to have no zeros inside the principal strip; when that fails the
    general interference sum is returned instead (its method tag says
    so).
    """
    ep = _coerce_potential(ep)
    _validate_side(side)
    if T <= 0:
        raise AmplitudeError("the sweep time must be positive")
    points = getattr(chain, "points", None)
    if points is None or len(points) != 2:
        raise AmplitudeError("the closed cosine form needs a chain with "
                             "exactly two zeros")
    if _strip_zero_count(ep, chain) != 0:
        return adiabatic_amplitude(ep, chain, T, l=l, side=side,
                                   tol_factor=tol_factor)
    profile = ep.profile
    first, second = complex(points[0]), complex(points[1])
    anchor = complex(chain.anchor)
    obstacles = (tuple(loc for loc, _ in ep.poles)
                 + (first, second, first.conjugate(), second.conjugate()))
    action, _ = _make_phase_action(ep, obstacles, T, side, tol_factor)

    pair = action(anchor, first, ("turning-point", "turning-point"))
    left = action(anchor, 0j, ("turning-point", "origin"))
    right = action(second, 0j, ("turning-point", "origin"))
    chord = action(first, second, ("turning-point", "turning-point"))
    winding_pair = _pair_winding(profile, anchor, first)
    winding_chord = _pair_winding(profile, first, second)

    shared = 0.5j * (pair + left + right)
    argument = 0.5 * chord - 0.25 * math.pi * winding_chord
    amplitude = (-(1j ** (l + 1))
                 * cmath.exp(-0.25j * math.pi * winding_pair + shared)
                 * 2.0 * cmath.cos(argument))
    return TransitionResult(
        amplitude=amplitude, probability=abs(amplitude) ** 2,
        method="two_tp", exponent=pair.imag,
        phases=(argument.real,), winding_pair=winding_pair,
        winding_upper=(0, winding_chord), winding_tail=(winding_chord, 0),
        quarter_turns=l)


# --------------------------------------------------------------------------
# Planar constant-axis shortcut

def nikitin_umanskii_probability(field, T: float, *, graph=None,
                                 chain=None, l: int = 0,
                                 side: str = "upper",
                                 tol_factor: float = 1.0
                                 ) -> TransitionResult:
    """Two-zero probability for a planar field with a constant axis.

    For such fields the driving-rate integrand reduces to the bare
    magnitude, the two chain zeros are the points where the transverse
    pulse reaches plus or minus the imaginary axial strength, and the
    closed cosine form turns into a sine.  The field must be planar with
    a constant axial component; chains with another number of zeros fall
    back to the general interference sum.  A prebuilt ``graph`` or
    ``chain`` skips the geometry search.
    """
    ep = _coerce_potential(field)
    profile = ep.profile
    if not profile.planar:
        raise AmplitudeError("this shortcut needs a planar field")
    samples = [eval_field(profile, s).b[2]
               for s in (0.0, 0.7, -1.3, 2.1, -3.7)]
    scale = max(1.0, max(abs(v) for v in samples))
    if max(abs(v - samples[0]) for v in samples) > 1e-12 * scale:
        raise AmplitudeError("this shortcut needs a constant axial "
                             "component")
    if chain is None:
        if graph is None:
            graph = build_graph(make_effective_potential(profile))
        chain = graph.chain
        if chain is None:
            raise AmplitudeError(
                f"no usable zero chain: {graph.chain_error}")
    if len(chain.points) != 2:
        return adiabatic_amplitude(ep, chain, T, l=l, side=side,
                                   tol_factor=tol_factor)
    result = two_tp_amplitude(ep, chain, T, l=l, side=side,
                              tol_factor=tol_factor)
    if result.method != "two_tp":
        return result
    return dataclasses.replace(result, method="nikitin_umanskii")


# --------------------------------------------------------------------------
# Finite-time leading form

def _log_magnitude_rate(sample) -> complex:
    dot = (sample.b[0] * sample.db[0] + sample.b[1] * sample.db[1]
           + sample.b[2] * sample.db[2])
    return dot / sample.b2


def _guarded_root(full: EffectivePotential, s: complex,
                  T: float) -> complex:
    q = eval_potential(full, s, T)
    if q.real <= 0.0:
        raise AmplitudeError(
            f"the potential loses its positive real part at s={s:.6g}; "
            "the real-axis prefactor integrands are undefined there")
    return cmath.sqrt(q)


def exact_leading_amplitude(ep, chain, T: float, *, chi_order: int = 0,
                            s_max: float = 50.0) -> TransitionResult:
    """Finite-time amplitude from the transfer-matrix corner element.

    Multiplies the corner element of the transfer-matrix product by the
    square root of the asymptotic magnitude ratio, the initial tilt
    factor, two regularized prefactor integrals along the real axis, and
    the root-of-potential actions connecting the outermost zeros to the
    origin.  The real-axis integrands decay algebraically; they are
    truncated at ``s_max`` and the truncated tails are extrapolated from
    the last octave's decay power, with the correction magnitude
    reported as ``tail_bound``.
    """
    ep = _coerce_potential(ep)
    if s_max <= 1.0:
        raise AmplitudeError("the truncation must sit past the sweep core")
    matrices = connection_matrices(ep, chain, T, chi_order=chi_order)
    full = _as_full(ep)
    profile = ep.profile
    mu = profile.mu

    def left_rate(s: complex) -> complex:
        sample = eval_field(profile, s)
        root = _guarded_root(full, s, T)
        value = (0.5 * _log_magnitude_rate(sample)
                 - 0.5 * sample.theta_dot / sample.sin_theta
                 + 1j * T * (0.5 * mu * sample.bmag - root))
        if not profile.planar:
            value -= 0.5j * sample.phi_dot * sample.cos_theta
        return value

    def right_rate(s: complex) -> complex:
        sample = eval_field(profile, s)
        root = _guarded_root(full, s, T)
        value = (0.5 * _log_magnitude_rate(sample)
                 + 0.5 * sample.theta_dot * sample.cos_theta
                 / sample.sin_theta
                 + 1j * T * (root - 0.5 * mu * sample.bmag))
        if not profile.planar:
            value += 0.5j * sample.phi_dot * sample.cos_theta
        return value

    left_path = ContourPath(points=(complex(-s_max), 0j))
    right_path = ContourPath(points=(0j, complex(s_max)))
    left_act = action_integral(full, left_path, left_rate,
                               abs_tol=1e-11, rel_tol=1e-9)
    right_act = action_integral(full, right_path, right_rate,
                                abs_tol=1e-11, rel_tol=1e-9)

    def tail(rate, edge: complex) -> complex:
        inner = abs(rate(0.5 * edge))
        outer = abs(rate(edge))
        if outer == 0.0:
            return 0j
        power = math.log2(inner / outer)
        if power <= 1.05:
            raise AmplitudeError(
                "the prefactor integrand decays too slowly for the tail "
                f"extrapolation (fitted power {power:.3f})")
        return rate(edge) * s_max / (power - 1.0)

    left_tail = tail(left_rate, complex(-s_max))
    right_tail = tail(right_rate, complex(s_max))
    prefactor = left_act.value + left_tail + right_act.value + right_tail

    pole_locations = tuple(location for location, _ in ep.poles)
    ladder = matrices.upper_zeros + matrices.lower_zeros

    def root_action(start: complex) -> complex:
        clear = _away_from((start, 0j), pole_locations + ladder)
        path = build_avoiding_path(start, 0j, obstacles=clear,
                                   endpoint_tags=("turning-point",
                                                  "origin"))
        act = action_integral(full, path, "sqrt_q2", T=T, abs_tol=1e-13,
                              rel_tol=1e-12, branch_anchor=0j)
        return act.value

    descent = root_action(matrices.lower_zeros[0])
    ascent = root_action(matrices.upper_zeros[-1])

    start = eval_field(profile, -s_max)
    stop = eval_field(profile, s_max)
    tilt = cmath.sin(0.5 * eval_field(profile, 0.0).theta)
    ratio_root = cmath.sqrt(start.bmag / stop.bmag)

    amplitude = (matrices.m21 * ratio_root * tilt
                 * cmath.exp(prefactor + 1j * T * (descent + ascent)))
    exponent = -2.0 * matrices.alpha_exponents[0].real
    return TransitionResult(
        amplitude=amplitude, probability=abs(amplitude) ** 2,
        method="exact_leading", exponent=exponent,
        tail_bound=abs(left_tail) + abs(right_tail))


# --------------------------------------------------------------------------
# First-order correction factor

def _polyline_samples(points: tuple[complex, ...],
                      count: int) -> tuple[list[complex], list[complex]]:
    lengths = [abs(q - p) for p, q in zip(points, points[1:])]
    total = sum(lengths)
    if total == 0.0:
        raise AmplitudeError("the correction path has zero length")
    samples = []
    tangents = []
    cuts = []
    acc = 0.0
    for length in lengths:
        cuts.append(acc)
        acc += length
    for k in range(count):
        target = total * k / (count - 1)
        index = len(cuts) - 1
        while index > 0 and cuts[index] > target + 1e-15:
            index -= 1
        p, q = points[index], points[index + 1]
        seg = lengths[index]
        local = 0.0 if seg == 0.0 else (target - cuts[index]) / seg
        samples.append(p + min(local, 1.0) * (q - p))
        tangents.append((q - p) / seg * total)
    return samples, tangents


def _cumulative_simpson(values: list[complex], count: int) -> list[complex]:
    h = 1.0 / (count - 1)
    acc = [0j] * count
    for j in range(0, count - 2, 2):
        half = (h / 12.0) * (5.0 * values[j] + 8.0 * values[j + 1]
                             - values[j + 2])
        acc[j + 1] = acc[j] + half
        acc[j + 2] = acc[j] + (h / 3.0) * (values[j] + 4.0 * values[j + 1]
                                           + values[j + 2])
    return acc


def _chi_estimate(full: EffectivePotential, points: tuple[complex, ...],
                  T: float, count: int,
                  sigma: int | None = None) -> tuple[complex, int]:
    samples, tangents = _polyline_samples(points, count)
    roots: list[complex] = []
    hint = None
    for s in samples:
        try:
            q = eval_potential(full, s, T)
        except (EvalDomainError, FieldError, ArithmeticError) as exc:
            raise AmplitudeError(
                f"potential evaluation failed on the correction path at "
                f"s={s:.6g}: {exc}") from exc
        root = cmath.sqrt(q)
        if hint is not None and abs(root - hint) > abs(-root - hint):
            root = -root
        roots.append(root)
        hint = root
    speed = [r * t for r, t in zip(roots, tangents)]
    phases = _cumulative_simpson(speed, count)
    end = phases[-1]
    if sigma is None:
        # canonical means the oscillating factor stays bounded: the
        # phase's imaginary part may not overshoot the endpoint value in
        # the direction the chosen sign amplifies
        tops = [p.imag for p in phases]
        grow_plus = max(end.imag - t for t in tops)
        grow_minus = max(t - end.imag for t in tops)
        sigma = 1 if grow_plus <= grow_minus else -1
        if 2.0 * T * min(grow_plus, grow_minus) > 2.0:
            raise AmplitudeError(
                "the correction path is not canonical: the oscillating "
                "factor grows beyond bound for either sign")
    kernel = []
    for s, root, phase, tangent in zip(samples, roots, phases, tangents):
        omega = eval_omega_kernel(full, s, T, sqrt_hint=root)
        swing = cmath.exp(-2j * sigma * T * (end - phase))
        kernel.append(omega * (1.0 - swing) * tangent)
    h = 1.0 / (count - 1)
    total = 0j
    for j in range(0, count - 2, 2):
        total += (h / 3.0) * (kernel[j] + 4.0 * kernel[j + 1]
                              + kernel[j + 2])
    return (-sigma / (2j * T)) * total, sigma


def chi_first_order(ep, path: ContourPath, T: float) -> complex:
    """First-order correction to an exponential solution along a path.

    Integrates the correction kernel against one minus the oscillating
    factor of the accumulated phase difference, scaled by the reciprocal
    sweep time; the returned value is the correction term alone.  The
    path must be canonical: the solution sign is chosen so the
    oscillating factor stays bounded, and when the accumulated phase's
    imaginary part overshoots its endpoint value in both directions no
    sign works and the path is rejected.  The path must also stay clear
    of potential zeros, where the kernel diverges.
    """
    ep = _coerce_potential(ep)
    if T <= 0:
        raise AmplitudeError("the sweep time must be positive")
    if not isinstance(path, ContourPath):
        raise TypeError("chi_first_order needs a ContourPath")
    full = _as_full(ep)
    previous = None
    sigma = None
    for count in (257, 513, 1025, 2049, 4097, 8193, 16385):
        estimate, sigma = _chi_estimate(full, path.points, T, count,
                                        sigma)
        if previous is not None:
            gap = abs(estimate - previous)
            if gap <= max(1e-10, 1e-8 * abs(estimate)):
                return estimate
        previous = estimate
    raise AmplitudeError("the correction quadrature did not settle")

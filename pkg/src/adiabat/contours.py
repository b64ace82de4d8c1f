"""Complex-time paths, action integrals, and tangent-map winding numbers.

Amplitude formulas integrate field quantities along paths in the complex
time plane. This module provides the path type with obstacle-clearance
invariants, a deterministic builder that detours around obstacles, an
adaptive embedded-rule integrator aware of square-root endpoint zeros
(substituting u^2 for the distance so the integrand turns smooth), and
the integer winding count of the tangent half-angle map along closed
loops. Square-root branches are resolved by a pre-walked anchor chain,
so refinement order never changes which sheet a panel lands on.
"""

from __future__ import annotations

import bisect
import cmath
import heapq
import math
from dataclasses import dataclass
from typing import Callable, Union

from .exprlang import EvalDomainError
from .field import FieldError, FieldProfile, eval_F, eval_field
from .potential import EffectivePotential, eval_potential

__all__ = [
    "DEFAULT_CLEARANCE",
    "ENDPOINT_TAGS",
    "INTEGRAND_TAGS",
    "ContourError",
    "ContourPath",
    "ActionValue",
    "action_integral",
    "winding_number",
    "build_avoiding_path",
    "build_enclosing_loop",
]

#: Paths keep at least this distance from every declared obstacle.
DEFAULT_CLEARANCE = 0.05

ENDPOINT_TAGS = ("turning-point", "origin", "generic")

INTEGRAND_TAGS = ("mu_T_B", "phidot_cos_theta", "thetadot_over_sin_theta",
                  "sqrt_q2", "custom")


class ContourError(ValueError):
    """A path violates its invariants or an integral cannot be formed."""


@dataclass(frozen=True)
class ContourPath:
    """Oriented polyline in the complex time plane.

    ``endpoint_tags`` mark what the first and last points are: a simple
    zero of the integrand's radicand (``"turning-point"``), the real
    origin (``"origin"``), or nothing special.  Declared ``obstacles``
    must stay at least ``clearance`` away from every segment; violations
    are rejected at construction.
    """

    points: tuple[complex, ...]
    closed: bool = False
    endpoint_tags: tuple[str, str] = ("generic", "generic")
    obstacles: tuple[complex, ...] = ()
    clearance: float = DEFAULT_CLEARANCE

    def __post_init__(self):
        if len(self.points) < 2:
            raise ContourError("a path needs at least two points")
        for tag in self.endpoint_tags:
            if tag not in ENDPOINT_TAGS:
                raise ContourError(f"unknown endpoint tag {tag!r}")
        if self.clearance <= 0:
            raise ContourError("clearance must be positive")
        if self.closed and self.points[0] != self.points[-1]:
            raise ContourError("closed paths must end where they start")
        slack = self.clearance * (1.0 - 1e-9)
        for obstacle in self.obstacles:
            gap = _distance_to_polyline(obstacle, self.points)
            if gap < slack:
                raise ContourError(
                    f"path passes {gap:.4g} from obstacle {obstacle:.6g}, "
                    f"closer than the clearance {self.clearance}")

    @property
    def length(self) -> float:
        return sum(abs(q - p) for p, q in zip(self.points, self.points[1:]))


@dataclass(frozen=True)
class ActionValue:
    """Result of a path integral with its accuracy estimate."""

    value: complex
    error: float
    tag: str


def _distance_to_polyline(z: complex, pts: tuple[complex, ...]) -> float:
    best = math.inf
    for p, q in zip(pts, pts[1:]):
        seg = q - p
        norm = seg.real * seg.real + seg.imag * seg.imag
        if norm == 0.0:
            best = min(best, abs(z - p))
            continue
        t = ((z - p).real * seg.real + (z - p).imag * seg.imag) / norm
        t = min(1.0, max(0.0, t))
        best = min(best, abs(z - (p + t * seg)))
    return best


# --------------------------------------------------------------------------
# Integrands

def _resolve_sources(source):
    if isinstance(source, EffectivePotential):
        return source.profile, source
    if isinstance(source, FieldProfile):
        return source, None
    raise TypeError(f"expected a field profile or effective potential, "
                    f"got {type(source).__name__}")


def _make_integrand(source, tag_or_fn, T):
    """Return (tag, f) with f(s, token) -> (value, token).

    The token carries whatever the integrand needs for branch continuity:
    the previous field sample for field-based tags, the previous root for
    the potential action, nothing for custom callables.
    """
    if callable(tag_or_fn):
        fn = tag_or_fn

        def custom(s, token):
            return fn(s), None
        return "custom", custom

    profile, ep = _resolve_sources(source)
    if tag_or_fn == "mu_T_B":
        factor = profile.mu * (1.0 if T is None else T)

        def magnitude(s, token):
            sample = eval_field(profile, s, token)
            return factor * sample.bmag, sample
        return tag_or_fn, magnitude
    if tag_or_fn == "phidot_cos_theta":
        def azimuthal(s, token):
            sample = eval_field(profile, s, token)
            return sample.phi_dot * sample.cos_theta, sample
        return tag_or_fn, azimuthal
    if tag_or_fn == "thetadot_over_sin_theta":
        def polar(s, token):
            sample = eval_field(profile, s, token)
            if abs(sample.sin_theta) < 1e-13:
                raise ContourError(
                    f"polar rate integrand blows up at s={s:.6g}")
            return sample.theta_dot / sample.sin_theta, sample
        return tag_or_fn, polar
    if tag_or_fn == "sqrt_q2":
        if ep is None:
            raise ContourError(
                "the potential action needs an effective potential, "
                "not a bare field profile")

        def root(s, token):
            value = cmath.sqrt(eval_potential(ep, s, T))
            if token is not None and abs(value - token) > abs(value + token):
                value = -value
            return value, value
        return tag_or_fn, root
    raise ContourError(f"unknown integrand tag {tag_or_fn!r}; "
                       f"choose from {INTEGRAND_TAGS} or pass a callable")


# --------------------------------------------------------------------------
# Quadrature

# Gauss-Kronrod 7/15 pair on [-1, 1]; odd positions are the Gauss nodes.
_K15_NODES = (
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0, 0.207784955007898, 0.405845151377397,
    0.586087235467691, 0.741531185599394, 0.864864423359769,
    0.949107912342759, 0.991455371120813)
_K15_WEIGHTS = (
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728, 0.204432940075298,
    0.190350578064785, 0.169004726639267, 0.140653259715525,
    0.104790010322250, 0.063092092629979, 0.022935322010529)
_G7_WEIGHTS = (
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870)


class _Leg:
    """One polyline segment with its parametrization and branch anchors.

    ``kind`` selects the map from t in [0, 1] to the segment: plain
    linear, or quadratic from whichever end sits on a turning point so
    the square-root factor of the integrand becomes linear in t.
    """

    __slots__ = ("start", "end", "kind", "anchor_ts", "anchor_tokens")

    def __init__(self, start: complex, end: complex, kind: str):
        self.start = start
        self.end = end
        self.kind = kind
        self.anchor_ts: list[float] = []
        self.anchor_tokens: list = []

    def map(self, t: float) -> tuple[complex, complex]:
        span = self.end - self.start
        if self.kind == "linear":
            return self.start + t * span, span
        if self.kind == "square-start":
            return self.start + t * t * span, 2.0 * t * span
        back = 1.0 - t
        return self.end - back * back * span, 2.0 * back * span

    def seed_token(self, t: float):
        if not self.anchor_ts:
            return None
        position = bisect.bisect_right(self.anchor_ts, t) - 1
        return self.anchor_tokens[max(position, 0)]


def _build_legs(path: ContourPath) -> list[_Leg]:
    legs = []
    last = len(path.points) - 2
    for index, (p, q) in enumerate(zip(path.points, path.points[1:])):
        kind = "linear"
        if index == 0 and path.endpoint_tags[0] == "turning-point":
            kind = "square-start"
        elif index == last and path.endpoint_tags[1] == "turning-point":
            kind = "square-end"
        legs.append(_Leg(p, q, kind))
    return legs


def _anchor_legs(legs, f, seed, budget=20000):
    """Pre-walk the path, pinning the integrand's branch along it.

    Anchors sit at cell centers, never on leg endpoints (an endpoint may
    be a zero of the radicand where the sheets collide).  Cells split
    until neighbor values change by less than their common scale, which
    keeps the nearest-value sheet rule unambiguous for any point between
    two anchors.
    """
    token = seed
    spent = 0
    for leg in legs:
        ts = [(k + 0.5) / 17 for k in range(17)]
        values: list = []
        tokens: list = []
        for t in ts:
            s, _ = leg.map(t)
            value, token = _eval_guarded(f, s, token)
            values.append(value)
            tokens.append(token)
            spent += 1
        position = 0
        while position < len(ts) - 1:
            if spent > budget:
                raise ContourError("branch anchoring budget exhausted; "
                                   "path may graze a singularity")
            a, b = values[position], values[position + 1]
            gap = ts[position + 1] - ts[position]
            scale = max(abs(a), abs(b))
            if gap > 1e-6 and scale > 0 and abs(b - a) > 0.6 * scale:
                mid = 0.5 * (ts[position] + ts[position + 1])
                s, _ = leg.map(mid)
                value, mid_token = _eval_guarded(f, s, tokens[position])
                ts.insert(position + 1, mid)
                values.insert(position + 1, value)
                tokens.insert(position + 1, mid_token)
                spent += 1
            else:
                position += 1
        leg.anchor_ts = ts
        leg.anchor_tokens = tokens
        token = tokens[-1]


def _eval_guarded(f, s, token):
    try:
        return f(s, token)
    except (EvalDomainError, FieldError, ArithmeticError) as exc:
        raise ContourError(f"singularity on path at s={s:.6g}: {exc}") \
            from exc


def _panel(leg: _Leg, f, lo: float, hi: float) -> tuple[complex, float]:
    half = 0.5 * (hi - lo)
    center = 0.5 * (hi + lo)
    token = leg.seed_token(lo + half * (1.0 + _K15_NODES[0]))
    kronrod = 0j
    gauss = 0j
    for index, (node, weight) in enumerate(zip(_K15_NODES, _K15_WEIGHTS)):
        t = center + half * node
        s, jacobian = leg.map(t)
        value, token = _eval_guarded(f, s, token)
        term = value * jacobian
        kronrod += weight * term
        if index % 2 == 1:
            gauss += _G7_WEIGHTS[index // 2] * term
    return kronrod * half, abs(kronrod - gauss) * half


def action_integral(source, path: ContourPath,
                    integrand: Union[str, Callable[[complex], complex]]
                    = "sqrt_q2",
                    T: float | None = None,
                    abs_tol: float = 1e-10, rel_tol: float = 1e-8,
                    branch_seed: complex | None = None,
                    branch_anchor: complex | None = None,
                    max_panels: int = 4000) -> ActionValue:
    """Integrate a tagged quantity along ``path``.

    Adaptive Gauss-Kronrod panels split where the embedded error estimate
    is largest until the total is below ``max(abs_tol, rel_tol |value|)``.
    Endpoints tagged ``"turning-point"`` integrate in the square root of
    the distance from the endpoint, which removes the half-power of the
    radicand there.  ``branch_seed`` pins the square-root sheet at the
    start of the path; by default the principal branch at the first
    sample is taken.  ``branch_anchor`` instead pins the sheet at a point
    off the path (typically the origin, where the physical branch is the
    principal one) and carries it along the straight probe segment from
    there to the path's start.
    """
    tag, f = _make_integrand(source, integrand, T)
    legs = _build_legs(path)
    if tag != "custom":
        walk = legs
        if (branch_anchor is not None
                and abs(branch_anchor - path.points[0]) > 1e-12):
            walk = [_Leg(branch_anchor, path.points[0], "linear")] + legs
        _anchor_legs(walk, f, branch_seed)
    heap: list = []
    sequence = 0
    total = 0j
    total_error = 0.0
    for leg in legs:
        value, error = _panel(leg, f, 0.0, 1.0)
        heapq.heappush(heap, (-error, sequence, leg, 0.0, 1.0, value, error))
        sequence += 1
        total += value
        total_error += error
    panels = len(heap)
    while total_error > max(abs_tol, rel_tol * abs(total)):
        if panels >= max_panels or not heap:
            raise ContourError(
                f"tolerance not met: error {total_error:.3e} after "
                f"{panels} panels")
        _, _, leg, lo, hi, value, error = heapq.heappop(heap)
        total -= value
        total_error -= error
        mid = 0.5 * (lo + hi)
        for half_lo, half_hi in ((lo, mid), (mid, hi)):
            half_value, half_error = _panel(leg, f, half_lo, half_hi)
            heapq.heappush(heap, (-half_error, sequence, leg, half_lo,
                                  half_hi, half_value, half_error))
            sequence += 1
            total += half_value
            total_error += half_error
        panels += 1
    return ActionValue(value=total, error=total_error, tag=tag)


# --------------------------------------------------------------------------
# Winding numbers

def winding_number(profile: FieldProfile, path: ContourPath,
                   max_samples: int = 200000,
                   branch_anchor: complex | None = None) -> int:
    """Count how often the tangent half-angle map circles zero.

    Walks the closed ``path``, tracking the magnitude sheet of the map
    continuously, and accumulates the argument change between successive
    samples, refining any gap whose jump is too large to trust.  The
    total must land within 1e-3 of an integer; counterclockwise image
    rotation counts positive.  ``branch_anchor`` selects the magnitude
    sheet by continuing it along the straight probe segment from that
    point to the path's start; by default the principal sheet at the
    start is used.
    """
    if not path.closed:
        raise ContourError("winding numbers need a closed path")
    points = list(path.points)
    samples: list[tuple[complex, complex, complex]] = []  # (s, F, bmag)
    previous = None
    if (branch_anchor is not None
            and abs(branch_anchor - points[0]) > 1e-12):
        previous = _thread_magnitude(profile, branch_anchor, points[0])
    for p, q in zip(points, points[1:]):
        for k in range(8):
            s = p + (k / 8) * (q - p)
            value = _eval_F_guarded(profile, s, previous)
            samples.append((s, value.f, value.bmag))
            previous = value.bmag
    first = _eval_F_guarded(profile, points[0], previous)
    samples.append((points[0], first.f, first.bmag))

    index = 0
    spent = len(samples)
    while index < len(samples) - 1:
        (s0, f0, mag0), (s1, f1, _) = samples[index], samples[index + 1]
        if f0 == 0 or f1 == 0:
            raise ContourError("the map vanishes on the path")
        if abs(cmath.phase(f1 / f0)) <= 1.0:
            index += 1
            continue
        if spent >= max_samples or abs(s1 - s0) < 1e-12:
            raise ContourError(
                "argument tracking is too coarse near "
                f"s={s0:.6g} and cannot refine further")
        mid = 0.5 * (s0 + s1)
        value = _eval_F_guarded(profile, mid, mag0)
        samples.insert(index + 1, (mid, value.f, value.bmag))
        spent += 1

    total = 0.0
    for (_, f0, _), (_, f1, _) in zip(samples, samples[1:]):
        total += cmath.phase(f1 / f0)
    turns = total / (2.0 * math.pi)
    nearest = round(turns)
    if abs(turns - nearest) > 1e-3:
        raise ContourError(
            f"argument change {turns:.6f} turns is not close to an "
            "integer; the path may cross a sheet collision")
    return int(nearest)


def _eval_F_guarded(profile, s, hint):
    try:
        return eval_F(profile, s, hint)
    except (EvalDomainError, FieldError, ArithmeticError) as exc:
        raise ContourError(
            f"map evaluation failed on path at s={s:.6g}: {exc}") from exc


def _thread_magnitude(profile, start: complex, end: complex,
                      budget: int = 4000) -> complex:
    """Field magnitude at ``end`` continued straight from ``start``.

    The sheet is pinned at ``start`` (hintless evaluation there picks the
    principal branch) and carried forward by the nearest-value rule, with
    the same split-until-smooth walk as :func:`_anchor_legs`.
    """
    span = end - start
    ts = [k / 16 for k in range(17)]
    mags: list[complex] = []
    hint = None
    for t in ts:
        value = _eval_F_guarded(profile, start + t * span, hint)
        mags.append(value.bmag)
        hint = value.bmag
    position = 0
    spent = len(ts)
    while position < len(ts) - 1:
        a, b = mags[position], mags[position + 1]
        gap = ts[position + 1] - ts[position]
        scale = max(abs(a), abs(b))
        if gap > 1e-6 and scale > 0 and abs(b - a) > 0.6 * scale:
            if spent >= budget:
                raise ContourError(
                    "magnitude threading budget exhausted near "
                    f"s={start + ts[position] * span:.6g}")
            mid = 0.5 * (ts[position] + ts[position + 1])
            value = _eval_F_guarded(profile, start + mid * span, a)
            ts.insert(position + 1, mid)
            mags.insert(position + 1, value.bmag)
            spent += 1
        else:
            position += 1
    return mags[-1]


# --------------------------------------------------------------------------
# Path construction

def build_avoiding_path(start: complex, end: complex,
                        obstacles=(),
                        clearance: float = DEFAULT_CLEARANCE,
                        endpoint_tags: tuple[str, str] = ("generic",
                                                          "generic"),
                        side: str = "upper",
                        ) -> ContourPath:
    """Connect two points, detouring over any obstacle in the way.

    The path follows the straight segment except where an obstacle comes
    within ``clearance`` of it; there it rides a circular arc of radius
    twice the clearance around the obstacle.  With ``side="upper"`` the
    arc whose midpoint has the larger imaginary part (larger real part
    on a tie) wins; ``side="lower"`` mirrors that preference.  Either
    way the choice is deterministic.  An arc that would itself pass too
    close to another obstacle grows until it clears.
    """
    start, end = complex(start), complex(end)
    obstacles = tuple(complex(z) for z in obstacles)
    if side not in ("upper", "lower"):
        raise ContourError(f"unknown detour side {side!r}")
    for obstacle in obstacles:
        for endpoint in (start, end):
            if abs(endpoint - obstacle) < clearance:
                raise ContourError(
                    f"endpoint {endpoint:.6g} is within the clearance of "
                    f"obstacle {obstacle:.6g}")
    span = end - start
    span_norm = abs(span) ** 2
    if span_norm == 0.0:
        raise ContourError("endpoints coincide")

    blocking = []
    for obstacle in obstacles:
        t = ((obstacle - start).real * span.real
             + (obstacle - start).imag * span.imag) / span_norm
        t = min(1.0, max(0.0, t))
        if abs(start + t * span - obstacle) < clearance:
            blocking.append((t, obstacle))
    blocking.sort(key=lambda item: item[0])

    points: list[complex] = [start]
    cursor = 0.0
    for _, obstacle in blocking:
        radius = 2.0 * clearance
        nearest_end = min(abs(start - obstacle), abs(end - obstacle))
        if nearest_end < radius:
            radius = 0.5 * (nearest_end + clearance)
        for _ in range(24):
            crossing = _disk_crossing(start, span, obstacle, radius)
            if crossing is None:
                break
            t_in, t_out = crossing
            arc = _arc_over(obstacle, start + max(t_in, 0.0) * span,
                            start + min(t_out, 1.0) * span, radius, side)
            others = [z for z in obstacles if z != obstacle]
            if all(_distance_to_polyline(z, arc) >= clearance
                   for z in others):
                break
            radius *= 1.5
        else:
            raise ContourError(
                f"cannot clear the neighborhood of obstacle "
                f"{obstacle:.6g}")
        if crossing is None:
            continue
        if t_in > cursor:
            points.append(start + t_in * span)
        points.extend(arc[1:] if points[-1] == arc[0] else arc)
        cursor = min(t_out, 1.0)
    if cursor < 1.0 or points[-1] != end:
        points.append(end)
    return ContourPath(points=tuple(points), closed=False,
                       endpoint_tags=endpoint_tags, obstacles=obstacles,
                       clearance=clearance)


def _disk_crossing(start, span, center, radius):
    # Intersections of start + t*span with |z - center| = radius.
    rel = start - center
    a = span.real ** 2 + span.imag ** 2
    b = 2.0 * (rel.real * span.real + rel.imag * span.imag)
    c = rel.real ** 2 + rel.imag ** 2 - radius * radius
    disc = b * b - 4.0 * a * c
    if disc <= 0.0:
        return None
    root = math.sqrt(disc)
    t_in = (-b - root) / (2.0 * a)
    t_out = (-b + root) / (2.0 * a)
    if t_out <= 0.0 or t_in >= 1.0:
        return None
    return t_in, t_out


def _arc_over(center: complex, entry: complex, exit_: complex,
              radius: float, side: str = "upper",
              samples_per_turn: int = 96) -> list[complex]:
    angle_in = cmath.phase(entry - center)
    angle_out = cmath.phase(exit_ - center)
    ccw = (angle_out - angle_in) % (2.0 * math.pi)
    cw = ccw - 2.0 * math.pi
    candidates = []
    for sweep in (ccw, cw):
        mid = center + radius * cmath.exp(1j * (angle_in + 0.5 * sweep))
        if side == "upper":
            candidates.append((mid.imag, mid.real, sweep))
        else:
            candidates.append((-mid.imag, -mid.real, sweep))
    _, _, sweep = max(candidates)
    count = max(8, math.ceil(abs(sweep) / (2.0 * math.pi) * samples_per_turn))
    arc = [center + radius * cmath.exp(1j * (angle_in + sweep * k / count))
           for k in range(count + 1)]
    arc[0] = entry
    arc[-1] = exit_
    return arc


def build_enclosing_loop(first: complex, second: complex,
                         radius: float,
                         samples_per_arc: int = 48) -> ContourPath:
    """Closed stadium around two points, the canonical pair contour.

    Two semicircular caps of the given radius joined by straight edges,
    traversed clockwise in the time plane: under the tangent map this
    orientation carries a loop around a linked pair of magnitude zeros
    anticlockwise around the map's zero, so the pair count is positive.
    """
    if radius <= 0:
        raise ContourError("radius must be positive")
    axis = second - first
    if abs(axis) == 0:
        raise ContourError("stadium needs two distinct centers")
    unit = axis / abs(axis)
    points: list[complex] = []
    for k in range(samples_per_arc + 1):
        angle = -0.5 * math.pi + math.pi * k / samples_per_arc
        points.append(second + radius * unit * cmath.exp(1j * angle))
    for k in range(samples_per_arc + 1):
        angle = 0.5 * math.pi + math.pi * k / samples_per_arc
        points.append(first + radius * unit * cmath.exp(1j * angle))
    points.append(points[0])
    points.reverse()
    return ContourPath(points=tuple(points), closed=True)

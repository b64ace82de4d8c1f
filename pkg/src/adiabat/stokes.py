"""Stokes geometry of the leading effective potential.

Turning points are the complex zeros of the leading potential q0; from
each simple zero three level lines of Im W and three of Re W emanate,
where W(s) is the action integral of sqrt(q0) from the zero.  This module
locates the zeros with certified counts (argument principle on subdivided
rectangles, then Newton polishing), traces both line families with a
predictor-corrector walker that monitors the transverse drift, assembles
the result into a graph, and identifies the chain of zeros bounding the
principal strip around the real axis.

All geometry here uses the leading potential: its zeros and lines do not
depend on the slowness scale, so one graph serves every T.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field as dc_field

from .exprlang import EvalDomainError
from .potential import EffectivePotential, eval_q0, potential_derivative

__all__ = [
    "Box",
    "TurningPoint",
    "Terminus",
    "StokesLine",
    "NedChain",
    "StokesGraph",
    "StokesStructureError",
    "find_turning_points",
    "trace_stokes_line",
    "build_graph",
    "identify_ned_chain",
    "conjugation_defect",
    "graph_to_json",
    "graph_from_json",
]

#: A traced line terminates when within this distance of a pole or zero.
CAPTURE_RADIUS = 1e-6

#: Newton polishing tolerance for zero locations.
POLISH_TOLERANCE = 1e-12

#: Subdivision stops once rectangles are this small across.
SUBDIVISION_DIAMETER = 1e-3


class StokesStructureError(RuntimeError):
    """The zero set or line topology violates the expected structure."""


class _EdgeWalkError(RuntimeError):
    """An argument walk hit a feature; the caller should re-split."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in the complex plane."""

    xlo: float
    xhi: float
    ylo: float
    yhi: float

    def contains(self, z: complex, margin: float = 0.0) -> bool:
        return (self.xlo + margin <= z.real <= self.xhi - margin
                and self.ylo + margin <= z.imag <= self.yhi - margin)

    @property
    def diameter(self) -> float:
        return math.hypot(self.xhi - self.xlo, self.yhi - self.ylo)

    def exit_side(self, z: complex) -> str:
        gaps = {
            "left": z.real - self.xlo,
            "right": self.xhi - z.real,
            "bottom": z.imag - self.ylo,
            "top": self.yhi - z.imag,
        }
        return min(gaps, key=gaps.get)


@dataclass(frozen=True)
class TurningPoint:
    """A certified simple zero of the leading potential."""

    location: complex
    residual: float                 # |q0| at the polished location
    derivative: complex             # q0' there, never ~0 for a simple zero
    fan_stokes: tuple[float, float, float]
    fan_anti: tuple[float, float, float]


@dataclass(frozen=True)
class Terminus:
    """Where a traced line stopped.

    ``kind`` is ``"infinity"`` (left the tracing box; ``detail`` holds the
    exit side), ``"pole"`` (``index`` into the declared pole list), or
    ``"turning-point"`` (``index`` into the graph's zero list).
    """

    kind: str
    where: complex
    index: int | None = None
    detail: str | None = None


@dataclass(frozen=True)
class StokesLine:
    tp_index: int
    family: str                     # "stokes" (Im W = 0) or "anti" (Re W = 0)
    direction_index: int
    launch_angle: float
    points: tuple[complex, ...]
    terminus: Terminus
    arclength: float
    drift: float                    # worst |monitored W component| anywhere


@dataclass(frozen=True)
class NedChain:
    """The zeros bounding the principal strip, plus the mirror anchor.

    ``points`` are the upper boundary zeros ordered by increasing real
    part; ``anchor`` is the lower-half conjugate partner of the first.
    ``upper_lines`` and ``lower_lines`` index into the graph's line list:
    the Im W level lines forming the strip's upper boundary (left exit,
    connectors, right exit) and their mirror images through the anchor's
    conjugate chain.
    """

    anchor: complex
    points: tuple[complex, ...]
    upper_lines: tuple[int, ...] = ()
    lower_lines: tuple[int, ...] = ()


@dataclass(frozen=True)
class Sector:
    """One face of the arrangement cut by the Im W level lines.

    ``boundary`` lists oriented pieces as ``(kind, index, reversed)``
    with ``kind`` either ``"line"`` (index into the graph's lines) or
    ``"rim"`` (index into the graph's rim arcs).  ``poles`` are the
    declared singularities the face contains, ``probe`` is an interior
    point, ``area`` the enclosed area.
    """

    boundary: tuple[tuple[str, int, bool], ...]
    poles: tuple[complex, ...]
    probe: complex
    area: float


@dataclass
class StokesGraph:
    box: Box
    turning_points: tuple[TurningPoint, ...]
    lines: tuple[StokesLine, ...]
    poles: tuple[tuple[complex, int], ...] = ()
    chain: NedChain | None = None
    chain_error: str | None = None
    sectors: tuple[Sector, ...] = ()
    rim_arcs: tuple[tuple[complex, complex], ...] = ()


# --------------------------------------------------------------------------
# Zero finding

_DEFAULT_FIND_BOX = Box(-8.000000137, 8.000000173, -8.000000119, 8.000000151)


def find_turning_points(ep: EffectivePotential,
                        box: Box | None = None) -> tuple[TurningPoint, ...]:
    """Locate all zeros of the leading potential inside ``box``.

    Rectangles are subdivided with argument-principle counts (declared
    pole orders are added back, so rectangles containing known poles stay
    countable) until each holds a single zero and is smaller than
    :data:`SUBDIVISION_DIAMETER` across, then Newton polishing brings each
    zero to :data:`POLISH_TOLERANCE`.  A box whose edge runs into a zero
    or pole is nudged outward and retried.  A rectangle that still
    reports two or more zeros at the smallest size signals a degenerate
    (multiple) zero and raises :class:`StokesStructureError`, as does a
    negative count, which indicates an undeclared pole.
    """
    box = box or _DEFAULT_FIND_BOX
    scale = 1.0
    for probe in (0.0, 0.37 + 0.41j, -1.7 - 1.3j):
        try:
            scale = max(1.0, abs(eval_q0(ep, probe)))
        except (ArithmeticError, EvalDomainError):
            # The probe can land exactly on a singularity; any regular
            # point serves, the value only normalizes edge-walk guards.
            continue
        break
    top_count = None
    for attempt in range(8):
        try:
            top_count = _zero_count(ep, box, scale)
            break
        except _EdgeWalkError as exc:
            # A zero or pole sits on (or hugs) the boundary; growing the
            # box never loses roots, so nudge outward and retry.
            pad = (0.37 + 0.11 * attempt) * 1e-3 * (1.0 + box.diameter)
            box = Box(box.xlo - pad, box.xhi + pad,
                      box.ylo - pad, box.yhi + pad)
            last_exc = exc
    if top_count is None:
        raise StokesStructureError(
            f"feature on the search box boundary: {last_exc}") from last_exc
    pending = [(box, top_count)]
    found: list[complex] = []
    while pending:
        rect, count = pending.pop()
        if count < 0:
            raise StokesStructureError(
                f"negative zero count in {rect}; undeclared pole suspected")
        if count == 0:
            continue
        if rect.diameter <= SUBDIVISION_DIAMETER:
            if count > 1:
                raise StokesStructureError(
                    f"{count} zeros within diameter {rect.diameter:.1e}; "
                    "degenerate zero (multiplicity > 1) is not supported")
            center = complex((rect.xlo + rect.xhi) / 2,
                             (rect.ylo + rect.yhi) / 2)
            found.append(_polish(ep, center, rect.diameter))
            continue
        pending.extend(_split_and_count(ep, rect, scale))
    unique: list[complex] = []
    for z in sorted(found, key=lambda z: (z.real, z.imag)):
        if not any(abs(z - u) < 1e-9 for u in unique):
            unique.append(z)
    if len(unique) != top_count:
        raise StokesStructureError(
            f"subdivision lost track of zeros: the box reports {top_count} "
            f"but {len(unique)} were isolated")
    points = []
    for z in unique:
        residual = abs(eval_q0(ep, z))
        if residual > 1e-12 * scale:
            raise StokesStructureError(
                f"zero at {z} failed to certify: |q0| = {residual:.2e}")
        deriv = potential_derivative(_as_q0(ep), z)
        points.append(TurningPoint(
            location=z, residual=residual, derivative=deriv,
            fan_stokes=_fan(deriv, 0.0), fan_anti=_fan(deriv, math.pi / 2)))
    return tuple(points)


def _as_q0(ep: EffectivePotential) -> EffectivePotential:
    # Geometry is always taken from the leading potential regardless of
    # the potential's configured mode.
    if ep.mode == "adiabatic_q0":
        return ep
    clone = EffectivePotential(profile=ep.profile, mode="adiabatic_q0",
                               poles=ep.poles, langer=ep.langer,
                               _evals=ep._evals)
    return clone


def _fan(derivative: complex, phase: float) -> tuple[float, float, float]:
    beta = cmath.phase(derivative)
    angles = []
    for m in range(3):
        theta = (2.0 / 3.0) * (m * math.pi - phase - beta / 2.0)
        theta = math.remainder(theta, 2 * math.pi)
        if theta <= -math.pi:
            theta += 2 * math.pi
        angles.append(theta)
    return tuple(sorted(angles))


def _split_and_count(ep, rect: Box, scale: float) -> list[tuple[Box, int]]:
    # Try split positions until the dividing line keeps clear of declared
    # poles and the argument walks along the new edges succeed; a split
    # through (or too close to) a feature is rejected and retried elsewhere.
    wide = (rect.xhi - rect.xlo) >= (rect.yhi - rect.ylo)
    side = (rect.xhi - rect.xlo) if wide else (rect.yhi - rect.ylo)
    for fraction in (0.5, 0.53, 0.47, 0.51, 0.49, 0.56, 0.44):
        if wide:
            mid = rect.xlo + fraction * (rect.xhi - rect.xlo)
            if _near_pole(ep, mid, side, axis="x"):
                continue
            halves = [Box(rect.xlo, mid, rect.ylo, rect.yhi),
                      Box(mid, rect.xhi, rect.ylo, rect.yhi)]
        else:
            mid = rect.ylo + fraction * (rect.yhi - rect.ylo)
            if _near_pole(ep, mid, side, axis="y"):
                continue
            halves = [Box(rect.xlo, rect.xhi, rect.ylo, mid),
                      Box(rect.xlo, rect.xhi, mid, rect.yhi)]
        try:
            return [(half, _zero_count(ep, half, scale)) for half in halves]
        except _EdgeWalkError:
            continue
    raise StokesStructureError(f"could not find a clean split of {rect}")


def _near_pole(ep, coordinate: float, side: float, axis: str) -> bool:
    for pole, _ in ep.poles:
        value = pole.real if axis == "x" else pole.imag
        if abs(value - coordinate) < 0.02 * side:
            return True
    return False


def _zero_count(ep, rect: Box, scale: float) -> int:
    corners = [complex(rect.xlo, rect.ylo), complex(rect.xhi, rect.ylo),
               complex(rect.xhi, rect.yhi), complex(rect.xlo, rect.yhi)]
    total = 0.0
    for a, b in zip(corners, corners[1:] + corners[:1]):
        total += _edge_arg_change(ep, a, b, scale)
    winding = total / (2 * math.pi)
    inside_pole_orders = sum(
        order for pole, order in ep.poles
        if rect.xlo < pole.real < rect.xhi and rect.ylo < pole.imag < rect.yhi)
    count = winding + inside_pole_orders
    nearest = round(count)
    if abs(count - nearest) > 0.05:
        raise StokesStructureError(
            f"winding {winding:.4f} over {rect} failed to certify a count")
    return nearest


def _edge_arg_change(ep, a: complex, b: complex, scale: float) -> float:
    # Walk the edge with steps bounded by the local logarithmic derivative
    # of q0, so the argument never advances more than a fraction of a turn
    # between samples; this stays exact near poles and zeros alike, where
    # fixed sampling would alias whole turns away.
    import cmath as _cm
    q0_fn = ep._fn("q0")
    q0p_fn = ep._fn("q0_p")
    seg = b - a
    length = abs(seg)
    unit = seg / length
    def rate_at(z: complex) -> float:
        q = q0_fn(z, _cm)
        if abs(q) < 1e-13 * scale:
            raise _EdgeWalkError(f"zero on subdivision edge near {z}")
        r = abs(q0p_fn(z, _cm) / q)
        return r if math.isfinite(r) else math.inf

    travelled = 0.0
    z_prev = a
    q_prev = q0_fn(a, _cm)
    if abs(q_prev) < 1e-13 * scale:
        raise _EdgeWalkError(f"zero on subdivision edge near {a}")
    total = 0.0
    stall = length * 2.0 ** -50
    budget = 400_000
    while travelled < length:
        rate = rate_at(z_prev)
        step = min(length - travelled, 0.35 / rate if rate > 0 else length)
        while True:
            budget -= 1
            if budget <= 0:
                raise _EdgeWalkError(
                    f"argument walk budget exhausted near {z_prev}")
            if step < stall:
                raise _EdgeWalkError(f"argument walk stalled near {z_prev}")
            # The start-point rate alone cannot bound the swing across a
            # long step, so probe the interior before trusting it; an
            # unprobed leap can silently alias away whole turns.
            swing = max(rate_at(z_prev + unit * step * t)
                        for t in (0.25, 0.5, 0.75, 1.0)) * step
            if swing > 0.7:
                step /= 2
                continue
            z = z_prev + unit * step
            q = q0_fn(z, _cm)
            dphi = _cm.phase(q / q_prev)
            if abs(dphi) <= 1.0:
                break
            step /= 2
        total += dphi
        travelled += step
        z_prev, q_prev = z, q
    return total


def _polish(ep, z: complex, trust: float) -> complex:
    start = z
    for _ in range(60):
        step = eval_q0(ep, z) / potential_derivative(_as_q0(ep), z)
        z -= step
        if abs(z - start) > 4 * trust + 1e-3:
            raise StokesStructureError(
                f"Newton polish escaped its rectangle near {start}")
        if abs(step) <= POLISH_TOLERANCE * (1 + abs(z)):
            return z
    raise StokesStructureError(f"Newton polish did not converge near {start}")


# --------------------------------------------------------------------------
# Line tracing

def trace_stokes_line(ep: EffectivePotential, tp: TurningPoint,
                      direction_index: int, box: Box,
                      all_tps: tuple[TurningPoint, ...] = (),
                      family: str = "stokes",
                      max_steps: int = 40000,
                      tolerance: float = 1e-6) -> StokesLine:
    """Trace one level line from ``tp`` in the given fan direction.

    Walks dz/dl = exp(-i arg(g sqrt(q0))) with g = 1 for the Im W family
    and g = i for the Re W family, which keeps the monitored component of
    dW = sqrt(q0) dz identically zero along the exact line.  Each step is
    a midpoint predictor followed by a transverse Newton correction.
    ``tolerance`` bounds the chordal sag of every polyline segment, so a
    re-trace at half the tolerance stays within it of this one; the action
    increment is accumulated by Gauss panels refined on a separate, fixed
    budget that keeps the monitored drift below 1e-6 regardless of how
    coarse the geometry is allowed to be.  Terminates on leaving ``box``,
    or within :data:`CAPTURE_RADIUS` of a declared pole or another zero.
    """
    if family not in ("stokes", "anti"):
        raise ValueError("family must be 'stokes' or 'anti'")
    gauge = 1.0 if family == "stokes" else 1j
    fan = tp.fan_stokes if family == "stokes" else tp.fan_anti
    theta = fan[direction_index]
    z0 = tp.location
    obstacles = [(p, k) for p, k in ep.poles]
    others = [(i, other.location) for i, other in enumerate(all_tps)
              if abs(other.location - z0) > 1e-9]

    # First segment: leave the zero along the fan ray, where sqrt(q0)
    # vanishes like sqrt of the distance; substitute l = v^2 for the
    # action so the integrand is smooth.
    h0 = 1e-3 * max(1.0, abs(z0))
    direction = cmath.exp(1j * theta)
    sqrt_anchor = cmath.sqrt(tp.derivative * h0 * direction)
    # Pick the square-root sheet that makes the monitored component of
    # dW vanish with positive flow along the launch direction.
    if (gauge * sqrt_anchor * direction).real < 0:
        sqrt_anchor = -sqrt_anchor
    w_acc = 0j
    nodes, weights = _GAUSS7
    root_prev = None
    for x, wgt in zip(nodes, weights):
        v = (x + 1) / 2 * math.sqrt(h0)
        point = z0 + v * v * direction
        root = _tracked_sqrt(ep, point, root_prev
                             if root_prev is not None else sqrt_anchor * v / math.sqrt(h0) if v else None)
        root_prev = root
        w_acc += wgt * root * 2 * v * direction * math.sqrt(h0) / 2
    z = z0 + h0 * direction
    root = _tracked_sqrt(ep, z, sqrt_anchor)

    points = [z0, z]
    arclength = h0
    worst_drift = 0.0
    h = 4 * h0
    terminus: Terminus | None = None
    prev_tangent = direction
    stalled = 0

    for _ in range(max_steps):
        # Termination checks against obstacles and the box.
        dist_pole, pole_idx = _nearest(z, [p for p, _ in obstacles])
        if dist_pole <= CAPTURE_RADIUS:
            terminus = Terminus("pole", obstacles[pole_idx][0], pole_idx)
            break
        dist_tp, tp_idx = _nearest(z, [loc for _, loc in others])
        if dist_tp <= 1e-3 * max(1.0, abs(z)):
            # A level line through two zeros is structurally unstable, so
            # discrete samples straddle the second zero instead of landing
            # on it; decide capture from the action residual, which maps
            # back to a transverse offset of the continuum line.
            target = others[tp_idx][1]
            chord = target - z
            w_ch = _chord_action_to_zero(ep, z, target, root)
            offset = (abs((gauge * (w_acc + w_ch)).imag)
                      / max(abs(root), 1e-300))
            if dist_tp <= CAPTURE_RADIUS or offset <= CAPTURE_RADIUS:
                points.append(target)
                arclength += abs(chord)
                w_acc += w_ch
                terminus = Terminus("turning-point", target,
                                    others[tp_idx][0])
                break
        if not box.contains(z):
            # Clip the overhang so the polyline ends exactly on the rim;
            # the overshoot length depends on the step size, which would
            # otherwise leak the tolerance into the terminal geometry.
            side = box.exit_side(z)
            z_rim = _rim_exit(box, points[-2], z) if len(points) > 1 else z
            arclength -= abs(z - z_rim)
            points[-1] = z_rim
            terminus = Terminus("infinity", z_rim, detail=side)
            break

        step = min(h, 0.4 * dist_pole if dist_pole < 0.1 else h,
                   0.4 * dist_tp if dist_tp < 0.1 else h)
        step = max(step, 2e-7)
        # The action budget is independent of the geometry knob so the
        # drift invariant survives a deliberately coarse re-trace.
        action_scale = max(1e-13, min(0.2 * tolerance, 1e-8))

        while True:
            tangent = _unit_tangent(root, gauge, prev_tangent)
            mid_root = _tracked_sqrt(ep, z + 0.5 * step * tangent, root)
            mid_tangent = _unit_tangent(mid_root, gauge, tangent)
            z_next = z + step * mid_tangent
            seg = z_next - z
            whole, _ = _segment_action(ep, z, seg, root)
            first, r_half = _segment_action(ep, z, seg / 2, root)
            second, r_end = _segment_action(ep, z + seg / 2, seg / 2, r_half)
            w_inc = first + second
            end_tangent = _unit_tangent(r_end, gauge, mid_tangent)
            # Tangent swing over the step bounds the chordal sag of the
            # segment (circular-arc estimate step * swing / 8); halve
            # until both the sag and the panel disagreement are in budget.
            # Near poles the integrand steepens without bound and fixed
            # panels alias badly, so the action check bites first there.
            swing = (abs(cmath.phase(mid_tangent / tangent))
                     + abs(cmath.phase(end_tangent / mid_tangent)))
            sag = step * swing / 8.0
            if step <= 2e-7:
                # Floor-step acceptance is expected while crawling into a
                # declared pole (the capture clamp shrinks the step), but
                # anywhere else it means q0 blows up where nothing was
                # declared, and the walk would never terminate.
                if dist_pole <= 0.1:
                    stalled = 0
                else:
                    stalled += 1
                    if stalled >= 50:
                        raise StokesStructureError(
                            "step collapse near an unresolved singularity "
                            f"at {z:.6g}; declare the pole or shrink the box")
                break
            if (sag <= tolerance
                    and abs(w_inc - whole) <= max(1e-13, action_scale * step)):
                stalled = 0
                break
            step /= 2
        root_next = r_end
        w_acc += w_inc

        # Transverse correction: cancel the monitored drift exactly.
        drift = (gauge * w_acc).imag
        correction = -drift / abs(root_next)
        z_corr = z_next + 1j * mid_tangent * correction
        root_corr = _tracked_sqrt(ep, z_corr, root_next)
        w_acc += root_corr * (z_corr - z_next)

        arclength += abs(z_next - z) + abs(correction)
        worst_drift = max(worst_drift, abs((gauge * w_acc).imag))
        z, root = z_corr, root_corr
        points.append(z)

        prev_tangent = mid_tangent
        h = min(0.08 * max(1.0, abs(z)),
                max(2e-5, step * min(2.0, 0.8 * math.sqrt(
                    tolerance / max(sag, 1e-300)))))
    if terminus is None:
        raise StokesStructureError(
            f"line from {z0} direction {theta:.3f} did not terminate")
    return StokesLine(
        tp_index=-1, family=family, direction_index=direction_index,
        launch_angle=theta, points=tuple(points), terminus=terminus,
        arclength=arclength, drift=worst_drift)


_GAUSS3 = ((-math.sqrt(3.0 / 5.0), 0.0, math.sqrt(3.0 / 5.0)),
           (5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0))

_G7_NODES = (-0.9491079123427585, -0.7415311855993945, -0.4058451513773972,
             0.0, 0.4058451513773972, 0.7415311855993945, 0.9491079123427585)
_G7_WEIGHTS = (0.1294849661688697, 0.2797053914892766, 0.3818300505051189,
               0.4179591836734694, 0.3818300505051189, 0.2797053914892766,
               0.1294849661688697)
_GAUSS7 = (_G7_NODES, _G7_WEIGHTS)


def _tracked_sqrt(ep, z: complex, hint: complex | None) -> complex:
    root = cmath.sqrt(eval_q0(ep, z))
    if hint is not None and abs(root - hint) > abs(root + hint):
        return -root
    return root


def _segment_action(ep, start: complex, seg: complex,
                    hint: complex) -> tuple[complex, complex]:
    # Three-point Gauss increment of the tracked sqrt along a chord,
    # returning the tracked root at the chord's far end as well.
    w = 0j
    r = hint
    for x, wgt in zip(*_GAUSS3):
        r = _tracked_sqrt(ep, start + (x + 1) / 2 * seg, r)
        w += wgt * r * seg / 2
    return w, _tracked_sqrt(ep, start + seg, r)


def _chord_action_to_zero(ep, z: complex, target: complex,
                          hint: complex) -> complex:
    # Action along the straight chord into a zero of q0, where the sqrt
    # endpoint singularity defeats plain panels; substituting a squared
    # parameter from the zero's end makes the integrand smooth again.
    chord = target - z
    w = 0j
    r = hint
    for x, wgt in zip(reversed(_GAUSS7[0]), reversed(_GAUSS7[1])):
        v = (x + 1) / 2
        r = _tracked_sqrt(ep, target - v * v * chord, r)
        w += wgt * r * v * chord
    return w


def _unit_tangent(root: complex, gauge: complex, prev: complex) -> complex:
    if abs(root) == 0:
        return prev
    tangent = abs(root) / (gauge * root)
    tangent /= abs(tangent)
    if (tangent / prev).real < 0:
        tangent = -tangent
    return tangent


def _nearest(z: complex, locations: list[complex]) -> tuple[float, int]:
    best, best_idx = float("inf"), -1
    for idx, loc in enumerate(locations):
        d = abs(z - loc)
        if d < best:
            best, best_idx = d, idx
    return best, best_idx


# --------------------------------------------------------------------------
# Graph assembly

def build_graph(ep: EffectivePotential, box: Box | None = None,
                include_anti: bool = True) -> StokesGraph:
    """Locate zeros and trace every line of both families from each.

    Upper and lower half-plane zeros are traced independently (the mirror
    symmetry of the result is a checkable property, not an input).  The
    default tracing box spans four times one plus the farthest zero, per
    side.  The principal-strip chain is identified and stored; a chain
    identification failure is recorded on the graph rather than raised,
    so a zero-free field yields an empty graph whose only sector is the
    whole box.  Faces of the Im W arrangement land in ``sectors``.
    """
    tps = find_turning_points(ep, box)
    if box is None:
        reach = 4.0 * (1.0 + max((abs(tp.location) for tp in tps),
                                 default=0.0))
        box = Box(-reach, reach, -reach, reach)
        inner = _DEFAULT_FIND_BOX
        if (box.xlo < inner.xlo or box.xhi > inner.xhi
                or box.ylo < inner.ylo or box.yhi > inner.yhi):
            tps = find_turning_points(ep, box)
    lines = []
    families = ("stokes", "anti") if include_anti else ("stokes",)
    for index, tp in enumerate(tps):
        for family in families:
            for direction in range(3):
                line = trace_stokes_line(ep, tp, direction, box,
                                         all_tps=tps, family=family)
                lines.append(StokesLine(
                    tp_index=index, family=line.family,
                    direction_index=line.direction_index,
                    launch_angle=line.launch_angle, points=line.points,
                    terminus=line.terminus, arclength=line.arclength,
                    drift=line.drift))
    graph = StokesGraph(box=box, turning_points=tuple(tps),
                        lines=tuple(lines), poles=tuple(ep.poles))
    try:
        graph.chain = identify_ned_chain(graph)
    except StokesStructureError as exc:
        graph.chain_error = str(exc)
    graph.sectors, graph.rim_arcs = enumerate_sectors(graph)
    return graph


def identify_ned_chain(graph: StokesGraph) -> NedChain:
    """Find the zeros whose connected lines bound the principal strip.

    Candidate chains are connected groups of upper-half zeros linked by
    traced lines of the Im W family, where the group as a whole has one
    line escaping through the left edge of the box and one through the
    right.  The lowest such group is the strip boundary; its members are
    returned ordered by real part.  Raises
    :class:`StokesStructureError` when no candidate exists, when the
    group is not a simple left-to-right path, or when another zero
    intrudes below the chain.
    """
    upper = {i: tp for i, tp in enumerate(graph.turning_points)
             if tp.location.imag > 0}
    if not upper:
        raise StokesStructureError("no upper half-plane zeros")
    adjacency: dict[int, set[int]] = {i: set() for i in upper}
    exits: dict[int, set[str]] = {i: set() for i in upper}
    for line in graph.lines:
        if line.family != "stokes" or line.tp_index not in upper:
            continue
        if line.terminus.kind == "turning-point" and line.terminus.index in upper:
            adjacency[line.tp_index].add(line.terminus.index)
            adjacency[line.terminus.index].add(line.tp_index)
        elif line.terminus.kind == "infinity":
            exits[line.tp_index].add(line.terminus.detail)

    candidates = []
    seen: set[int] = set()
    for start in upper:
        if start in seen:
            continue
        component = _component(start, adjacency)
        seen |= component
        sides = set().union(*(exits[i] for i in component))
        if "left" in sides and "right" in sides:
            candidates.append(component)
    if not candidates:
        raise StokesStructureError(
            "no connected group of upper zeros spans the box left to right")
    lowest = min(candidates,
                 key=lambda comp: min(graph.turning_points[i].location.imag
                                      for i in comp))
    members = sorted(lowest, key=lambda i: (
        graph.turning_points[i].location.real,
        graph.turning_points[i].location.imag))
    locations = [graph.turning_points[i].location for i in members]
    for left, right in zip(members, members[1:]):
        if right not in adjacency[left]:
            raise StokesStructureError(
                "strip boundary zeros are not consecutively connected")
    floor = min(z.imag for z in locations)
    intruders = [tp.location for tp in graph.turning_points
                 if abs(tp.location.imag) < floor - 1e-9]
    if intruders:
        raise StokesStructureError(
            f"zeros inside the principal strip: {intruders}")
    first = locations[0]
    anchor = None
    for tp in graph.turning_points:
        if abs(tp.location - first.conjugate()) < 1e-9:
            anchor = tp.location
            break
    if anchor is None:
        raise StokesStructureError(
            f"no mirror partner found for the first chain zero {first}")

    def strip_lines(ids: list[int]) -> tuple[int, ...]:
        pieces: list[int] = []
        for side, anchor_id in (("left", ids[0]), ("right", ids[-1])):
            for idx, line in enumerate(graph.lines):
                if (line.family == "stokes" and line.tp_index == anchor_id
                        and line.terminus.kind == "infinity"
                        and line.terminus.detail == side):
                    pieces.append(idx)
                    break
        for a, b in zip(ids, ids[1:]):
            # Neighboring zeros can be joined by more than one line (a
            # lens); the strip boundary is the arc nearest the real axis.
            # Each arc is traced once from either end, so orient the
            # chain by keeping the copies launched from the left member.
            linking = [
                idx for idx, line in enumerate(graph.lines)
                if (line.family == "stokes"
                    and line.terminus.kind == "turning-point"
                    and {line.tp_index, line.terminus.index} == {a, b})]
            left = min((a, b), key=lambda i: (
                graph.turning_points[i].location.real,
                graph.turning_points[i].location.imag))
            oriented = [idx for idx in linking
                        if graph.lines[idx].tp_index == left]
            if oriented:
                linking = oriented
            if linking:
                def height(idx: int) -> float:
                    pts = graph.lines[idx].points
                    return sum(abs(p.imag) for p in pts) / len(pts)
                pieces.insert(-1, min(linking, key=height))
        return tuple(pieces)

    mirror: list[int] = []
    for i in members:
        loc = graph.turning_points[i].location
        for j, tp in enumerate(graph.turning_points):
            if abs(tp.location - loc.conjugate()) < 1e-9:
                mirror.append(j)
                break
    lower = strip_lines(mirror) if len(mirror) == len(members) else ()
    return NedChain(anchor=anchor, points=tuple(locations),
                    upper_lines=strip_lines(members), lower_lines=lower)


def _component(start: int, adjacency: dict[int, set[int]]) -> set[int]:
    todo, seen = [start], {start}
    while todo:
        node = todo.pop()
        for neighbor in adjacency[node]:
            if neighbor not in seen:
                seen.add(neighbor)
                todo.append(neighbor)
    return seen


# --------------------------------------------------------------------------
# Sector enumeration

def enumerate_sectors(graph: StokesGraph) -> tuple[tuple[Sector, ...],
                                                   tuple[tuple[complex,
                                                               complex], ...]]:
    """Cut the box into faces along the Im W level lines.

    Only the Im W family separates regions of dominant/subdominant
    behaviour, so the arrangement uses those lines plus the box rim.
    Both traces of a doubly-walked connector collapse to one edge.  Faces
    come back as :class:`Sector` values with their contained declared
    singularities; the rim arcs used are returned alongside for
    serialization and drawing.
    """
    box = graph.box
    span = 1.0 + box.diameter

    raw: list[tuple[int, list[complex]]] = []
    for idx, line in enumerate(graph.lines):
        if line.family != "stokes":
            continue
        pts = list(line.points)
        if line.terminus.kind == "pole":
            if abs(pts[-1] - line.terminus.where) > 0:
                pts.append(line.terminus.where)
        elif line.terminus.kind == "infinity":
            pts[-1] = _rim_exit(box, pts[-2], pts[-1])
        raw.append((idx, pts))

    deduped: list[tuple[int, list[complex]]] = []
    for idx, pts in raw:
        twin = False
        for jdx, qts in deduped:
            if (abs(pts[0] - qts[-1]) < 1e-7 * span
                    and abs(pts[-1] - qts[0]) < 1e-7 * span
                    and _lines_coincide(pts, qts, span)):
                twin = True
                break
        if not twin:
            deduped.append((idx, pts))

    def node_key(z: complex) -> tuple[float, float]:
        return (round(z.real, 9), round(z.imag, 9))

    canonical: dict[tuple[float, float], complex] = {}

    def node_of(z: complex) -> tuple[float, float]:
        k = node_key(z)
        canonical.setdefault(k, z)
        return k

    # Edge records: [node_a, node_b, polyline, ("line"|"rim", ref index)]
    records: list[tuple[tuple[float, float], tuple[float, float],
                        list[complex], tuple[str, int]]] = []
    for idx, pts in deduped:
        records.append((node_of(pts[0]), node_of(pts[-1]), pts,
                        ("line", idx)))

    for corner in (complex(box.xlo, box.ylo), complex(box.xhi, box.ylo),
                   complex(box.xhi, box.yhi), complex(box.xlo, box.yhi)):
        node_of(corner)
    rim_keys = sorted(
        (k for k, z in canonical.items() if _on_rim(box, z)),
        key=lambda k: _perimeter_t(box, canonical[k]))
    rim_arcs: list[tuple[complex, complex]] = []
    for ka, kb in zip(rim_keys, rim_keys[1:] + rim_keys[:1]):
        a, b = canonical[ka], canonical[kb]
        rim_arcs.append((a, b))
        records.append((ka, kb, [a, b], ("rim", len(rim_arcs) - 1)))

    departures: dict[tuple[float, float],
                     list[tuple[float, tuple[int, int]]]] = {}
    for i, (ka, kb, pts, _ref) in enumerate(records):
        departures.setdefault(ka, []).append(
            (cmath.phase(pts[1] - pts[0]), (i, 1)))
        departures.setdefault(kb, []).append(
            (cmath.phase(pts[-2] - pts[-1]), (i, -1)))
    for lst in departures.values():
        lst.sort()

    def next_half(half: tuple[int, int]) -> tuple[int, int]:
        i, d = half
        ka, kb, _pts, _ref = records[i]
        head = kb if d == 1 else ka
        lst = departures[head]
        pos = next(j for j, (_ang, hh) in enumerate(lst) if hh == (i, -d))
        return lst[(pos - 1) % len(lst)][1]

    visited: set[tuple[int, int]] = set()
    sectors: list[Sector] = []
    pole_points = [p for p, _order in graph.poles]
    for i in range(len(records)):
        for d in (1, -1):
            start = (i, d)
            if start in visited:
                continue
            cycle: list[tuple[int, int]] = []
            cur = start
            while cur not in visited:
                visited.add(cur)
                cycle.append(cur)
                cur = next_half(cur)
            poly: list[complex] = []
            boundary: list[tuple[str, int, bool]] = []
            for j, dd in cycle:
                pts = records[j][2]
                ordered = pts if dd == 1 else pts[::-1]
                poly.extend(ordered[:-1])
                kind, ref = records[j][3]
                boundary.append((kind, ref, dd == -1))
            area = _shoelace(poly)
            if area <= 1e-12 * span * span:
                continue
            inside = tuple(p for p in pole_points if _winds(poly, p))
            sectors.append(Sector(
                boundary=tuple(boundary), poles=inside,
                probe=_face_probe(poly, span), area=area))
    sectors.sort(key=lambda s: (round(s.area, 9), s.probe.real,
                                s.probe.imag))
    return tuple(sectors), tuple(rim_arcs)


def _rim_exit(box: Box, inner: complex, outer: complex) -> complex:
    # First crossing of the rim along the segment; the exiting coordinate
    # is pinned exactly to the rim so node keys match the arcs.
    seg = outer - inner
    best_t, best = 2.0, outer
    for bound, vertical in ((box.xlo, True), (box.xhi, True),
                            (box.ylo, False), (box.yhi, False)):
        num = (bound - inner.real) if vertical else (bound - inner.imag)
        den = seg.real if vertical else seg.imag
        if den == 0:
            continue
        t = num / den
        if 0.0 <= t < best_t:
            point = inner + t * seg
            point = (complex(bound, min(max(point.imag, box.ylo), box.yhi))
                     if vertical else
                     complex(min(max(point.real, box.xlo), box.xhi), bound))
            best_t, best = t, point
    return best


def _lines_coincide(a: list[complex], b: list[complex], span: float) -> bool:
    ra = _resample(a, 33)
    rb = _resample(b, 33)[::-1]
    return max(abs(p - q) for p, q in zip(ra, rb)) < 1e-4 * span


def _on_rim(box: Box, z: complex) -> bool:
    tol = 1e-9 * (1.0 + box.diameter)
    return (abs(z.real - box.xlo) < tol or abs(z.real - box.xhi) < tol
            or abs(z.imag - box.ylo) < tol or abs(z.imag - box.yhi) < tol)


def _perimeter_t(box: Box, z: complex) -> float:
    w, h = box.xhi - box.xlo, box.yhi - box.ylo
    tol = 1e-9 * (1.0 + box.diameter)
    if abs(z.imag - box.ylo) < tol:
        return z.real - box.xlo
    if abs(z.real - box.xhi) < tol:
        return w + (z.imag - box.ylo)
    if abs(z.imag - box.yhi) < tol:
        return w + h + (box.xhi - z.real)
    return 2 * w + h + (box.yhi - z.imag)


def _shoelace(poly: list[complex]) -> float:
    total = 0.0
    for a, b in zip(poly, poly[1:] + poly[:1]):
        total += a.real * b.imag - b.real * a.imag
    return total / 2.0


def _winds(poly: list[complex], p: complex) -> bool:
    total = 0.0
    prev = poly[-1] - p
    for vertex in poly:
        cur = vertex - p
        if abs(cur) == 0 or abs(prev) == 0:
            return False
        total += cmath.phase(cur / prev)
        prev = cur
    return abs(total) > math.pi


def _face_probe(poly: list[complex], span: float) -> complex:
    best_len, best_at = -1.0, 0
    for j, (a, b) in enumerate(zip(poly, poly[1:] + poly[:1])):
        if abs(b - a) > best_len:
            best_len, best_at = abs(b - a), j
    a = poly[best_at]
    b = poly[(best_at + 1) % len(poly)]
    mid = (a + b) / 2
    normal = 1j * (b - a) / abs(b - a)
    for eps in (1e-6, 1e-4, 1e-2, 0.05):
        candidate = mid + eps * span * normal
        if _winds(poly, candidate):
            return candidate
    return sum(poly) / len(poly)


def conjugation_defect(graph: StokesGraph, samples: int = 200) -> float:
    """Worst mismatch between lower-half lines and mirrored upper lines.

    Every line of the Im W family launched from an upper zero is compared
    pointwise (after resampling both polylines to equal arclength
    fractions) with the independently traced line launched from the
    conjugate zero at the mirrored angle.  Returns the largest distance
    found; missing partners count as infinite.
    """
    by_tp: dict[int, list[StokesLine]] = {}
    for line in graph.lines:
        if line.family == "stokes":
            by_tp.setdefault(line.tp_index, []).append(line)
    worst = 0.0
    for index, tp in enumerate(graph.turning_points):
        if tp.location.imag <= 0:
            continue
        partner_idx = None
        for j, other in enumerate(graph.turning_points):
            if abs(other.location - tp.location.conjugate()) < 1e-9:
                partner_idx = j
                break
        if partner_idx is None:
            return float("inf")
        for line in by_tp.get(index, []):
            mirrored_angle = -line.launch_angle
            partner = None
            for candidate in by_tp.get(partner_idx, []):
                gap = math.remainder(candidate.launch_angle - mirrored_angle,
                                     2 * math.pi)
                if abs(gap) < 1e-3:
                    partner = candidate
                    break
            if partner is None:
                return float("inf")
            upper_pts = _resample([p.conjugate() for p in line.points], samples)
            lower_pts = _resample(list(partner.points), samples)
            worst = max(worst, max(abs(a - b)
                                   for a, b in zip(upper_pts, lower_pts)))
    return worst


def _resample(points: list[complex], count: int) -> list[complex]:
    lengths = [0.0]
    for a, b in zip(points, points[1:]):
        lengths.append(lengths[-1] + abs(b - a))
    total = lengths[-1]
    if total == 0:
        return [points[0]] * count
    out = []
    target_idx = 0
    for k in range(count):
        goal = total * k / (count - 1)
        while target_idx < len(points) - 2 and lengths[target_idx + 1] < goal:
            target_idx += 1
        span = lengths[target_idx + 1] - lengths[target_idx]
        frac = 0.0 if span == 0 else (goal - lengths[target_idx]) / span
        out.append(points[target_idx]
                   + frac * (points[target_idx + 1] - points[target_idx]))
    return out


# --------------------------------------------------------------------------
# Serialization

def graph_to_json(graph: StokesGraph) -> str:
    """Deterministic JSON form of a graph (stable ordering, full floats)."""
    def cpx(z: complex) -> list[float]:
        return [z.real, z.imag]

    data = {
        "box": [graph.box.xlo, graph.box.xhi, graph.box.ylo, graph.box.yhi],
        "turning_points": [
            {
                "location": cpx(tp.location),
                "residual": tp.residual,
                "derivative": cpx(tp.derivative),
                "fan_stokes": list(tp.fan_stokes),
                "fan_anti": list(tp.fan_anti),
            }
            for tp in graph.turning_points
        ],
        "lines": [
            {
                "tp_index": line.tp_index,
                "family": line.family,
                "direction_index": line.direction_index,
                "launch_angle": line.launch_angle,
                "points": [cpx(p) for p in line.points],
                "terminus": {
                    "kind": line.terminus.kind,
                    "where": cpx(line.terminus.where),
                    "index": line.terminus.index,
                    "detail": line.terminus.detail,
                },
                "arclength": line.arclength,
                "drift": line.drift,
            }
            for line in graph.lines
        ],
        "poles": [[cpx(p), order] for p, order in graph.poles],
        "chain": None if graph.chain is None else {
            "anchor": cpx(graph.chain.anchor),
            "points": [cpx(p) for p in graph.chain.points],
            "upper_lines": list(graph.chain.upper_lines),
            "lower_lines": list(graph.chain.lower_lines),
        },
        "chain_error": graph.chain_error,
        "sectors": [
            {
                "boundary": [[kind, ref, rev]
                             for kind, ref, rev in sector.boundary],
                "poles": [cpx(p) for p in sector.poles],
                "probe": cpx(sector.probe),
                "area": sector.area,
            }
            for sector in graph.sectors
        ],
        "rim_arcs": [[cpx(a), cpx(b)] for a, b in graph.rim_arcs],
    }
    return json.dumps(data, indent=2, sort_keys=True)


def graph_from_json(text: str) -> StokesGraph:
    """Inverse of :func:`graph_to_json`."""
    data = json.loads(text)

    def cpx(pair) -> complex:
        return complex(pair[0], pair[1])

    tps = tuple(
        TurningPoint(
            location=cpx(item["location"]), residual=item["residual"],
            derivative=cpx(item["derivative"]),
            fan_stokes=tuple(item["fan_stokes"]),
            fan_anti=tuple(item["fan_anti"]))
        for item in data["turning_points"])
    lines = tuple(
        StokesLine(
            tp_index=item["tp_index"], family=item["family"],
            direction_index=item["direction_index"],
            launch_angle=item["launch_angle"],
            points=tuple(cpx(p) for p in item["points"]),
            terminus=Terminus(
                kind=item["terminus"]["kind"],
                where=cpx(item["terminus"]["where"]),
                index=item["terminus"]["index"],
                detail=item["terminus"]["detail"]),
            arclength=item["arclength"], drift=item["drift"])
        for item in data["lines"])
    chain = None
    if data["chain"] is not None:
        chain = NedChain(
            anchor=cpx(data["chain"]["anchor"]),
            points=tuple(cpx(p) for p in data["chain"]["points"]),
            upper_lines=tuple(data["chain"]["upper_lines"]),
            lower_lines=tuple(data["chain"]["lower_lines"]))
    sectors = tuple(
        Sector(
            boundary=tuple((kind, ref, rev)
                           for kind, ref, rev in item["boundary"]),
            poles=tuple(cpx(p) for p in item["poles"]),
            probe=cpx(item["probe"]), area=item["area"])
        for item in data["sectors"])
    box = Box(*data["box"])
    return StokesGraph(
        box=box, turning_points=tps, lines=lines,
        poles=tuple((cpx(p), order) for p, order in data["poles"]),
        chain=chain, chain_error=data["chain_error"], sectors=sectors,
        rim_arcs=tuple((cpx(a), cpx(b)) for a, b in data["rim_arcs"]))

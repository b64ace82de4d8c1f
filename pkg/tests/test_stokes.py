import cmath
import math

import pytest

from adiabat.field import make_builtin_field, make_custom_field
from adiabat.potential import make_effective_potential
from adiabat.stokes import (
    Box,
    StokesStructureError,
    build_graph,
    conjugation_defect,
    find_turning_points,
    graph_from_json,
    graph_to_json,
    trace_stokes_line,
)

NIKITIN_UPPER = (-0.5 + 0.8660254037844386j,
                 0.5 + 0.8660254037844386j,
                 1.4142135623730951j)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@pytest.fixture(scope="module")
def nikitin_ep():
    return make_effective_potential(make_builtin_field("nikitin"))


@pytest.fixture(scope="module")
def nikitin_graph(nikitin_ep):
    return build_graph(nikitin_ep)


@pytest.fixture(scope="module")
def berman_graph():
    return build_graph(make_effective_potential(make_builtin_field("berman")))


@pytest.fixture(scope="module")
def odd_pulse_graph():
    profile = make_builtin_field("berman", {
        "f": "s/(1+s^2)", "poles": [(0, 1, 2), (0, -1, 2)]})
    return build_graph(make_effective_potential(profile))


def _closest(target, items):
    return min(items, key=lambda z: abs(z - target))


def _tp_at(graph, location):
    for index, tp in enumerate(graph.turning_points):
        if abs(tp.location - location) < 1e-8:
            return index, tp
    raise AssertionError(f"no turning point near {location}")


def _stokes_census(graph):
    census = {"infinity": 0, "pole": 0, "turning-point": 0}
    for line in graph.lines:
        if line.family == "stokes":
            census[line.terminus.kind] += 1
    return census


def _point_to_polyline(z, pts):
    best = math.inf
    for p, q in zip(pts, pts[1:]):
        seg = q - p
        norm = abs(seg) ** 2
        if norm == 0.0:
            best = min(best, abs(z - p))
            continue
        t = ((z - p).real * seg.real + (z - p).imag * seg.imag) / norm
        t = min(1.0, max(0.0, t))
        best = min(best, abs(z - (p + t * seg)))
    return best


def test_nikitin_turning_points_match_closed_form(nikitin_ep):
    found = find_turning_points(nikitin_ep, Box(-2.0, 2.0, 0.0, 2.0))
    assert len(found) == 3
    for exact in NIKITIN_UPPER:
        assert abs(_closest(exact, [tp.location for tp in found]) - exact) < 1e-10


def test_conjugate_box_yields_conjugate_zeros(nikitin_ep):
    found = find_turning_points(nikitin_ep, Box(-2.0, 2.0, -2.0, 0.0))
    assert len(found) == 3
    locations = [tp.location for tp in found]
    for exact in NIKITIN_UPPER:
        assert abs(_closest(exact.conjugate(), locations)
                   - exact.conjugate()) < 1e-10


def test_berman_turning_points_are_quartic_roots():
    ep = make_effective_potential(make_builtin_field("berman"))
    found = find_turning_points(ep, Box(-2.0, 2.0, -2.0, 2.0))
    assert len(found) == 4
    roots = [cmath.sqrt(-1 + 1j), -cmath.sqrt(-1 + 1j),
             cmath.sqrt(-1 - 1j), -cmath.sqrt(-1 - 1j)]
    locations = [tp.location for tp in found]
    for exact in roots:
        assert abs(_closest(exact, locations) - exact) < 1e-10


def test_fan_spacing_and_family_interleaving(nikitin_graph, berman_graph):
    third = 2.0 * math.pi / 3.0
    for graph in (nikitin_graph, berman_graph):
        for tp in graph.turning_points:
            for fan in (tp.fan_stokes, tp.fan_anti):
                angles = sorted(fan)
                assert angles[1] - angles[0] == pytest.approx(third, abs=1e-9)
                assert angles[2] - angles[1] == pytest.approx(third, abs=1e-9)
            merged = sorted(tp.fan_stokes + tp.fan_anti)
            gaps = [b - a for a, b in zip(merged, merged[1:])]
            for gap in gaps:
                assert gap == pytest.approx(third / 2.0, abs=1e-9)


def test_nikitin_fan_orientations_frozen(nikitin_graph):
    expected = {
        NIKITIN_UPPER[0]: {-60.0, 60.0, 180.0},
        NIKITIN_UPPER[1]: {-120.0, 0.0, 120.0},
        NIKITIN_UPPER[2]: {-90.0, 30.0, 150.0},
    }
    for location, degrees in expected.items():
        _, tp = _tp_at(nikitin_graph, location)
        got = {math.degrees(a) for a in tp.fan_stokes}
        for want in degrees:
            assert min(abs(g - want) for g in got) < 1e-7


def test_local_linear_potential_rays():
    # B^2 = s with mu = 2 makes the potential exactly s: the textbook
    # single-zero geometry whose level lines are straight rays.
    ep = make_effective_potential(
        make_custom_field("sqrt(s)", "0", "0", mu=2.0, poles=[]))
    box = Box(-3.0000001, 3.0000002, -3.0000001, 3.0000002)
    tps = find_turning_points(ep, box)
    assert len(tps) == 1
    tp = tps[0]
    assert abs(tp.location) < 1e-10
    assert {round(math.degrees(a), 6) for a in tp.fan_stokes} == {
        -120.0, 0.0, 120.0}
    assert {round(math.degrees(a), 6) for a in tp.fan_anti} == {
        -60.0, 60.0, 180.0}
    for family, angles in (("stokes", (0.0, 2.0 * math.pi / 3.0)),
                           ("anti", (math.pi / 3.0,))):
        fan = tp.fan_stokes if family == "stokes" else tp.fan_anti
        for angle in angles:
            direction = min(range(3), key=lambda k: abs(fan[k] - angle))
            line = trace_stokes_line(ep, tp, direction, box,
                                     all_tps=tps, family=family)
            turn = cmath.exp(-1j * angle)
            off_ray = max(abs((p * turn).imag) for p in line.points)
            assert off_ray < 1e-8
            assert line.terminus.kind == "infinity"


def test_degenerate_double_zero_rejected():
    ep = make_effective_potential(
        make_custom_field("s*s-1", "0", "0", mu=2.0, poles=[]))
    with pytest.raises(StokesStructureError, match="degenerate"):
        find_turning_points(ep, Box(-2.0000001, 2.0000002,
                                    -2.0000001, 2.0000002))


def test_undeclared_pole_rejected():
    ep = make_effective_potential(
        make_custom_field("0", "0", "1/s", mu=1.0, poles=[]))
    with pytest.raises(StokesStructureError, match="undeclared pole"):
        find_turning_points(ep, Box(-2.0000001, 2.0000002,
                                    -2.0000001, 2.0000002))


def test_box_edge_through_zero_recovers(nikitin_ep):
    # The right edge runs exactly through a zero; the finder must nudge
    # the box outward rather than fail or miscount.
    found = find_turning_points(nikitin_ep, Box(-2.0, 0.5, 0.0, 2.0))
    locations = [tp.location for tp in found]
    assert len(found) == 3
    for exact in NIKITIN_UPPER:
        assert abs(_closest(exact, locations) - exact) < 1e-10


def test_connector_traced_from_both_ends(nikitin_graph):
    left, _ = _tp_at(nikitin_graph, NIKITIN_UPPER[0])
    right, _ = _tp_at(nikitin_graph, NIKITIN_UPPER[1])
    seen = set()
    for line in nikitin_graph.lines:
        if (line.family == "stokes" and line.terminus.kind == "turning-point"
                and {line.tp_index, line.terminus.index} == {left, right}):
            seen.add(line.tp_index)
            target = nikitin_graph.turning_points[line.terminus.index]
            assert line.points[-1] == target.location
            assert line.points[0] == \
                nikitin_graph.turning_points[line.tp_index].location
    assert seen == {left, right}


def test_line_into_pole_terminates_there(nikitin_graph):
    index, tp = _tp_at(nikitin_graph, NIKITIN_UPPER[2])
    down = min(range(3), key=lambda k: abs(tp.fan_stokes[k] + math.pi / 2))
    for line in nikitin_graph.lines:
        if (line.tp_index == index and line.family == "stokes"
                and line.direction_index == down):
            assert line.terminus.kind == "pole"
            assert line.terminus.where == 1j
            assert abs(line.points[-1] - 1j) < 2e-6
            break
    else:
        raise AssertionError("downward line from the top zero not traced")


def test_infinity_lines_end_on_rim(nikitin_graph, odd_pulse_graph):
    bounds = {"left": ("real", "xlo"), "right": ("real", "xhi"),
              "bottom": ("imag", "ylo"), "top": ("imag", "yhi")}
    for graph in (nikitin_graph, odd_pulse_graph):
        box = graph.box
        for line in graph.lines:
            if line.terminus.kind != "infinity":
                continue
            part, attr = bounds[line.terminus.detail]
            coordinate = getattr(line.points[-1], part)
            assert coordinate == pytest.approx(getattr(box, attr), abs=1e-12)


def test_transverse_drift_within_budget(nikitin_graph, berman_graph,
                                        odd_pulse_graph):
    for graph in (nikitin_graph, berman_graph, odd_pulse_graph):
        for line in graph.lines:
            assert line.drift <= 1e-6


def test_retrace_at_finer_tolerance_agrees(nikitin_ep, nikitin_graph):
    index, tp = _tp_at(nikitin_graph, NIKITIN_UPPER[2])
    box = nikitin_graph.box
    tps = nikitin_graph.turning_points
    tolerance = 1e-4
    rightward = min(range(3), key=lambda k: abs(tp.fan_stokes[k] - math.pi / 6))
    coarse = trace_stokes_line(nikitin_ep, tp, rightward, box,
                               all_tps=tps, tolerance=tolerance)
    fine = trace_stokes_line(nikitin_ep, tp, rightward, box,
                             all_tps=tps, tolerance=tolerance / 2)
    worst = 0.0
    for z in coarse.points:
        worst = max(worst, _point_to_polyline(z, fine.points))
    for z in fine.points:
        worst = max(worst, _point_to_polyline(z, coarse.points))
    assert worst <= 10.0 * tolerance


def test_nikitin_graph_topology(nikitin_graph):
    graph = nikitin_graph
    assert len(graph.turning_points) == 6
    assert len(graph.lines) == 36
    assert _stokes_census(graph) == {
        "infinity": 8, "pole": 6, "turning-point": 4}
    assert graph.poles == ((0 + 1j, 3), (-0 - 1j, 3))
    assert len(graph.sectors) == 9
    # Both poles are nodes of the arrangement (three lines end on each),
    # so they bound sectors rather than sitting inside one.
    assert all(sector.poles == () for sector in graph.sectors)
    total = sum(sector.area for sector in graph.sectors)
    box_area = (graph.box.xhi - graph.box.xlo) * (graph.box.yhi - graph.box.ylo)
    assert total == pytest.approx(box_area, rel=1e-9)


def test_berman_graph_topology_lens(berman_graph):
    graph = berman_graph
    assert len(graph.turning_points) == 4
    assert _stokes_census(graph) == {
        "infinity": 4, "pole": 0, "turning-point": 8}
    assert len(graph.sectors) == 5
    lenses = [sec for sec in graph.sectors if sec.poles]
    assert {sec.poles for sec in lenses} == {(-1j,), (1j,)}
    for lens in lenses:
        # Each lens is enclosed by exactly the two arcs joining the pair.
        assert len(lens.boundary) == 2
        assert all(kind == "line" for kind, _, _ in lens.boundary)
        assert 0.1 < lens.area < 1.0
    total = sum(sector.area for sector in graph.sectors)
    box_area = (graph.box.xhi - graph.box.xlo) * (graph.box.yhi - graph.box.ylo)
    assert total == pytest.approx(box_area, rel=1e-9)


def test_odd_pulse_graph_topology(odd_pulse_graph):
    graph = odd_pulse_graph
    locations = [tp.location for tp in graph.turning_points]
    for exact in (GOLDEN * 1j, -GOLDEN * 1j,
                  1j / GOLDEN, -1j / GOLDEN):
        assert abs(_closest(exact, locations) - exact) < 1e-10
    assert _stokes_census(graph) == {
        "infinity": 8, "pole": 4, "turning-point": 0}
    assert len(graph.sectors) == 7
    total = sum(sector.area for sector in graph.sectors)
    box_area = (graph.box.xhi - graph.box.xlo) * (graph.box.yhi - graph.box.ylo)
    assert total == pytest.approx(box_area, rel=1e-9)


def test_zero_free_field_gives_whole_box_sector():
    ep = make_effective_potential(
        make_custom_field("0", "0", "1", mu=1.0, poles=[]))
    graph = build_graph(ep)
    assert graph.turning_points == ()
    assert graph.lines == ()
    assert graph.chain is None
    assert graph.chain_error is not None
    assert len(graph.sectors) == 1
    sector = graph.sectors[0]
    box_area = (graph.box.xhi - graph.box.xlo) * (graph.box.yhi - graph.box.ylo)
    assert sector.area == pytest.approx(box_area, rel=1e-12)
    assert graph.box.contains(sector.probe)


def test_chain_identification_and_strip_lines(nikitin_graph, berman_graph,
                                              odd_pulse_graph):
    expected = {
        id(nikitin_graph): (NIKITIN_UPPER[:2], 3),
        id(berman_graph): ((-cmath.sqrt(-1 - 1j), cmath.sqrt(-1 + 1j)), 3),
        id(odd_pulse_graph): ((GOLDEN * 1j,), 2),
    }
    for graph in (nikitin_graph, berman_graph, odd_pulse_graph):
        points, pieces = expected[id(graph)]
        chain = graph.chain
        assert chain is not None
        assert len(chain.points) == len(points)
        for got, want in zip(chain.points, points):
            assert abs(got - want) < 1e-9
        assert abs(chain.anchor - chain.points[0].conjugate()) < 1e-9
        for ids in (chain.upper_lines, chain.lower_lines):
            assert len(ids) == pieces
            first, last = graph.lines[ids[0]], graph.lines[ids[-1]]
            assert first.terminus.kind == "infinity"
            assert first.terminus.detail == "left"
            assert last.terminus.kind == "infinity"
            assert last.terminus.detail == "right"
            for middle in ids[1:-1]:
                assert graph.lines[middle].terminus.kind == "turning-point"
        # The two boundaries are mirror images: matching pieces connect
        # conjugate endpoints.
        for up, low in zip(chain.upper_lines, chain.lower_lines):
            up_start = graph.lines[up].points[0]
            low_start = graph.lines[low].points[0]
            assert abs(up_start - low_start.conjugate()) < 1e-9


def test_berman_strip_boundary_hugs_the_axis(berman_graph):
    # Two arcs join the upper pair; the strip boundary must be the one
    # nearer the real axis, above it for the upper chain and mirrored
    # below for the lower one.
    chain = berman_graph.chain
    up = berman_graph.lines[chain.upper_lines[1]]
    low = berman_graph.lines[chain.lower_lines[1]]
    assert up.terminus.kind == low.terminus.kind == "turning-point"
    up_mid = up.points[len(up.points) // 2]
    low_mid = low.points[len(low.points) // 2]
    assert 0.0 < up_mid.imag < 1.0
    assert -1.0 < low_mid.imag < 0.0


def test_conjugation_defect_small(nikitin_graph, berman_graph):
    assert conjugation_defect(nikitin_graph) <= 1e-6
    assert conjugation_defect(berman_graph) <= 1e-6


def test_json_roundtrip_stable(nikitin_graph, berman_graph):
    for graph in (nikitin_graph, berman_graph):
        text = graph_to_json(graph)
        rebuilt = graph_from_json(text)
        assert graph_to_json(rebuilt) == text
        assert rebuilt.turning_points == graph.turning_points
        assert rebuilt.lines == graph.lines
        assert rebuilt.poles == graph.poles
        assert rebuilt.sectors == graph.sectors
        assert rebuilt.rim_arcs == graph.rim_arcs
        assert rebuilt.chain == graph.chain
        assert rebuilt.chain_error == graph.chain_error

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import measurements14
from gridledger.decomposition import (AreaSolution, PartitionError, assemble_area_problem,
                                      assign_measurements, boundary_payload, build_partition,
                                      parse_partition, single_area, solve_area,
                                      stitch_global_state)
from gridledger.estimator import EstimationOptions, global_objective, solve_wls
from gridledger.powernet import (Measurement, MeasurementSet, PlanEntry, StateVector,
                                 default_plan, generate_measurements)

TWO_TRUTH = StateVector([1.01, 0.97], [0.0, -0.06])


def two_bus_measurements(net, sigma=0.0, seed=0):
    plan = [PlanEntry("Vmag", 1), PlanEntry("Pinj", 1), PlanEntry("Qinj", 1),
            PlanEntry("Pflow", (1, 2)), PlanEntry("Qflow", (1, 2)), PlanEntry("Vmag", 2),
            PlanEntry("Pinj", 2), PlanEntry("Qinj", 2)]
    return generate_measurements(TWO_TRUTH, plan, sigma, seed, net)


def truth_targets(state, net, buses):
    return {b: (state.v[net.index(b)], state.theta[net.index(b)]) for b in buses}


# -- partitions ---------------------------------------------------------------

def test_default_partition_shape(part14, net14):
    assert part14.areas == (1, 2, 3, 4)
    assert part14.buses[1] == (1, 2, 5)
    # every listed neighbour pair shares a tie line, recomputed from the branch list
    for k in part14.areas:
        for l in part14.neighbors[k]:
            assert any({part14.area_of[br.from_bus], part14.area_of[br.to_bus]} == {k, l}
                       for br in net14.branches)


def check_partition_invariants(part, net):
    seen = [b for k in part.areas for b in part.buses[k]]
    assert sorted(seen) == sorted(net.bus_ids)
    for k in part.areas:
        for l in part.neighbors[k]:
            assert k in part.neighbors[l]
            assert part.boundary[(k, l)]
    lines = [ln for k in part.areas for ln in part.internal_lines[k]] + list(part.tie_lines)
    assert sorted(lines) == sorted((br.from_bus, br.to_bus) for br in net.branches)


def test_default_partition_invariants(part14, net14):
    check_partition_invariants(part14, net14)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=14, max_size=14))
def test_random_partition_invariants(labels):
    from gridledger.powernet import ieee14

    net = ieee14()
    # relabel to consecutive ids so no area is empty
    ids = {a: i + 1 for i, a in enumerate(sorted(set(labels)))}
    part = build_partition(net, {b: ids[a] for b, a in zip(net.bus_ids, labels)})
    check_partition_invariants(part, net)


def test_two_bus_split(twobus):
    part = build_partition(twobus, {1: 1, 2: 2})
    assert part.neighbors[1] == (2,)
    assert part.boundary[(1, 2)] == (2,)
    assert part.tie_lines == ((1, 2),)


def test_missing_bus_error(net14):
    text = "\n".join(f"{b} 1" for b in net14.bus_ids if b != 7)
    with pytest.raises(PartitionError, match=r"unassigned bus\(es\) \[7\]"):
        parse_partition(text, net14)


def test_empty_area_and_duplicate(net14):
    with pytest.raises(PartitionError, match="empty area"):
        build_partition(net14, {b: (1 if b < 8 else 3) for b in net14.bus_ids})
    with pytest.raises(PartitionError, match="assigned twice"):
        parse_partition("1 1\n1 2\n", net14)


def test_area_without_internal_measurement(twobus):
    part = build_partition(twobus, {1: 1, 2: 2})
    ms = generate_measurements(TWO_TRUTH, [PlanEntry("Vmag", 1), PlanEntry("Pinj", 2)],
                               0.0, 0, twobus)
    with pytest.raises(PartitionError, match="no internal measurement"):
        assemble_area_problem(2, part, ms, {1: (1.0, 0.0)}, twobus)


# -- area problems --------------------------------------------------------------

def test_measurement_conservation(part14, net14):
    ms = measurements14(net14, 0)
    owned = assign_measurements(part14, ms)
    flat = sorted(i for idx in owned.values() for i in idx)
    assert flat == list(range(len(ms)))


def test_two_bus_area_one_terms(twobus):
    part = build_partition(twobus, {1: 1, 2: 2})
    ms = two_bus_measurements(twobus)
    p = assemble_area_problem(1, part, ms, {2: (1.0, 0.0)}, twobus)
    kinds = sorted((m.kind, m.location) for m in p.measurements)
    assert kinds == sorted([("Vmag", 1), ("Pinj", 1), ("Qinj", 1), ("Pflow", (1, 2)),
                            ("Qflow", (1, 2))])
    assert p.aux_buses == (2,)
    assert p.n_aux_per_neighbor == {2: 2}
    assert p.n_consensus == 2
    assert list(p.coupled) == [False, True, True, True, True]


def test_missing_target(part14, net14):
    with pytest.raises(KeyError, match="missing consensus target"):
        assemble_area_problem(1, part14, measurements14(net14, 0), {}, net14)


def test_aux_count_matches_boundary(part14, net14):
    ms = measurements14(net14, 0)
    targets = {b: (1.0, 0.0) for b in net14.bus_ids}
    for k in part14.areas:
        p = assemble_area_problem(k, part14, ms, targets, net14)
        for l in part14.neighbors[k]:
            assert p.n_aux_per_neighbor[l] == 2 * len(part14.boundary[(k, l)])


def test_no_neighbour_problem(net14):
    ms = measurements14(net14, 0)
    p = assemble_area_problem(1, single_area(net14), ms, {}, net14)
    assert p.aux_buses == () and p.n_consensus == 0
    assert not p.coupled.any()


def test_stitched_objective_identity(part14, net14, rng):
    ms = measurements14(net14, 1)
    for _ in range(3):
        th = rng.uniform(-0.3, 0.3, 14)
        th[0] = 0
        s = StateVector(rng.uniform(0.9, 1.1, 14), th)
        targets = truth_targets(s, net14, net14.bus_ids)
        total = 0.0
        for k in part14.areas:
            p = assemble_area_problem(k, part14, ms, targets, net14)
            terms = p.objective_terms(p.pack(s.v, s.theta))
            assert terms["consensus"] == pytest.approx(0.0, abs=1e-20)
            total += terms["local"] + terms["coupled"]
        assert total == pytest.approx(global_objective(s, ms, net14), rel=1e-10)


def test_fixed_point_noiseless(part14, net14, truth14):
    ms = generate_measurements(truth14, default_plan(net14), 0.0, 0, net14)
    targets = truth_targets(truth14, net14, net14.bus_ids)
    for k in part14.areas:
        p = assemble_area_problem(k, part14, ms, targets, net14)
        x = p.pack(truth14.v, truth14.theta)
        v, th = p.expand(x)
        warm = AreaSolution(k, p.own_buses, v[[net14.index(b) for b in p.own_buses]],
                            th[[net14.index(b) for b in p.own_buses]], p.aux_buses,
                            v[[net14.index(b) for b in p.aux_buses]],
                            th[[net14.index(b) for b in p.aux_buses]], {}, 0, 0, True)
        sol = solve_area(p, warm)
        idx = [net14.index(b) for b in p.own_buses]
        assert np.max(np.abs(sol.v - truth14.v[idx])) <= 1e-8
        assert np.max(np.abs(sol.theta - truth14.theta[idx])) <= 1e-8
        assert sol.objective <= 1e-12


def test_large_weight_pins_auxiliaries(part14, net14, truth14, rng):
    ms = measurements14(net14, 2)
    targets = {b: (v + rng.normal(0, 1e-3), t + rng.normal(0, 1e-3))
               for b, (v, t) in truth_targets(truth14, net14, net14.bus_ids).items()}
    for k in part14.areas:
        p = assemble_area_problem(k, part14, ms, targets, net14, weight_v=1e10,
                                  weight_theta=1e10)
        sol = solve_area(p)
        assert np.max(np.abs(sol.aux_v - p.target_v)) <= 1e-6
        assert np.max(np.abs(sol.aux_theta - p.target_theta)) <= 1e-6


def test_two_bus_exact_targets_reproduce_central(twobus):
    part = build_partition(twobus, {1: 1, 2: 2})
    ms = two_bus_measurements(twobus)
    central = solve_wls(twobus, ms, EstimationOptions(tol=1e-12)).state
    targets = truth_targets(central, twobus, (1, 2))
    sols = {k: solve_area(assemble_area_problem(k, part, ms, targets, twobus), partition=part)
            for k in part.areas}
    stitched = stitch_global_state(sols, twobus)
    assert np.max(np.abs(stitched.v - central.v)) <= 1e-6
    assert np.max(np.abs(stitched.theta - central.theta)) <= 1e-6


def test_broadcast_length(part14, net14):
    ms = measurements14(net14, 0)
    targets = {b: (1.0, 0.0) for b in net14.bus_ids}
    sizes = set()
    for k in part14.areas:
        sol = solve_area(assemble_area_problem(k, part14, ms, targets, net14), partition=part14)
        for l, payload in sol.broadcasts.items():
            assert len(payload) == 2 * len(part14.payload_buses(k, l))
            sizes.add(len(payload))
    assert sizes <= {2, 4, 6}


def test_boundary_payload_interleaved(net14, truth14):
    vals = boundary_payload((4, 7), truth14.v, truth14.theta, net14)
    assert list(vals) == [truth14.v[3], truth14.theta[3], truth14.v[6], truth14.theta[6]]


def test_anchor_rows(part14, net14):
    ms = measurements14(net14, 0)
    targets = {b: (1.0, 0.0) for b in net14.bus_ids}
    p = assemble_area_problem(2, part14, ms, targets, net14, anchors=[(4, 1.0, -0.1)])
    base = assemble_area_problem(2, part14, ms, targets, net14)
    assert p.n_consensus == base.n_consensus + 2
    with pytest.raises(PartitionError, match="not owned"):
        assemble_area_problem(2, part14, ms, targets, net14, anchors=[(1, 1.0, 0.0)])
    # the slack bus angle is pinned, so its anchor adds only a magnitude row
    p1 = assemble_area_problem(1, part14, ms, targets, net14, anchors=[(1, 1.0, 0.0)])
    b1 = assemble_area_problem(1, part14, ms, targets, net14)
    assert p1.n_consensus == b1.n_consensus + 1


def test_stitch_uses_owner_values(twobus):
    part = build_partition(twobus, {1: 1, 2: 2})
    ms = two_bus_measurements(twobus, sigma=0.01, seed=3)
    targets = {1: (0.9, 0.2), 2: (1.1, -0.3)}  # deliberately far from the owners
    sols = {k: solve_area(assemble_area_problem(k, part, ms, targets, twobus))
            for k in part.areas}
    s = stitch_global_state(sols, twobus)
    assert s.v[0] == sols[1].v[0] and s.v[1] == sols[2].v[0]
    assert abs(sols[1].aux_v[0] - s.v[1]) > 0


def test_stitch_coverage_errors(twobus):
    sol = AreaSolution(1, (1,), np.ones(1), np.zeros(1), (), np.zeros(0), np.zeros(0), {},
                       0.0, 1, True)
    with pytest.raises(PartitionError, match="no area covers"):
        stitch_global_state({1: sol}, twobus)
    with pytest.raises(PartitionError, match="more than one"):
        stitch_global_state({1: sol, 2: sol}, twobus)


def test_area_objective_terms_sum(part14, net14):
    ms = measurements14(net14, 0)
    targets = {b: (1.0, 0.0) for b in net14.bus_ids}
    p = assemble_area_problem(3, part14, ms, targets, net14)
    sol = solve_area(p)
    assert sum(sol.terms.values()) == pytest.approx(sol.objective, rel=1e-12)
    assert isinstance(p.measurements, MeasurementSet)
    assert all(isinstance(m, Measurement) for m in p.measurements)

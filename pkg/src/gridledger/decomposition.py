"""Area partitioning and the per-area decomposed estimation problem.

Each area estimates its own buses plus auxiliary copies (``v~``, ``theta~``)
of the neighbouring buses it is tied to.  Measurements that only touch
own buses form the local part of the objective; measurements that reach
across a tie line are evaluated with the auxiliary copies, and quadratic
consensus penalties pull every copy toward a target supplied by the
caller (the owner's last broadcast in the plain scheme).  Optional anchor
terms of the same form pull the area's own boundary buses toward a target;
the coordinator uses them for its two-sided consensus correction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .estimator import SingularGainError, gauss_newton
from .powernet import (CaseFormatError, MeasurementFunction, MeasurementSet, NetworkModel,
                       StateVector)

DEFAULT_CONSENSUS_WEIGHT = 1e4


class PartitionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AreaPartition:
    """Bus-to-area map with derived neighbour and boundary sets.

    ``boundary[(k, l)]`` lists the buses of area ``l`` that are adjacent to
    area ``k`` across a tie line, sorted by bus id.
    """

    area_of: Mapping[int, int]
    areas: tuple[int, ...]
    buses: Mapping[int, tuple[int, ...]]
    neighbors: Mapping[int, tuple[int, ...]]
    boundary: Mapping[tuple[int, int], tuple[int, ...]]
    tie_lines: tuple[tuple[int, int], ...]
    internal_lines: Mapping[int, tuple[tuple[int, int], ...]]

    @property
    def n_areas(self) -> int:
        return len(self.areas)

    def payload_buses(self, sender: int, receiver: int) -> tuple[int, ...]:
        """Own buses of ``sender`` whose state is broadcast to ``receiver``."""
        return self.boundary[(receiver, sender)]


def build_partition(net: NetworkModel, assignment: Mapping[int, int]) -> AreaPartition:
    missing = [b for b in net.bus_ids if b not in assignment]
    if missing:
        raise PartitionError(f"unassigned bus(es) {missing}")
    extra = [b for b in assignment if not net.has_bus(b)]
    if extra:
        raise PartitionError(f"partition names unknown bus(es) {extra}")
    ids = sorted(set(assignment.values()))
    if ids[0] < 1:
        raise PartitionError("area ids must be positive integers")
    empty = [k for k in range(1, ids[-1] + 1) if k not in ids]
    if empty:
        raise PartitionError(f"empty area(s) {empty}")
    buses = {k: tuple(b for b in net.bus_ids if assignment[b] == k) for k in ids}
    neigh: dict[int, set[int]] = {k: set() for k in ids}
    boundary: dict[tuple[int, int], set[int]] = {}
    ties, internal = [], {k: [] for k in ids}
    for br in net.branches:
        a, b = assignment[br.from_bus], assignment[br.to_bus]
        if a == b:
            internal[a].append((br.from_bus, br.to_bus))
            continue
        ties.append((br.from_bus, br.to_bus))
        neigh[a].add(b)
        neigh[b].add(a)
        boundary.setdefault((a, b), set()).add(br.to_bus)
        boundary.setdefault((b, a), set()).add(br.from_bus)
    return AreaPartition(
        area_of=dict(assignment),
        areas=tuple(ids),
        buses=buses,
        neighbors={k: tuple(sorted(v)) for k, v in neigh.items()},
        boundary={k: tuple(sorted(v)) for k, v in sorted(boundary.items())},
        tie_lines=tuple(ties),
        internal_lines={k: tuple(v) for k, v in internal.items()},
    )


def parse_partition(text: str, net: NetworkModel) -> AreaPartition:
    assignment: dict[int, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 2:
            raise CaseFormatError("expected 'bus_id area_id'", lineno)
        try:
            bus, area = int(toks[0]), int(toks[1])
        except ValueError:
            raise CaseFormatError(f"malformed partition line {line!r}", lineno) from None
        if bus in assignment:
            raise PartitionError(f"line {lineno}: bus {bus} assigned twice")
        assignment[bus] = area
    return build_partition(net, assignment)


def load_partition(path: str | Path, net: NetworkModel) -> AreaPartition:
    return parse_partition(Path(path).read_text(), net)


def single_area(net: NetworkModel) -> AreaPartition:
    return build_partition(net, {b: 1 for b in net.bus_ids})


def assign_measurements(partition: AreaPartition, ms: MeasurementSet) -> dict[int, list[int]]:
    """Owner area of each measurement.

    Voltage and injection measurements go to the area owning the bus; a flow
    goes to the area owning its sending (from) bus.
    """
    out: dict[int, list[int]] = {k: [] for k in partition.areas}
    for idx, m in enumerate(ms):
        bus = m.location[0] if m.is_flow else m.location
        out[partition.area_of[bus]].append(idx)
    return out


@dataclass(eq=False)
class AreaProblem:
    """One area's decomposed objective.

    Local variables are ordered ``[theta of own+aux buses (pinned slack
    removed), v of own+aux buses]``.  Consensus pseudo-measurements come in
    two groups: the auxiliary copies pulled toward ``target_*``, and optional
    anchors pulling own boundary buses toward ``anchor_*``.
    """

    area: int
    own_buses: tuple[int, ...]
    aux_buses: tuple[int, ...]
    aux_owner: tuple[int, ...]
    measurement_index: tuple[int, ...]  # positions in the global set
    coupled: np.ndarray  # True where a measurement references auxiliary buses
    measurements: MeasurementSet
    target_v: np.ndarray
    target_theta: np.ndarray
    weight_v: float
    weight_theta: float
    pinned_bus: int | None  # global slack if it lies in this area
    net: NetworkModel = field(repr=False)
    anchor_buses: tuple[int, ...] = ()
    anchor_v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    anchor_theta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        net = self.net
        self._f = MeasurementFunction(net, self.measurements.items)
        self._z = self.measurements.z
        self._w = self.measurements.weights
        local = [net.index(b) for b in self.own_buses + self.aux_buses]
        th_idx = list(local)
        if self.pinned_bus is not None:
            th_idx.remove(net.index(self.pinned_bus))
        self._theta_idx = np.array(th_idx, dtype=int)
        self._v_idx = np.array(local, dtype=int)
        self._cols = np.concatenate([self._theta_idx, net.n_bus + self._v_idx])
        self.n_vars = len(self._cols)
        nth = len(th_idx)
        th_pos = {net.bus_ids[i]: j for j, i in enumerate(th_idx)}
        n_own = len(self.own_buses)
        v_pos = {b: nth + j for j, b in enumerate(self.own_buses)}
        for j, b in enumerate(self.aux_buses):
            v_pos.setdefault(b, nth + n_own + j)
        if set(self.own_buses) & set(self.aux_buses):
            raise PartitionError(f"area {self.area}: auxiliary bus overlaps own buses")

        # consensus rows: (position in x, target, weight)
        pos, tgt, wts = [], [], []
        for b, t in zip(self.aux_buses, self.target_v):
            pos.append(v_pos[b]), tgt.append(t), wts.append(self.weight_v)
        for b, t in zip(self.anchor_buses, self.anchor_v):
            pos.append(v_pos[b]), tgt.append(t), wts.append(self.weight_v)
        for b, t in zip(self.aux_buses, self.target_theta):
            pos.append(th_pos[b]), tgt.append(t), wts.append(self.weight_theta)
        for b, t in zip(self.anchor_buses, self.anchor_theta):
            if b != self.pinned_bus:  # the slack angle is fixed, nothing to pull
                pos.append(th_pos[b]), tgt.append(t), wts.append(self.weight_theta)
        self._cons_pos = np.array(pos, dtype=int)
        self._cons_target = np.array(tgt, dtype=float)
        self._weights = np.concatenate([self._w, np.array(wts, dtype=float)])
        self._H_cons = np.zeros((len(pos), self.n_vars))
        self._H_cons[np.arange(len(pos)), self._cons_pos] = 1.0

    @property
    def n_aux_per_neighbor(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for owner in self.aux_owner:
            out[owner] = out.get(owner, 0) + 2
        return out

    @property
    def n_consensus(self) -> int:
        return len(self._cons_pos)

    def expand(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Local variable vector -> full-length (v, theta); other buses flat."""
        n = self.net.n_bus
        v, th = np.ones(n), np.zeros(n)
        th[self._theta_idx] = x[: len(self._theta_idx)]
        v[self._v_idx] = x[len(self._theta_idx):]
        return v, th

    def pack(self, v: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return np.concatenate([theta[self._theta_idx], v[self._v_idx]])

    def _model(self, x):
        v, th = self.expand(x)
        r_meas = self._z - self._f.value(v, th)
        H_meas = self._f.jacobian(v, th)[:, self._cols]
        r_cons = self._cons_target - x[self._cons_pos]
        return np.concatenate([r_meas, r_cons]), np.vstack([H_meas, self._H_cons])

    def measurement_residuals(self, v: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return self._z - self._f.value(v, theta)

    def objective_terms(self, x: np.ndarray) -> dict[str, float]:
        """Objective split into local, coupled and consensus parts."""
        r, _ = self._model(x)
        wr2 = self._weights * r * r
        m = len(self._z)
        return {"local": float(wr2[:m][~self.coupled].sum()),
                "coupled": float(wr2[:m][self.coupled].sum()),
                "consensus": float(wr2[m:].sum())}

    def objective(self, x: np.ndarray) -> float:
        r, _ = self._model(x)
        return float(np.dot(self._weights, r * r))


def assemble_area_problem(k: int, partition: AreaPartition, ms: MeasurementSet,
                          targets: Mapping[int, tuple[float, float]], net: NetworkModel,
                          weight_v: float = DEFAULT_CONSENSUS_WEIGHT,
                          weight_theta: float = DEFAULT_CONSENSUS_WEIGHT,
                          assignment: Mapping[int, list[int]] | None = None,
                          anchors: Sequence[tuple[int, float, float]] = ()) -> AreaProblem:
    """Build area ``k``'s decomposed problem.

    ``targets`` maps each auxiliary bus id to the ``(v, theta)`` its copy is
    pulled toward.  ``anchors`` is an optional list of ``(own_bus, v, theta)``
    entries pulling own boundary buses the same way (used by the
    coordinator's consensus correction; empty gives the plain objective).
    """
    if k not in partition.buses:
        raise PartitionError(f"unknown area {k}")
    assignment = assignment if assignment is not None else assign_measurements(partition, ms)
    idx = tuple(assignment[k])
    own = partition.buses[k]
    own_set = set(own)
    coupled = np.array([any(b not in own_set for b in _referenced_buses(ms[i], net))
                        for i in idx], dtype=bool)
    if len(idx) == 0 or coupled.all():
        raise PartitionError(f"area {k} has no internal measurement")
    aux, owner = [], []
    for l in partition.neighbors[k]:
        for b in partition.boundary[(k, l)]:
            aux.append(b)
            owner.append(l)
    missing = [b for b in aux if b not in targets]
    if missing:
        raise KeyError(f"missing consensus target for bus(es) {missing}")
    bad = [a[0] for a in anchors if a[0] not in own_set]
    if bad:
        raise PartitionError(f"anchor bus(es) {bad} not owned by area {k}")
    slack_id = net.slack_id
    return AreaProblem(
        area=k, own_buses=own, aux_buses=tuple(aux), aux_owner=tuple(owner),
        measurement_index=idx, coupled=coupled, measurements=ms.subset(idx),
        target_v=np.array([targets[b][0] for b in aux], dtype=float),
        target_theta=np.array([targets[b][1] for b in aux], dtype=float),
        weight_v=weight_v, weight_theta=weight_theta,
        pinned_bus=slack_id if slack_id in own_set else None, net=net,
        anchor_buses=tuple(int(a[0]) for a in anchors),
        anchor_v=np.array([a[1] for a in anchors], dtype=float),
        anchor_theta=np.array([a[2] for a in anchors], dtype=float),
    )


def _referenced_buses(m, net: NetworkModel) -> tuple[int, ...]:
    if m.kind in ("Pinj", "Qinj"):
        return (m.location, *net.neighbors(m.location))
    return m.buses


@dataclass
class AreaSolution:
    area: int
    own_buses: tuple[int, ...]
    v: np.ndarray
    theta: np.ndarray
    aux_buses: tuple[int, ...]
    aux_v: np.ndarray
    aux_theta: np.ndarray
    broadcasts: dict[int, np.ndarray]
    objective: float
    iterations: int
    converged: bool
    terms: dict[str, float] = field(default_factory=dict)

    def own_state(self) -> np.ndarray:
        return np.concatenate([self.v, self.theta])


def solve_area(p: AreaProblem, warm_start: AreaSolution | None = None, *,
               partition: AreaPartition | None = None, tol: float = 1e-8,
               max_iter: int = 50) -> AreaSolution:
    """Damped Gauss-Newton on the area objective over own and auxiliary states."""
    net = p.net
    v0, th0 = np.ones(net.n_bus), np.zeros(net.n_bus)
    if warm_start is not None:
        for b, vv, tt in zip(warm_start.own_buses, warm_start.v, warm_start.theta):
            v0[net.index(b)], th0[net.index(b)] = vv, tt
        for b, vv, tt in zip(warm_start.aux_buses, warm_start.aux_v, warm_start.aux_theta):
            v0[net.index(b)], th0[net.index(b)] = vv, tt
    x0 = p.pack(v0, th0)
    out = gauss_newton(p._model, p._weights, x0, tol=tol, max_iter=max_iter,
                       where=f"local gain matrix of area {p.area}")
    v, th = p.expand(out.x)
    own_idx = [net.index(b) for b in p.own_buses]
    aux_idx = [net.index(b) for b in p.aux_buses]
    broadcasts = {}
    if partition is not None:
        for l in partition.neighbors[p.area]:
            broadcasts[l] = boundary_payload(partition.payload_buses(p.area, l), v, th, net)
    return AreaSolution(
        area=p.area, own_buses=p.own_buses, v=v[own_idx], theta=th[own_idx],
        aux_buses=p.aux_buses, aux_v=v[aux_idx], aux_theta=th[aux_idx],
        broadcasts=broadcasts, objective=out.objective, iterations=out.iterations,
        converged=out.converged, terms=p.objective_terms(out.x),
    )


def boundary_payload(buses, v, theta, net: NetworkModel) -> np.ndarray:
    """Interleaved ``[v_b1, theta_b1, v_b2, theta_b2, ...]``."""
    vals = []
    for b in buses:
        k = net.index(b)
        vals += [v[k], theta[k]]
    return np.array(vals)


def stitch_global_state(solutions: Mapping[int, AreaSolution], net: NetworkModel) -> StateVector:
    """Global state from each area's own-bus estimates; auxiliary copies are ignored."""
    v = np.full(net.n_bus, np.nan)
    th = np.full(net.n_bus, np.nan)
    for sol in solutions.values():
        for b, vv, tt in zip(sol.own_buses, sol.v, sol.theta):
            k = net.index(b)
            if not np.isnan(v[k]):
                raise PartitionError(f"bus {b} covered by more than one area")
            v[k], th[k] = vv, tt
    gap = [b for b, x in zip(net.bus_ids, v) if np.isnan(x)]
    if gap:
        raise PartitionError(f"no area covers bus(es) {gap}")
    return StateVector(v, th, net.slack)


__all__ = [
    "AreaPartition", "AreaProblem", "AreaSolution", "PartitionError", "SingularGainError",
    "assemble_area_problem", "assign_measurements", "build_partition", "load_partition",
    "parse_partition", "single_area", "solve_area", "stitch_global_state",
]

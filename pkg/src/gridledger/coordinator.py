"""The outer distributed iteration.

Each area is an actor holding only its own solution and what it has read
off the ledger.  Per outer iteration the active areas re-solve, every area
sends one payload per neighbour as a signed transfer, the ledger seals a
block, and each receiver decodes its inbox from that committed block.

Plain consensus penalties toward the neighbour's last broadcast leave a
bias of order 1/W between the copies and the owners, which shows up as a
large objective gap.  The coordinator removes it with edge consensus in the
alternating-direction form: every (owner bus, copy) edge carries a
consensus value ``z`` and a multiplier ``lam``, both replicated at the two
ends and updated from committed payloads only.  The copy is pulled toward
``z - lam/(2W)`` and the owner's boundary bus toward ``z + lam/(2W)``, so
the area objective keeps its shape and only the targets move.  After each
exchange::

    z   <- a * (x_owner + x_copy) / 2 + (1 - a) * z
    lam <- lam + a * W * (x_copy - x_owner)

with over-relaxation factor ``a`` in (0, 2).

Payload from area k to area l, as comma-separated fixed-point decimals::

    v, theta of k's buses adjacent to l   |   v, theta of k's copies of l's buses
"""
from __future__ import annotations

import csv
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .decomposition import (AreaPartition, AreaProblem, AreaSolution,
                            assemble_area_problem, assign_measurements, solve_area,
                            stitch_global_state)
from .estimator import global_objective
from .ledger import Identity, Ledger, generate_identity
from .powernet import MeasurementSet, NetworkModel, StateVector

DEFAULT_WEIGHT = 2e5
DEFAULT_RELAXATION = 1.8
DEFAULT_DELAY_PROB = 0.3
_TOKEN = re.compile(r"-?\d+(\.\d+)?")


class PayloadError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    tol: float = 1e-6
    max_iter: int = 500
    mode: str = "jacobi"  # or "gauss-seidel"
    delay_prob: float = 0.0
    seed: int = 0
    precision: int = 12
    bulk: bool = True  # one transfer per neighbour pair, else one per value
    consensus_weight: float = DEFAULT_WEIGHT  # on voltage-magnitude copies
    consensus_weight_theta: float | None = None  # None: same as consensus_weight
    relaxation: float = DEFAULT_RELAXATION
    consensus_tol_factor: float = 10.0  # copies must agree with owners to this x tol
    inner_tol: float = 1e-8
    inner_max_iter: int = 50
    workers: int = 1
    transport: str = "ledger"  # "memory" skips the ledger (reference path for tests)

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if not 0 <= self.delay_prob < 1:
            raise ValueError("delay probability must lie in [0, 1)")
        if self.mode not in ("jacobi", "gauss-seidel"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.transport not in ("ledger", "memory"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.max_iter < 1 or self.precision < 1 or self.workers < 1:
            raise ValueError("max_iter, precision and workers must be positive")
        if self.consensus_weight <= 0 or self.weight_theta <= 0:
            raise ValueError("consensus weights must be positive")
        if not 0 < self.relaxation < 2:
            raise ValueError("relaxation must lie in (0, 2)")

    @property
    def weight_theta(self) -> float:
        w = self.consensus_weight_theta
        return self.consensus_weight if w is None else w

    @property
    def weights(self) -> np.ndarray:
        """Consensus weights for one interleaved (v, theta) pair."""
        return np.array([self.consensus_weight, self.weight_theta])


@dataclass
class DistributedResult:
    state: StateVector
    iterations: int
    converged: bool
    objective: float  # global objective at the stitched state
    distributed_objective: float  # sum of area objectives
    objective_trace: list[float]
    dx_trace: list[float]
    consensus_trace: list[float]
    area_trace: list[tuple]
    excluded: list[int | None]
    ledger_stats: dict[str, int]
    chain_hash: str
    rejected: int
    solutions: dict[int, AreaSolution] = field(repr=False, default_factory=dict)

    @property
    def total_gas(self) -> int:
        return self.ledger_stats.get("total_gas", 0)


# -- scheduling and payloads ---------------------------------------------------

def schedule_updates(iteration: int, p: float, rng: np.random.Generator,
                     areas: Sequence[int]) -> frozenset[int]:
    """Active areas for one outer iteration: with probability ``p`` exactly
    one area, drawn uniformly, sits the iteration out."""
    areas = tuple(areas)
    if p > 0 and rng.random() < p:
        out = areas[int(rng.integers(len(areas)))]
        return frozenset(a for a in areas if a != out)
    return frozenset(areas)


def encode_payload(values, precision: int = 12) -> str:
    vals = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(vals)):
        raise PayloadError("payload values must be finite")
    return ",".join(f"{x:.{precision}f}" for x in vals)


def decode_payload(s: str, expected_count: int) -> np.ndarray:
    toks = s.split(",") if s else []
    for t in toks:
        if not _TOKEN.fullmatch(t):
            raise PayloadError(f"malformed payload token {t!r}")
    if len(toks) != expected_count:
        raise PayloadError(f"payload carries {len(toks)} values, expected {expected_count}")
    return np.array([float(t) for t in toks])


def _interleave(v, th) -> np.ndarray:
    out = np.empty(2 * len(v))
    out[0::2], out[1::2] = v, th
    return out


# -- ledger setup ----------------------------------------------------------------

def area_identity(k: int) -> Identity:
    return generate_identity(f"area-{k}")


def setup_ledger(partition: AreaPartition, owner: Identity | None = None, *,
                 difficulty_bits: int = 0) -> tuple[Ledger, dict[int, Identity]]:
    """Deploy the contract and connect every neighbour pair in both directions."""
    owner = owner or generate_identity("auditor")
    ledger = Ledger(owner, difficulty_bits=difficulty_bits)
    ids = {k: area_identity(k) for k in partition.areas}
    for k in partition.areas:
        for l in partition.neighbors[k]:
            r = ledger.establish(owner, ids[k].address, ids[l].address)
            if not r.accepted:
                raise RuntimeError(f"could not connect area {k} to {l}: {r.reason}")
    ledger.seal(timestamp=0)
    return ledger, ids


# -- area actors -------------------------------------------------------------------

class AreaAgent:
    """State one area keeps between outer iterations."""

    def __init__(self, k: int, partition: AreaPartition, identity: Identity | None):
        self.area = k
        self.identity = identity
        self.neighbors = partition.neighbors[k]
        self.out_buses = {l: partition.payload_buses(k, l) for l in self.neighbors}
        self.copy_buses = {l: partition.boundary[(k, l)] for l in self.neighbors}
        flat = lambda n: _interleave(np.ones(n), np.zeros(n))  # noqa: E731
        self.sent = {l: flat(self._n_out(l) // 2) for l in self.neighbors}
        self.recv = {l: flat(self._n_in(l) // 2) for l in self.neighbors}
        # edge replicas: z and lam for my copies of l's buses, and for l's copies of mine
        self.z_copy = {l: flat(len(self.copy_buses[l])) for l in self.neighbors}
        self.z_own = {l: flat(len(self.out_buses[l])) for l in self.neighbors}
        self.lam_copy = {l: np.zeros(2 * len(self.copy_buses[l])) for l in self.neighbors}
        self.lam_own = {l: np.zeros(2 * len(self.out_buses[l])) for l in self.neighbors}
        self.solution: AreaSolution | None = None

    def _n_out(self, l: int) -> int:
        return 2 * (len(self.out_buses[l]) + len(self.copy_buses[l]))

    def _n_in(self, l: int) -> int:
        return self._n_out(l)  # symmetric layout

    def problem(self, partition, ms, net, cfg: RunConfig, assignment) -> AreaProblem:
        W = cfg.weights
        targets: dict[int, tuple[float, float]] = {}
        anchors: list[tuple[int, float, float]] = []
        for l in self.neighbors:
            for j, b in enumerate(self.copy_buses[l]):
                sl = slice(2 * j, 2 * j + 2)
                t = self.z_copy[l][sl] - self.lam_copy[l][sl] / (2 * W)
                targets[b] = (float(t[0]), float(t[1]))
            for j, b in enumerate(self.out_buses[l]):
                sl = slice(2 * j, 2 * j + 2)
                t = self.z_own[l][sl] + self.lam_own[l][sl] / (2 * W)
                anchors.append((b, float(t[0]), float(t[1])))
        return assemble_area_problem(self.area, partition, ms, targets, net, W[0], W[1],
                                     assignment, anchors=anchors)

    def outgoing(self, l: int, net: NetworkModel) -> np.ndarray:
        sol = self.solution
        own = [sol.own_buses.index(b) for b in self.out_buses[l]]
        aux = [sol.aux_buses.index(b) for b in self.copy_buses[l]]
        return np.concatenate([_interleave(sol.v[own], sol.theta[own]),
                               _interleave(sol.aux_v[aux], sol.aux_theta[aux])])

    def update_consensus(self, W: np.ndarray, relax: float) -> None:
        for l in self.neighbors:
            no, nc = 2 * len(self.out_buses[l]), 2 * len(self.copy_buses[l])
            own, mine_in = self.sent[l][:no], self.recv[l][nc:]
            copies, theirs = self.sent[l][no:], self.recv[l][:nc]
            self.z_copy[l] = relax * (copies + theirs) / 2 + (1 - relax) * self.z_copy[l]
            self.z_own[l] = relax * (own + mine_in) / 2 + (1 - relax) * self.z_own[l]
            self.lam_copy[l] = self.lam_copy[l] + relax * np.tile(W, nc // 2) * (copies - theirs)
            self.lam_own[l] = self.lam_own[l] + relax * np.tile(W, no // 2) * (mine_in - own)

    def consensus_gap(self) -> float:
        gap = 0.0
        for l in self.neighbors:
            no, nc = 2 * len(self.out_buses[l]), 2 * len(self.copy_buses[l])
            gap = max(gap, float(np.max(np.abs(self.sent[l][no:] - self.recv[l][:nc]))))
        return gap


# -- the outer loop ------------------------------------------------------------------

def run_distributed(net: NetworkModel, ms: MeasurementSet, partition: AreaPartition,
                    cfg: RunConfig | None = None, ledger: Ledger | None = None,
                    identities: Mapping[int, Identity] | None = None) -> DistributedResult:
    cfg = cfg or RunConfig()
    use_ledger = cfg.transport == "ledger"
    if use_ledger and ledger is None:
        ledger, identities = setup_ledger(partition)
    if use_ledger and identities is None:
        identities = {k: area_identity(k) for k in partition.areas}
    areas = partition.areas
    agents = {k: AreaAgent(k, partition, identities[k] if use_ledger else None) for k in areas}
    by_address = {a.identity.address: k for k, a in agents.items() if a.identity is not None}
    assignment = assign_measurements(partition, ms)
    rng = np.random.default_rng(cfg.seed)
    W = cfg.weights
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    obj_trace, dx_trace, cons_trace, rows, excluded = [], [], [], [], []
    rejected = 0
    prev_vec: np.ndarray | None = None
    converged = False
    it = 0

    def solve(k: int) -> AreaSolution:
        ag = agents[k]
        p = ag.problem(partition, ms, net, cfg, assignment)
        return solve_area(p, ag.solution, partition=partition, tol=cfg.inner_tol,
                          max_iter=cfg.inner_max_iter)

    def broadcast(ks: Sequence[int], iteration: int) -> dict[int, list[str]]:
        """Send payloads of areas ``ks``, commit, and deliver from the block."""
        nonlocal rejected
        hashes: dict[int, list[str]] = {k: [] for k in ks}
        pending: dict[tuple[int, int], np.ndarray] = {}
        for k in ks:
            ag = agents[k]
            for l in ag.neighbors:
                vals = ag.outgoing(l, net)
                text = encode_payload(vals, cfg.precision)
                if not use_ledger:
                    got = decode_payload(text, len(vals))
                    ag.sent[l] = got
                    agents[l].recv[k] = got
                    continue
                chunks = [text] if cfg.bulk else text.split(",")
                ok = True
                for chunk in chunks:
                    rc = ledger.submit_transfer(ag.identity, agents[l].identity.address,
                                                iteration, chunk.encode("ascii"))
                    ok &= rc.accepted
                    if rc.accepted:
                        hashes[k].append(rc.tx_hash.hex())
                if ok:
                    pending[(k, l)] = decode_payload(text, len(vals))
                else:
                    rejected += 1
        if use_ledger:
            blk = ledger.seal(timestamp=iteration)
            for (k, l), got in pending.items():
                agents[k].sent[l] = got
            inbox: dict[tuple[int, int], list[str]] = {}
            for tx in blk.txs:
                if tx.is_contract_call or tx.receiver not in by_address:
                    continue
                key = (by_address[tx.sender], by_address[tx.receiver])
                inbox.setdefault(key, []).append(tx.payload.decode("ascii"))
            for (k, l), parts in inbox.items():
                ag = agents[l]
                try:
                    ag.recv[k] = decode_payload(",".join(parts), ag._n_in(k))
                except PayloadError:
                    rejected += 1  # incomplete transfer; keep the stale values
        return hashes

    try:
        for it in range(1, cfg.max_iter + 1):
            # nothing has been broadcast before the first solve, so every area runs
            active = frozenset(areas) if it == 1 else schedule_updates(it, cfg.delay_prob, rng, areas)
            skipped = [k for k in areas if k not in active]
            excluded.append(skipped[0] if skipped else None)
            before = {k: agents[k].solution for k in areas}
            order = [k for k in areas if k in active]
            if cfg.mode == "jacobi":
                if pool is not None:
                    sols = dict(zip(order, pool.map(solve, order)))
                else:
                    sols = {k: solve(k) for k in order}
                for k in order:
                    agents[k].solution = sols[k]
                hashes = broadcast(order, it)
            else:
                hashes = {}
                for k in order:
                    agents[k].solution = solve(k)
                    hashes.update(broadcast([k], it))
            for ag in agents.values():
                ag.update_consensus(W, cfg.relaxation)

            state = stitch_global_state({k: a.solution for k, a in agents.items()}, net)
            vec = np.concatenate([state.v, state.theta])
            dx = float("inf") if prev_vec is None else float(np.max(np.abs(vec - prev_vec)))
            prev_vec = vec
            gap = max(a.consensus_gap() for a in agents.values())
            obj_trace.append(global_objective(state, ms, net))
            dx_trace.append(dx)
            cons_trace.append(gap)
            for k in areas:
                sol, old = agents[k].solution, before[k]
                adx = (float("inf") if old is None else
                       float(np.max(np.abs(sol.own_state() - old.own_state()))))
                terms = sol.terms
                rows.append((it, k, int(k in active), terms["local"] + terms["coupled"],
                             adx, ";".join(hashes.get(k, []))))
            if dx < cfg.tol and gap < cfg.consensus_tol_factor * cfg.tol:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()

    sols = {k: a.solution for k, a in agents.items()}
    state = stitch_global_state(sols, net)
    J = global_objective(state, ms, net)
    return DistributedResult(
        state=state, iterations=it, converged=converged, objective=J,
        distributed_objective=distributed_objective(sols, partition, net, cfg.consensus_weight, cfg.weight_theta),
        objective_trace=obj_trace, dx_trace=dx_trace, consensus_trace=cons_trace,
        area_trace=rows, excluded=excluded,
        ledger_stats=ledger.stats() if use_ledger else {},
        chain_hash=ledger.head.hash.hex() if use_ledger else "",
        rejected=rejected, solutions=sols,
    )


def distributed_objective(sols: Mapping[int, AreaSolution], partition: AreaPartition,
                          net: NetworkModel, weight_v: float,
                          weight_theta: float | None = None) -> float:
    """Sum of area objectives: each area's measurement terms plus the plain
    consensus penalty of its copies against the owners' solved values."""
    wt = weight_v if weight_theta is None else weight_theta
    owner_val = {}
    for s in sols.values():
        for b, v, t in zip(s.own_buses, s.v, s.theta):
            owner_val[b] = (v, t)
    total = 0.0
    for s in sols.values():
        total += s.terms["local"] + s.terms["coupled"]
        for b, v, t in zip(s.aux_buses, s.aux_v, s.aux_theta):
            ov, ot = owner_val[b]
            total += weight_v * (ov - v) ** 2 + wt * (ot - t) ** 2
    return total


def write_area_trace_csv(path: str | Path, result: DistributedResult) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iter", "area", "active", "local_obj", "max_dx", "tx_hash"])
        for it, k, act, obj, dx, h in result.area_trace:
            wr.writerow([it, k, act, f"{obj:.10e}", "" if np.isinf(dx) else f"{dx:.6e}", h])


def write_objective_trace_csv(path: str | Path, result: DistributedResult) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iter", "objective", "max_dx", "consensus_gap", "excluded_area"])
        for i, (J, dx, g, ex) in enumerate(zip(result.objective_trace, result.dx_trace,
                                               result.consensus_trace, result.excluded), 1):
            wr.writerow([i, f"{J:.10e}", "" if np.isinf(dx) else f"{dx:.6e}", f"{g:.6e}",
                         "" if ex is None else ex])


__all__ = [
    "DistributedResult", "PayloadError", "RunConfig", "decode_payload", "encode_payload",
    "run_distributed", "schedule_updates", "setup_ledger", "stitch_global_state",
    "write_area_trace_csv", "write_objective_trace_csv",
]

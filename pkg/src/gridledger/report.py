"""Scenario report: centralized vs distributed comparison and ledger figures."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .coordinator import DistributedResult
from .estimator import EstimationResult
from .powernet import NetworkModel


def objective_error_pct(j_dist: float, j_cent: float) -> float:
    return 100.0 * (j_dist - j_cent) / j_cent


@dataclass
class RunSummary:
    label: str
    converged: bool
    iterations: int
    objective: float
    distributed_objective: float
    objective_error_pct: float
    max_abs_dv: float
    max_abs_dtheta: float
    transactions: int = 0
    blocks: int = 0
    total_gas: int = 0
    payload_bytes: int = 0
    rejected: int = 0
    chain_hash: str = ""


@dataclass
class ScenarioReport:
    config: dict
    central: dict
    runs: list[RunSummary] = field(default_factory=list)
    table: list[dict] = field(default_factory=list)  # per-bus comparison

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def summarize_central(res: EstimationResult) -> dict:
    return {"converged": res.converged, "iterations": res.iterations,
            "objective": res.objective, "condition": res.condition}


def summarize_run(label: str, res: DistributedResult, central: EstimationResult) -> RunSummary:
    st = res.ledger_stats
    return RunSummary(
        label=label, converged=res.converged, iterations=res.iterations,
        objective=res.objective, distributed_objective=res.distributed_objective,
        objective_error_pct=objective_error_pct(res.objective, central.objective),
        max_abs_dv=float(np.max(np.abs(res.state.v - central.state.v))),
        max_abs_dtheta=float(np.max(np.abs(res.state.theta - central.state.theta))),
        transactions=st.get("transactions", 0), blocks=st.get("blocks", 0),
        total_gas=st.get("total_gas", 0), payload_bytes=st.get("payload_bytes", 0),
        rejected=res.rejected, chain_hash=res.chain_hash,
    )


def comparison_table(net: NetworkModel, central: EstimationResult,
                     runs: dict[str, DistributedResult]) -> list[dict]:
    rows = []
    for k, bus in enumerate(net.bus_ids):
        row = {"bus": bus, "v_central": float(central.state.v[k]),
               "theta_central_deg": float(np.rad2deg(central.state.theta[k]))}
        for name, r in runs.items():
            row[f"v_{name}"] = float(r.state.v[k])
            row[f"theta_{name}_deg"] = float(np.rad2deg(r.state.theta[k]))
        rows.append(row)
    return rows


def write_table_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        keys = list(rows[0])
        wr.writerow(keys)
        for r in rows:
            wr.writerow([r[k] if k == "bus" else f"{r[k]:.10f}" for k in keys])


def format_summary(report: ScenarioReport) -> str:
    c = report.central
    lines = [f"centralized: converged={c['converged']} iterations={c['iterations']} "
             f"objective={c['objective']:.6f}"]
    for r in report.runs:
        lines.append(
            f"{r.label}: converged={r.converged} iterations={r.iterations} "
            f"objective={r.objective:.6f} distributed_objective={r.distributed_objective:.6f} "
            f"error={r.objective_error_pct:.4f}% max|dv|={r.max_abs_dv:.2e} "
            f"max|dtheta|={r.max_abs_dtheta:.2e} tx={r.transactions} gas={r.total_gas}")
    return "\n".join(lines)

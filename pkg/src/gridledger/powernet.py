"""Network model, measurement descriptors and the AC measurement functions.

All electrical quantities are per unit on the case's MVA base; angles are
radians.  Transformer taps and phase shifters are not modelled, so the bus
admittance matrix is symmetric.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

KINDS = ("Vmag", "Pinj", "Qinj", "Pflow", "Qflow")
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}
VMAG, PINJ, QINJ, PFLOW, QFLOW = range(5)

SLACK, PV, PQ = 3, 2, 1


class CaseFormatError(ValueError):
    """Raised for malformed or inconsistent case / plan / state files."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float  # total line-charging susceptance

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Buses, branches and the bus admittance matrix ``G + jB``."""

    bus_ids: tuple[int, ...]
    bus_types: tuple[int, ...]
    shunt_g: np.ndarray
    shunt_b: np.ndarray
    branches: tuple[Branch, ...]
    base_mva: float = 100.0
    # stored power-flow solution from the case file, if any (v, theta rad)
    stored_v: np.ndarray | None = None
    stored_theta: np.ndarray | None = None
    G: np.ndarray = field(init=False, repr=False)
    B: np.ndarray = field(init=False, repr=False)
    _index: dict = field(init=False, repr=False)
    _branch_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        index = {}
        for k, bid in enumerate(self.bus_ids):
            if bid in index:
                raise CaseFormatError(f"duplicate bus id {bid}")
            index[bid] = k
        if sum(t == SLACK for t in self.bus_types) != 1:
            raise CaseFormatError("exactly one slack bus required")
        branch_index: dict[tuple[int, int], int] = {}
        for m, br in enumerate(self.branches):
            for end in (br.from_bus, br.to_bus):
                if end not in index:
                    raise CaseFormatError(f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}")
            if br.from_bus == br.to_bus:
                raise CaseFormatError(f"branch {br.from_bus}-{br.to_bus} is a self loop")
            branch_index.setdefault((br.from_bus, br.to_bus), m)
            branch_index.setdefault((br.to_bus, br.from_bus), m)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_branch_index", branch_index)
        Y = build_admittance(len(self.bus_ids), index, self.branches,
                             np.asarray(self.shunt_g), np.asarray(self.shunt_b))
        G, B = Y.real.copy(), Y.imag.copy()
        for arr in (G, B, self.shunt_g, self.shunt_b):
            arr.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "B", B)

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def slack(self) -> int:
        """Zero-based index of the slack bus."""
        return self.bus_types.index(SLACK)

    @property
    def slack_id(self) -> int:
        return self.bus_ids[self.slack]

    def index(self, bus_id: int) -> int:
        try:
            return self._index[bus_id]
        except KeyError:
            raise KeyError(f"unknown bus {bus_id}") from None

    def has_bus(self, bus_id: int) -> bool:
        return bus_id in self._index

    def branch(self, i: int, j: int) -> Branch:
        try:
            return self.branches[self._branch_index[(i, j)]]
        except KeyError:
            raise KeyError(f"unknown branch {i}-{j}") from None

    def has_branch(self, i: int, j: int) -> bool:
        return (i, j) in self._branch_index

    def neighbors(self, bus_id: int) -> list[int]:
        out = []
        for br in self.branches:
            if br.from_bus == bus_id:
                out.append(br.to_bus)
            elif br.to_bus == bus_id:
                out.append(br.from_bus)
        return sorted(set(out))

    def stored_state(self) -> StateVector:
        if self.stored_v is None:
            raise ValueError("case carries no stored solution")
        theta = np.array(self.stored_theta, dtype=float)
        theta -= theta[self.slack]
        return StateVector(np.array(self.stored_v, dtype=float), theta, self.slack)


def build_admittance(n: int, index: dict, branches: Iterable[Branch],
                     shunt_g: np.ndarray, shunt_b: np.ndarray) -> np.ndarray:
    """Assemble the complex bus admittance matrix from pi-model branches."""
    Y = np.zeros((n, n), dtype=complex)
    for br in branches:
        i, j = index[br.from_bus], index[br.to_bus]
        y = br.series_admittance
        half = 0.5j * br.b
        Y[i, i] += y + half
        Y[j, j] += y + half
        Y[i, j] -= y
        Y[j, i] -= y
    Y[np.diag_indices(n)] += shunt_g + 1j * shunt_b
    return Y


@dataclass(frozen=True, eq=False)
class StateVector:
    """Per-bus voltage magnitude ``v`` and angle ``theta``."""

    v: np.ndarray
    theta: np.ndarray
    slack: int = 0

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        theta = np.array(self.theta, dtype=float)
        if v.shape != theta.shape or v.ndim != 1:
            raise ValueError("v and theta must be 1-D arrays of equal length")
        if np.any(v <= 0):
            raise ValueError("voltage magnitudes must be positive")
        v.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def flat(cls, n: int, slack: int = 0) -> StateVector:
        return cls(np.ones(n), np.zeros(n), slack)

    def __len__(self):
        return len(self.v)

    def free_vector(self) -> np.ndarray:
        """State as ``[theta without slack, v]``."""
        return np.concatenate([np.delete(self.theta, self.slack), self.v])

    @classmethod
    def from_free(cls, x: np.ndarray, slack: int) -> StateVector:
        n = (len(x) + 1) // 2
        theta = np.insert(x[: n - 1], slack, 0.0)
        return cls(x[n - 1:], theta, slack)


@dataclass(frozen=True)
class Measurement:
    """One measurement: kind, location, value and standard deviation.

    ``location`` is a bus id for Vmag/Pinj/Qinj and a directed ``(from, to)``
    bus pair for flows.
    """

    kind: str
    location: int | tuple[int, int]
    value: float
    sigma: float

    def __post_init__(self):
        if self.kind not in _KIND_CODE:
            raise ValueError(f"unknown measurement kind {self.kind!r}")
        if not self.sigma > 0:
            raise ValueError("measurement sigma must be positive")
        if self.is_flow:
            loc = tuple(int(b) for b in self.location)
            if len(loc) != 2:
                raise ValueError("flow location must be a (from, to) pair")
            object.__setattr__(self, "location", loc)
        else:
            object.__setattr__(self, "location", int(self.location))

    @property
    def weight(self) -> float:
        return self.sigma ** -2

    @property
    def is_flow(self) -> bool:
        return self.kind in ("Pflow", "Qflow")

    @property
    def buses(self) -> tuple[int, ...]:
        return self.location if self.is_flow else (self.location,)

    def label(self) -> str:
        loc = "-".join(map(str, self.location)) if self.is_flow else str(self.location)
        return f"{self.kind} {loc}"


@dataclass(frozen=True)
class MeasurementSet:
    items: tuple[Measurement, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, k):
        return self.items[k]

    @property
    def z(self) -> np.ndarray:
        return np.array([m.value for m in self.items])

    @property
    def weights(self) -> np.ndarray:
        return np.array([m.weight for m in self.items])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([m.sigma for m in self.items])

    def subset(self, idx: Sequence[int]) -> MeasurementSet:
        return MeasurementSet(tuple(self.items[k] for k in idx))

    def scaled_weights(self, c: float) -> MeasurementSet:
        s = c ** -0.5
        return MeasurementSet(tuple(Measurement(m.kind, m.location, m.value, m.sigma * s)
                                    for m in self.items))


def validate_location(net: NetworkModel, kind: str, location) -> None:
    if kind in ("Pflow", "Qflow"):
        i, j = location
        if not net.has_branch(i, j):
            raise KeyError(f"unknown branch {i}-{j}")
    elif not net.has_bus(location):
        raise KeyError(f"unknown bus {location}")


class MeasurementFunction:
    """Vectorised ``f(x)`` and its Jacobian for a fixed measurement list.

    Jacobian columns are ``[theta_0..theta_{n-1}, v_0..v_{n-1}]`` over all
    buses; callers drop or select columns as needed.
    """

    def __init__(self, net: NetworkModel, descriptors: Sequence[Measurement]):
        self.net = net
        m = len(descriptors)
        self.m = m
        self.kind = np.empty(m, dtype=int)
        self.bus = np.zeros(m, dtype=int)
        self.to = np.zeros(m, dtype=int)
        self.g_off = np.zeros(m)
        self.b_off = np.zeros(m)
        self.bs = np.zeros(m)
        for r, d in enumerate(descriptors):
            validate_location(net, d.kind, d.location)
            self.kind[r] = _KIND_CODE[d.kind]
            if d.is_flow:
                i, j = d.location
                br = net.branch(i, j)
                y = br.series_admittance
                # the branch's own contribution to the off-diagonal Y_ij
                self.g_off[r], self.b_off[r] = -y.real, -y.imag
                self.bs[r] = br.b
                self.bus[r], self.to[r] = net.index(i), net.index(j)
            else:
                self.bus[r] = net.index(d.location)
        self._rows = {c: np.flatnonzero(self.kind == c) for c in range(5)}
        self._flow_rows = np.flatnonzero(self.kind >= PFLOW)

    def _injections(self, v, theta):
        G, B = self.net.G, self.net.B
        dth = theta[:, None] - theta[None, :]
        c, s = np.cos(dth), np.sin(dth)
        vv = v[:, None] * v[None, :]
        P = (vv * (G * c + B * s)).sum(axis=1)
        Q = (vv * (G * s - B * c)).sum(axis=1)
        return P, Q, c, s, vv

    def value(self, v: np.ndarray, theta: np.ndarray) -> np.ndarray:
        out = np.empty(self.m)
        rows = self._rows
        out[rows[VMAG]] = v[self.bus[rows[VMAG]]]
        if len(rows[PINJ]) or len(rows[QINJ]):
            P, Q, *_ = self._injections(v, theta)
            out[rows[PINJ]] = P[self.bus[rows[PINJ]]]
            out[rows[QINJ]] = Q[self.bus[rows[QINJ]]]
        fr = self._flow_rows
        if len(fr):
            out[fr] = self._flows(v, theta, fr)[0]
        return out

    def _flows(self, v, theta, fr):
        i, j = self.bus[fr], self.to[fr]
        G, B, bs = self.g_off[fr], self.b_off[fr], self.bs[fr]
        vi, vj = v[i], v[j]
        t = theta[i] - theta[j]
        c, s = np.cos(t), np.sin(t)
        is_p = self.kind[fr] == PFLOW
        p = vi * vj * (G * c + B * s) - G * vi ** 2
        q = vi * vj * (G * s - B * c) + vi ** 2 * (B - bs / 2)
        val = np.where(is_p, p, q)
        # partials: d/dtheta_i, d/dv_i, d/dv_j  (d/dtheta_j = -d/dtheta_i)
        dth_p = vi * vj * (-G * s + B * c)
        dth_q = vi * vj * (G * c + B * s)
        dvi_p = vj * (G * c + B * s) - 2 * G * vi
        dvi_q = vj * (G * s - B * c) + 2 * vi * (B - bs / 2)
        dvj_p = vi * (G * c + B * s)
        dvj_q = vi * (G * s - B * c)
        return (val, np.where(is_p, dth_p, dth_q), np.where(is_p, dvi_p, dvi_q),
                np.where(is_p, dvj_p, dvj_q))

    def jacobian(self, v: np.ndarray, theta: np.ndarray) -> np.ndarray:
        n = self.net.n_bus
        H = np.zeros((self.m, 2 * n))
        rows = self._rows
        r = rows[VMAG]
        H[r, n + self.bus[r]] = 1.0
        if len(rows[PINJ]) or len(rows[QINJ]):
            G, B = self.net.G, self.net.B
            P, Q, c, s, vv = self._injections(v, theta)
            Gd, Bd = np.diag(G), np.diag(B)
            dP_dth = vv * (G * s - B * c)
            dP_dth[np.diag_indices(n)] = -Q - Bd * v ** 2
            dP_dv = v[:, None] * (G * c + B * s)
            dP_dv[np.diag_indices(n)] = P / v + Gd * v
            dQ_dth = -vv * (G * c + B * s)
            dQ_dth[np.diag_indices(n)] = P - Gd * v ** 2
            dQ_dv = v[:, None] * (G * s - B * c)
            dQ_dv[np.diag_indices(n)] = Q / v - Bd * v
            for code, dth, dv in ((PINJ, dP_dth, dP_dv), (QINJ, dQ_dth, dQ_dv)):
                r = rows[code]
                H[r, :n] = dth[self.bus[r]]
                H[r, n:] = dv[self.bus[r]]
        fr = self._flow_rows
        if len(fr):
            _, dth, dvi, dvj = self._flows(v, theta, fr)
            i, j = self.bus[fr], self.to[fr]
            H[fr, i] = dth
            H[fr, j] = -dth
            H[fr, n + i] = dvi
            H[fr, n + j] = dvj
        return H


def _check_state(state: StateVector, net: NetworkModel):
    if len(state) != net.n_bus:
        raise ValueError(f"state has {len(state)} buses, network has {net.n_bus}")


def injection(state: StateVector, bus: int, net: NetworkModel) -> tuple[float, float]:
    """Active and reactive injection at ``bus``."""
    _check_state(state, net)
    i = net.index(bus)
    v, th = state.v, state.theta
    t = th[i] - th
    P = float(np.sum(v[i] * v * (net.G[i] * np.cos(t) + net.B[i] * np.sin(t))))
    Q = float(np.sum(v[i] * v * (net.G[i] * np.sin(t) - net.B[i] * np.cos(t))))
    return P, Q


def flow(state: StateVector, branch: tuple[int, int], net: NetworkModel) -> tuple[float, float]:
    """Active and reactive flow leaving ``branch[0]`` toward ``branch[1]``."""
    _check_state(state, net)
    i, j = branch
    br = net.branch(i, j)
    y = br.series_admittance
    G, B = -y.real, -y.imag
    a, b = net.index(i), net.index(j)
    vi, vj = state.v[a], state.v[b]
    t = state.theta[a] - state.theta[b]
    P = vi * vj * (G * np.cos(t) + B * np.sin(t)) - G * vi ** 2
    Q = vi * vj * (G * np.sin(t) - B * np.cos(t)) + vi ** 2 * (B - br.b / 2)
    return float(P), float(Q)


def measurement_value(state: StateVector, m: Measurement, net: NetworkModel) -> float:
    validate_location(net, m.kind, m.location)
    if m.kind == "Vmag":
        return float(state.v[net.index(m.location)])
    if m.kind in ("Pinj", "Qinj"):
        P, Q = injection(state, m.location, net)
        return P if m.kind == "Pinj" else Q
    P, Q = flow(state, m.location, net)
    return P if m.kind == "Pflow" else Q


def measurement_jacobian(state: StateVector, ms: Sequence[Measurement],
                         net: NetworkModel) -> np.ndarray:
    """Analytic ``df/d(theta_free, v)``; the slack angle column is dropped."""
    _check_state(state, net)
    H = MeasurementFunction(net, list(ms)).jacobian(state.v, state.theta)
    return np.delete(H, net.slack, axis=1)


def evaluate(state: StateVector, ms: Sequence[Measurement], net: NetworkModel) -> np.ndarray:
    _check_state(state, net)
    return MeasurementFunction(net, list(ms)).value(state.v, state.theta)


# ---------------------------------------------------------------------------
# measurement plans and synthetic data


@dataclass(frozen=True)
class PlanEntry:
    kind: str
    location: int | tuple[int, int]
    sigma: float | None = None


def default_plan(net: NetworkModel) -> list[PlanEntry]:
    """All voltage magnitudes, P/Q injections at every bus, P/Q from-end flows."""
    plan = [PlanEntry("Vmag", b) for b in net.bus_ids]
    plan += [PlanEntry(k, b) for k in ("Pinj", "Qinj") for b in net.bus_ids]
    plan += [PlanEntry(k, (br.from_bus, br.to_bus))
             for k in ("Pflow", "Qflow") for br in net.branches]
    return plan


def generate_measurements(true_state: StateVector, plan: Sequence[PlanEntry], sigma: float,
                          rng_seed: int, net: NetworkModel,
                          weight_sigma: float | None = None) -> MeasurementSet:
    """Draw ``z = f(x_true) + e`` with ``e ~ N(0, sigma^2)`` independently.

    ``weight_sigma`` sets the standard deviation recorded on the descriptors
    (hence the weights); it defaults to ``sigma``, or to 0.01 when the draw is
    noiseless.  Plan entries carrying their own sigma override both.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    for p in plan:
        validate_location(net, p.kind, p.location)
    if weight_sigma is None:
        weight_sigma = sigma if sigma > 0 else 1e-2
    sig = np.array([p.sigma if p.sigma is not None else sigma for p in plan])
    wsig = [p.sigma if p.sigma is not None else weight_sigma for p in plan]
    probe = [Measurement(p.kind, p.location, 0.0, 1.0) for p in plan]
    exact = evaluate(true_state, probe, net)
    rng = np.random.default_rng(rng_seed)
    noise = rng.standard_normal(len(plan)) * sig
    z = exact + noise
    return MeasurementSet(tuple(Measurement(p.kind, p.location, float(zi), float(ws))
                                for p, zi, ws in zip(plan, z, wsig)))


# ---------------------------------------------------------------------------
# file formats

_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")


def _strip_comment(line: str) -> str:
    return line.split("%", 1)[0].strip()


def parse_case(text: str) -> NetworkModel:
    """Parse a MATPOWER-style case (``mpc.baseMVA``, ``mpc.bus``, ``mpc.branch``)."""
    base_mva = None
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        if current is not None:
            if line.startswith("]"):
                current = None
                continue
            body = line.rstrip(";").rstrip()
            closes = body.endswith("]")
            body = body.rstrip("]").rstrip().rstrip(";")
            if body:
                try:
                    row = [float(tok) for tok in body.replace(",", " ").split()]
                except ValueError:
                    raise CaseFormatError(f"non-numeric entry in {current} table", lineno) from None
                tables[current].append((lineno, row))
            if closes:
                current = None
            continue
        mt = _ASSIGN.match(line)
        if not mt:
            if line.startswith("function"):
                continue
            raise CaseFormatError(f"unrecognised statement {line!r}", lineno)
        name, rhs = mt.group(1), mt.group(2).strip()
        if rhs.startswith("["):
            tables[name] = []
            rest = rhs[1:].strip()
            if rest.startswith("]"):
                continue
            current = name
            if rest:
                # single-line table
                for chunk in rest.split(";"):
                    chunk = chunk.strip().rstrip("]").strip()
                    if chunk:
                        tables[name].append((lineno, [float(t) for t in chunk.split()]))
                if rest.rstrip(";").endswith("]"):
                    current = None
        elif name == "baseMVA":
            try:
                base_mva = float(rhs.rstrip(";"))
            except ValueError:
                raise CaseFormatError("baseMVA is not a number", lineno) from None
    if current is not None:
        raise CaseFormatError(f"unterminated {current} table")
    if base_mva is None:
        raise CaseFormatError("missing mpc.baseMVA")
    if "bus" not in tables or "branch" not in tables:
        raise CaseFormatError("case needs both mpc.bus and mpc.branch tables")

    ids, types, gs, bs, vm, va = [], [], [], [], [], []
    seen: dict[int, int] = {}
    for lineno, row in tables["bus"]:
        if len(row) < 6:
            raise CaseFormatError("bus row needs at least 6 columns", lineno)
        bid = int(row[0])
        if bid in seen:
            raise CaseFormatError(f"duplicate bus id {bid}", lineno)
        seen[bid] = lineno
        ids.append(bid)
        types.append(int(row[1]))
        gs.append(row[4] / base_mva)
        bs.append(row[5] / base_mva)
        vm.append(row[7] if len(row) > 8 else 1.0)
        va.append(np.deg2rad(row[8]) if len(row) > 8 else 0.0)
    nslack = sum(t == SLACK for t in types)
    if nslack == 0:
        raise CaseFormatError("no slack bus (type 3) in bus table")
    if nslack > 1:
        raise CaseFormatError("more than one slack bus in bus table")

    branches = []
    for lineno, row in tables["branch"]:
        if len(row) < 5:
            raise CaseFormatError("branch row needs at least 5 columns", lineno)
        f, t = int(row[0]), int(row[1])
        for end in (f, t):
            if end not in seen:
                raise CaseFormatError(f"branch {f}-{t} has dangling endpoint {end}", lineno)
        if row[2] == 0 and row[3] == 0:
            raise CaseFormatError(f"branch {f}-{t} has zero impedance", lineno)
        branches.append(Branch(f, t, row[2], row[3], row[4]))

    return NetworkModel(tuple(ids), tuple(types), np.array(gs), np.array(bs), tuple(branches),
                        base_mva, np.array(vm), np.array(va))


def load_case(case_file: str | Path) -> NetworkModel:
    return parse_case(Path(case_file).read_text())


def ieee14() -> NetworkModel:
    """The shipped IEEE 14-bus case."""
    return parse_case(resources.files("gridledger.data").joinpath("case14.m").read_text())


def data_path(name: str) -> Path:
    return Path(str(resources.files("gridledger.data").joinpath(name)))


def _parse_location(kind: str, tok: str):
    if kind in ("Pflow", "Qflow"):
        parts = re.split(r"[-,:]", tok)
        if len(parts) != 2:
            raise ValueError(f"flow location {tok!r} must look like i-j")
        return int(parts[0]), int(parts[1])
    return int(tok)


def parse_plan(text: str, net: NetworkModel) -> list[PlanEntry]:
    """Parse ``KIND LOCATION [SIGMA]`` lines; ``#`` starts a comment."""
    plan = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) not in (2, 3) or toks[0] not in _KIND_CODE:
            raise CaseFormatError(f"expected 'KIND LOCATION [SIGMA]', got {line!r}", lineno)
        try:
            loc = _parse_location(toks[0], toks[1])
            sig = float(toks[2]) if len(toks) == 3 else None
        except ValueError as exc:
            raise CaseFormatError(str(exc), lineno) from None
        if sig is not None and not sig > 0:
            raise CaseFormatError("sigma must be positive", lineno)
        try:
            validate_location(net, toks[0], loc)
        except KeyError as exc:
            raise CaseFormatError(exc.args[0], lineno) from None
        plan.append(PlanEntry(toks[0], loc, sig))
    return plan


def load_plan(path: str | Path, net: NetworkModel) -> list[PlanEntry]:
    return parse_plan(Path(path).read_text(), net)


def parse_state(text: str, net: NetworkModel) -> StateVector:
    """Parse ``bus_id v theta_rad`` lines covering every bus exactly once."""
    v = np.full(net.n_bus, np.nan)
    th = np.full(net.n_bus, np.nan)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 3:
            raise CaseFormatError("expected 'bus_id v theta_rad'", lineno)
        try:
            bid, vm, ang = int(toks[0]), float(toks[1]), float(toks[2])
        except ValueError:
            raise CaseFormatError(f"malformed state line {line!r}", lineno) from None
        if not net.has_bus(bid):
            raise CaseFormatError(f"unknown bus {bid}", lineno)
        k = net.index(bid)
        if not np.isnan(v[k]):
            raise CaseFormatError(f"bus {bid} listed twice", lineno)
        v[k], th[k] = vm, ang
    missing = [b for b, x in zip(net.bus_ids, v) if np.isnan(x)]
    if missing:
        raise CaseFormatError(f"state file misses buses {missing}")
    return StateVector(v, th - th[net.slack], net.slack)


def load_state(path: str | Path, net: NetworkModel) -> StateVector:
    return parse_state(Path(path).read_text(), net)

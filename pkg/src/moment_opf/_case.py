import json
import logging
import math

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import networkx as nx
import numpy as np
from pydantic import ValidationError
from scipy.sparse import csr_matrix

from ._config import MomentOpfConfig
from ._errors import CaseFormatError, CaseValidationError, DisconnectedNetworkError, ModifierError
from ._models import Branch, BusType, CaseModifiers, NetworkCase


logger = logging.getLogger("mopf")

MIN_RESISTANCE = 1e-4

_BUS_TYPES = {1: BusType.PQ, 2: BusType.PV, 3: BusType.SLACK}
_SECTIONS = ("bus", "gen", "branch", "gencost")
_MIN_COLUMNS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}

_NAMED_VARIANTS = {
    "case14Q": ("case14", CaseModifiers(load_scale=0.5)),
    "case14L": ("case14", CaseModifiers(uniform_flow_limit=25.0)),
    "case57Q": ("case57", CaseModifiers(load_scale=0.25, qmin_floor=-10.0)),
    "case57L": ("case57", CaseModifiers(uniform_flow_limit=77.0)),
}


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Complex bus admittance matrix Y = G + jB in p.u., stored sparse."""

    Y: csr_matrix

    @property
    def G(self) -> csr_matrix:
        return self.Y.real.tocsr()

    @property
    def B(self) -> csr_matrix:
        return self.Y.imag.tocsr()

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    def dense(self) -> np.ndarray:
        return self.Y.toarray()


def branch_stamps(branch: Branch) -> tuple[complex, complex, complex, complex]:
    """Return (Yff, Yft, Ytf, Ytt) of one pi-model branch with its ideal transformer."""
    ys = 1.0 / complex(branch.r, branch.x)
    tap = branch.tau * complex(math.cos(branch.theta), math.sin(branch.theta))
    shunt = complex(branch.g_sh, branch.b) / 2
    ytt = ys + shunt
    yff = (ys + shunt) / (tap * tap.conjugate()).real
    yft = -ys / tap.conjugate()
    ytf = -ys / tap
    return yff, yft, ytf, ytt


def build_admittance(case: NetworkCase) -> AdmittanceMatrix:
    """Assemble Y from branch stamps plus bus shunts on the diagonal."""
    n = case.n
    pos = case.positions()
    rows, cols, vals = [], [], []
    for branch in case.branches:
        f, t = pos[branch.from_bus], pos[branch.to_bus]
        yff, yft, ytf, ytt = branch_stamps(branch)
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [yff, yft, ytf, ytt]
    for k, bus in enumerate(case.buses):
        if bus.gs or bus.bs:
            rows.append(k)
            cols.append(k)
            vals.append(complex(bus.gs, bus.bs) / case.base_mva)
    # duplicate (row, col) pairs are summed on construction
    Y = csr_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(n, n))
    Y.sum_duplicates()
    return AdmittanceMatrix(Y=Y)


def parse_case(text: str, name: str | None = None) -> NetworkCase:
    """Parse an archive-format (``mpc.*``) or native JSON case.

    Args:
        text: File contents.
        name: Case name used when the text does not carry one.

    Returns:
        NetworkCase: Normalized case (tau 0 -> 1, minimum resistance,
        angles in radians, one aggregated generator per bus).

    Raises:
        CaseFormatError: The text cannot be parsed; carries line and field.
        CaseValidationError: The parsed case violates a model invariant.
    """
    if text.lstrip().startswith("{"):
        raw = _read_json(text)
    else:
        raw = _read_archive(text)
    if name is not None and not raw.get("name"):
        raw["name"] = name
    raw = _normalize(raw)
    try:
        case = NetworkCase.model_validate(raw)
    except ValidationError as e:
        err = e.errors()[0]
        field = ".".join(str(part) for part in err["loc"])
        if err["type"] == "value_error":
            raise CaseValidationError(err["msg"].removeprefix("Value error, ")) from e
        raise CaseFormatError(err["msg"], field=field or None) from e
    _check_connected(case)
    return case


def serialize_case(case: NetworkCase) -> str:
    """Native JSON echo of a case; ``parse_case`` reads it back unchanged."""
    return case.model_dump_json(by_alias=True, indent=2)


def load_case(path: str | Path) -> NetworkCase:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise CaseFormatError(f"cannot read case file {path}: {e.strerror}") from e
    return parse_case(text, name=path.stem)


def bundled_case_names() -> list[str]:
    names = {p.name.removesuffix(".m") for p in resources.files("moment_opf").joinpath("cases").iterdir()
             if p.name.endswith(".m")}
    names.update(_NAMED_VARIANTS)
    return sorted(names, key=lambda s: (len(s), s))


def named_modifiers(name: str) -> tuple[str, CaseModifiers]:
    """Base case and modifiers of a named variant such as ``case14Q``."""
    if name in _NAMED_VARIANTS:
        return _NAMED_VARIANTS[name]
    return name, CaseModifiers()


def load_bundled_case(name: str) -> NetworkCase:
    """Load a case shipped with the package, or from ``MOPF_CASE_DIR``.

    Named variants are built from their base case with ``apply_modifiers``
    and carry the variant name.
    """
    base, mods = named_modifiers(name)
    text = None
    if MomentOpfConfig.case_dir:
        for suffix in (".m", ".json"):
            candidate = Path(MomentOpfConfig.case_dir) / f"{base}{suffix}"
            if candidate.is_file():
                text = candidate.read_text()
                break
    if text is None:
        resource = resources.files("moment_opf").joinpath("cases", f"{base}.m")
        if not resource.is_file():
            raise CaseFormatError(f"no bundled case named {name!r}")
        text = resource.read_text()
    case = parse_case(text, name=base)
    if base != name:
        case = apply_modifiers(case, mods).model_copy(update={"name": name})
    return case


def apply_modifiers(case: NetworkCase, mods: CaseModifiers) -> NetworkCase:
    """Return a copy of ``case`` with loads, limits and bounds edited.

    Raises:
        ModifierError: Voltage overrides would leave V_min above V_max.
    """
    if mods.vmin is not None and mods.vmax is not None and mods.vmin > mods.vmax:
        raise ModifierError(f"vmin override {mods.vmin} exceeds vmax override {mods.vmax}")

    buses = []
    for bus in case.buses:
        vmin = bus.vmin if mods.vmin is None else mods.vmin
        vmax = bus.vmax if mods.vmax is None else mods.vmax
        if vmin > vmax:
            raise ModifierError(f"bus {bus.id}: vmin {vmin} exceeds vmax {vmax} after override")
        buses.append(
            bus.model_copy(
                update={
                    "pd": bus.pd * mods.load_scale,
                    "qd": bus.qd * mods.load_scale,
                    "vmin": vmin,
                    "vmax": vmax,
                }
            )
        )

    generators = []
    for gen in case.generators:
        if mods.qmin_floor is not None:
            qmin = max(gen.qmin, mods.qmin_floor)
            if qmin > gen.qmax:
                raise ModifierError(f"generator at bus {gen.bus}: qmin floor {qmin} exceeds qmax {gen.qmax}")
            gen = gen.model_copy(update={"qmin": qmin})
        generators.append(gen)

    branches = []
    for branch in case.branches:
        s_max = branch.s_max
        if mods.uniform_flow_limit is not None:
            s_max = mods.uniform_flow_limit
        elif mods.flow_limit_scale is not None:
            s_max = s_max * mods.flow_limit_scale
        branches.append(branch.model_copy(update={"s_max": s_max}))

    return case.model_copy(
        update={"buses": tuple(buses), "generators": tuple(generators), "branches": tuple(branches)}
    )


def _read_json(text: str) -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise CaseFormatError(e.msg, line=e.lineno) from e
    if not isinstance(raw, dict):
        raise CaseFormatError("case JSON must be an object", line=1)
    return raw


def _read_archive(text: str) -> dict:
    """Read the ``mpc.*`` tables line by line, keeping line numbers for errors."""
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    raw: dict = {}
    lines = text.splitlines()
    linenum = 0
    while linenum < len(lines):
        line = lines[linenum].split("%", 1)[0].strip()
        linenum += 1
        if line.startswith("function"):
            _, _, fname = line.partition("=")
            raw["name"] = fname.strip().rstrip(";") or None
            continue
        if not line.startswith("mpc."):
            continue
        key, _, value = line[4:].partition("=")
        key = key.strip()
        value = value.strip()
        if key == "baseMVA":
            try:
                raw["base_mva"] = float(value.rstrip(";"))
            except ValueError:
                raise CaseFormatError(f"invalid baseMVA {value!r}", line=linenum, field="baseMVA")
            continue
        if key not in _SECTIONS:
            continue
        if not value.startswith("["):
            raise CaseFormatError("expected '[' to open table", line=linenum, field=key)
        rows = []
        closed = value.rstrip(";").endswith("]") and value != "["
        body = value[1:].rstrip(";").rstrip("]") if closed else value[1:]
        pending = [(linenum, body)]
        while not closed:
            if linenum >= len(lines):
                raise CaseFormatError("table is not closed with '];'", line=linenum, field=key)
            content = lines[linenum].split("%", 1)[0].strip()
            linenum += 1
            if content.startswith("]"):
                closed = True
                break
            if content.endswith("];"):
                content = content[:-2]
                closed = True
            pending.append((linenum, content))
        for row_line, content in pending:
            for chunk in content.split(";"):
                chunk = chunk.strip()
                if not chunk:
                    continue
                row_index = len(rows)
                values = []
                for col, token in enumerate(chunk.replace(",", " ").split()):
                    try:
                        values.append(float(token))
                    except ValueError:
                        raise CaseFormatError(
                            f"invalid number {token!r}", line=row_line, field=f"{key}[{row_index}][{col}]"
                        )
                if len(values) < _MIN_COLUMNS[key]:
                    raise CaseFormatError(
                        f"expected at least {_MIN_COLUMNS[key]} columns, got {len(values)}",
                        line=row_line,
                        field=f"{key}[{row_index}]",
                    )
                rows.append((row_line, values))
        tables[key] = rows

    for key in ("bus", "gen", "branch"):
        if key not in tables:
            raise CaseFormatError(f"missing mpc.{key} table", field=key)
    raw.setdefault("base_mva", 100.0)

    buses = []
    for row_line, row in tables["bus"]:
        code = int(row[1])
        if code == 4:
            raise CaseValidationError(f"bus {int(row[0])} is isolated (type 4); multi-island cases are not supported")
        if code not in _BUS_TYPES:
            raise CaseFormatError(f"unknown bus type {code}", line=row_line, field="bus.type")
        buses.append(
            {
                "id": int(row[0]),
                "type": _BUS_TYPES[code],
                "pd": row[2],
                "qd": row[3],
                "gs": row[4],
                "bs": row[5],
                "vmax": row[11],
                "vmin": row[12],
            }
        )

    costs = tables.get("gencost", [])
    generators = []
    for g, (row_line, row) in enumerate(tables["gen"]):
        if row[7] <= 0:
            continue
        gen = {"bus": int(row[0]), "qmax": row[3], "qmin": row[4], "pmax": row[8], "pmin": row[9]}
        if g < len(costs):
            gen.update(_read_cost(*costs[g]))
        generators.append(gen)

    branches = []
    for row_line, row in tables["branch"]:
        if row[10] <= 0:
            continue
        branches.append(
            {
                "from": int(row[0]),
                "to": int(row[1]),
                "r": row[2],
                "x": row[3],
                "b": row[4],
                "s_max": row[5],
                "tau": row[8],
                "theta": math.radians(row[9]),
            }
        )

    raw.update({"buses": buses, "generators": generators, "branches": branches})
    return raw


def _read_cost(row_line: int, row: list[float]) -> dict:
    model, ncoef = int(row[0]), int(row[3])
    if model == 1:
        raise CaseValidationError(f"piecewise-linear cost on line {row_line} is not supported")
    if model != 2:
        raise CaseFormatError(f"unknown cost model {model}", line=row_line, field="gencost.model")
    coefs = row[4 : 4 + ncoef]
    if len(coefs) < ncoef:
        raise CaseFormatError(f"expected {ncoef} cost coefficients", line=row_line, field="gencost")
    # highest order first; pad to (c2, c1, c0)
    coefs = [0.0] * max(0, 3 - ncoef) + list(coefs)
    if any(c != 0 for c in coefs[:-3]):
        raise CaseValidationError(f"cost of degree {ncoef - 1} on line {row_line}; at most quadratic is supported")
    c2, c1, c0 = coefs[-3:]
    return {"c2": c2, "c1": c1, "c0": c0}


def _normalize(raw: dict) -> dict:
    branches = []
    for k, branch in enumerate(raw.get("branches", [])):
        if not isinstance(branch, dict):
            raise CaseFormatError("branch entry must be an object", field=f"branches.{k}")
        branch = dict(branch)
        if not branch.get("tau"):
            branch["tau"] = 1.0
        r = branch.get("r", 0.0)
        if isinstance(r, (int, float)) and r < MIN_RESISTANCE:
            logger.debug("raising resistance of branch %s-%s to %g", branch.get("from"), branch.get("to"), MIN_RESISTANCE)
            branch["r"] = MIN_RESISTANCE
        branches.append(branch)

    grouped: dict = {}
    for k, gen in enumerate(raw.get("generators", [])):
        if not isinstance(gen, dict):
            raise CaseFormatError("generator entry must be an object", field=f"generators.{k}")
        grouped.setdefault(gen.get("bus"), []).append(gen)
    generators = []
    for bus, gens in grouped.items():
        if len(gens) == 1:
            generators.append(gens[0])
            continue
        m = len(gens)
        logger.warning("aggregating %d generators at bus %s into one equivalent unit", m, bus)
        total = {key: sum(float(g.get(key, 0.0)) for g in gens) for key in ("pmin", "pmax", "qmin", "qmax")}
        # equal dispatch: each unit produces P/m
        total["c2"] = sum(float(g.get("c2", 0.0)) for g in gens) / m**2
        total["c1"] = sum(float(g.get("c1", 0.0)) for g in gens) / m
        total["c0"] = sum(float(g.get("c0", 0.0)) for g in gens)
        total["bus"] = bus
        generators.append(total)

    raw = dict(raw)
    raw["branches"] = branches
    raw["generators"] = generators
    return raw


def _check_connected(case: NetworkCase):
    graph = nx.Graph()
    graph.add_nodes_from(bus.id for bus in case.buses)
    graph.add_edges_from((b.from_bus, b.to_bus) for b in case.branches)
    islands = nx.number_connected_components(graph)
    if islands > 1:
        raise DisconnectedNetworkError(f"network has {islands} islands; only connected networks are supported")

import json

import numpy as np
import pytest

from moment_opf import MomentOpfConfig, NetworkCase, load_bundled_case, parse_case
from moment_opf._oracle import complex_flow_eval


_CONFIG_ATTRIBUTES = ("solver", "log_level", "even_blocks", "angle_reference", "merge_cliques", "merge_limit", "case_dir")


@pytest.fixture(autouse=True)
def restore_config():
    # MomentOpfConfig is class-level state; keep tests independent
    saved = {name: getattr(MomentOpfConfig, name) for name in _CONFIG_ATTRIBUTES}
    yield
    for name, value in saved.items():
        setattr(MomentOpfConfig, name, value)


@pytest.fixture(scope="session")
def case2() -> NetworkCase:
    return load_bundled_case("case2")


@pytest.fixture(scope="session")
def case14() -> NetworkCase:
    return load_bundled_case("case14")


@pytest.fixture(scope="session")
def case14Q() -> NetworkCase:
    return load_bundled_case("case14Q")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def random_voltages(case: NetworkCase, rng: np.random.Generator, spread: float = 0.3) -> np.ndarray:
    """Voltages near nominal with the reference angle at zero."""
    vm = rng.uniform(0.95, 1.05, case.n)
    va = rng.uniform(-spread, spread, case.n)
    va[case.reference()] = 0.0
    return vm * np.exp(1j * va)


def feasible_variant(case: NetworkCase, V: np.ndarray) -> NetworkCase:
    """Copy of ``case`` whose loads and limits make ``V`` an OPF-feasible point."""
    flows = complex_flow_eval(case, V)
    base = case.base_mva
    gen_buses = {gen.bus for gen in case.generators}
    buses = []
    for k, bus in enumerate(case.buses):
        update = {"vmin": min(bus.vmin, abs(V[k]) - 0.01), "vmax": max(bus.vmax, abs(V[k]) + 0.01)}
        if bus.id not in gen_buses:
            update["pd"] = -flows.injection[k].real * base
            update["qd"] = -flows.injection[k].imag * base
        buses.append(bus.model_copy(update=update))
    positions = case.positions()
    generators = []
    for gen in case.generators:
        sg = flows.generation[positions[gen.bus]] * base
        generators.append(
            gen.model_copy(
                update={
                    "pmin": min(gen.pmin, sg.real - 10),
                    "pmax": max(gen.pmax, sg.real + 10),
                    "qmin": min(gen.qmin, sg.imag - 10),
                    "qmax": max(gen.qmax, sg.imag + 10),
                }
            )
        )
    branches = []
    for idx, branch in enumerate(case.branches):
        if branch.limited:
            worst = max(abs(flows.from_flow[idx]), abs(flows.to_flow[idx])) * base
            branch = branch.model_copy(update={"s_max": max(branch.s_max, worst + 1.0)})
        branches.append(branch)
    return case.model_copy(update={"buses": tuple(buses), "generators": tuple(generators), "branches": tuple(branches)})


def json_case(buses, generators=(), branches=(), name="synthetic", base_mva=100.0) -> NetworkCase:
    return parse_case(
        json.dumps(
            {
                "name": name,
                "base_mva": base_mva,
                "buses": list(buses),
                "generators": list(generators),
                "branches": list(branches),
            }
        )
    )


@pytest.fixture(scope="session")
def case3() -> NetworkCase:
    """Meshed 3-bus system with two generators and one load."""
    return json_case(
        buses=[
            {"id": 1, "type": "slack", "vmin": 0.95, "vmax": 1.05},
            {"id": 2, "type": "pv", "vmin": 0.95, "vmax": 1.05},
            {"id": 3, "type": "pq", "pd": 120, "qd": 40, "vmin": 0.95, "vmax": 1.05},
        ],
        generators=[
            {"bus": 1, "pmin": 0, "pmax": 200, "qmin": -100, "qmax": 100, "c2": 0.02, "c1": 10, "c0": 0},
            {"bus": 2, "pmin": 0, "pmax": 200, "qmin": -100, "qmax": 100, "c2": 0.04, "c1": 12, "c0": 0},
        ],
        branches=[
            {"from": 1, "to": 2, "r": 0.02, "x": 0.1, "b": 0.02},
            {"from": 1, "to": 3, "r": 0.03, "x": 0.15, "b": 0.02},
            {"from": 2, "to": 3, "r": 0.02, "x": 0.12, "b": 0.02},
        ],
        name="case3",
    )


@pytest.fixture(scope="session")
def case3_radial() -> NetworkCase:
    """3-bus feeder with a limited first line, so the far generator must run."""
    return json_case(
        buses=[
            {"id": 1, "type": "slack", "vmin": 0.95, "vmax": 1.05},
            {"id": 2, "type": "pq", "pd": 90, "qd": 30, "vmin": 0.95, "vmax": 1.05},
            {"id": 3, "type": "pv", "vmin": 0.95, "vmax": 1.05},
        ],
        generators=[
            {"bus": 1, "pmin": 0, "pmax": 150, "qmin": -50, "qmax": 50, "c2": 0.01, "c1": 15, "c0": 0},
            {"bus": 3, "pmin": 0, "pmax": 60, "qmin": -50, "qmax": 50, "c2": 0.0, "c1": 20, "c0": 0},
        ],
        branches=[
            {"from": 1, "to": 2, "r": 0.02, "x": 0.08, "b": 0.02, "s_max": 80},
            {"from": 2, "to": 3, "r": 0.03, "x": 0.12, "b": 0.02},
        ],
        name="case3_radial",
    )

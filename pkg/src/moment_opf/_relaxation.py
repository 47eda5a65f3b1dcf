"""Assembly of the sparse, selectively-ordered moment relaxation as a conic problem."""

import logging
import math

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix

from ._errors import AssemblyError, OrderTooLowError
from ._models import NetworkCase, RelaxationOptions
from ._opf_polynomials import OpfPolynomials
from ._polynomial import (
    Exponent,
    LinearExpr,
    MomentIndexMap,
    Polynomial,
    apply_L,
    basis,
    homogeneous_basis,
    symbolic_outer,
)
from ._sparsity import CliqueDecomposition


logger = logging.getLogger("mopf")


@dataclass(frozen=True)
class PsdBlock:
    """Symmetric affine matrix ``matrix[i][j]`` constrained to be PSD."""

    kind: str
    tag: str
    matrix: list[list[LinearExpr]]

    @property
    def dim(self) -> int:
        return len(self.matrix)

    def evaluate(self, z) -> np.ndarray:
        return np.array([[entry.evaluate(z) for entry in row] for row in self.matrix])

    def affine_map(self, n_variables: int) -> tuple[csr_matrix, np.ndarray]:
        """(A, c) with vec(M(z)) = A @ z + c, column-major."""
        d = self.dim
        rows, cols, vals = [], [], []
        c = np.zeros(d * d)
        for j in range(d):
            for i in range(d):
                entry = self.matrix[i][j]
                r = j * d + i
                c[r] = entry.constant
                for var, coef in entry.coeffs.items():
                    rows.append(r)
                    cols.append(var)
                    vals.append(coef)
        return csr_matrix((vals, (rows, cols)), shape=(d * d, n_variables)), c


@dataclass(frozen=True)
class EqualityRow:
    kind: str
    tag: str
    expr: LinearExpr


@dataclass(frozen=True)
class ConicProblem:
    """Minimize ``objective`` subject to ``expr == 0`` rows and PSD blocks.

    Variables are the moments and auxiliary scalars of ``index_map``; the
    constant moment is folded into expression constants.
    Cost epigraph variables hold $/h divided by ``cost_scale``.
    """

    index_map: MomentIndexMap
    objective: LinearExpr
    equalities: list[EqualityRow]
    blocks: list[PsdBlock]
    cost_variables: dict[int, int] = field(default_factory=dict)
    orders: list[int] = field(default_factory=list)
    clique_orders: list[int] = field(default_factory=list)
    cost_scale: float = 1.0

    @property
    def n_variables(self) -> int:
        return len(self.index_map)

    def equality_system(self) -> tuple[csr_matrix, np.ndarray]:
        """(A, b) with the equality rows written as A @ z == b."""
        rows, cols, vals = [], [], []
        b = np.zeros(len(self.equalities))
        for r, row in enumerate(self.equalities):
            b[r] = -row.expr.constant
            for var, coef in row.expr.coeffs.items():
                rows.append(r)
                cols.append(var)
                vals.append(coef)
        return csr_matrix((vals, (rows, cols)), shape=(len(self.equalities), self.n_variables)), b

    def census(self) -> dict[str, int]:
        """Counts of blocks and rows by kind, plus the variable count."""
        counts: Counter = Counter()
        for block in self.blocks:
            counts[f"{block.kind}_blocks"] += 1
        for row in self.equalities:
            counts[f"{row.kind}_rows"] += 1
        counts["variables"] = self.n_variables
        counts["max_block_dim"] = max((block.dim for block in self.blocks), default=0)
        return dict(counts)


def _linearize(matrix: list[list[Polynomial]], index_map: MomentIndexMap) -> list[list[LinearExpr]]:
    size = len(matrix)
    out = [[None] * size for _ in range(size)]
    for i in range(size):
        for j in range(i, size):
            entry = apply_L(matrix[i][j], index_map)
            out[i][j] = entry
            out[j][i] = entry
    return out


def _bases(variables: list[int], order: int, even_blocks: bool) -> list[tuple[int, list[Exponent]]]:
    """Bases whose outer products form the enforced blocks at ``order``.

    With even blocks, one homogeneous basis per degree; otherwise the full
    basis as a single block.
    """
    if even_blocks:
        return [(d, homogeneous_basis(variables, d)) for d in range(order + 1)]
    return [(-1, basis(variables, order))]


def build_moment_blocks(
    decomp: CliqueDecomposition,
    clique_orders: list[int],
    polys: OpfPolynomials,
    index_map: MomentIndexMap,
    even_blocks: bool = True,
) -> list[PsdBlock]:
    """Moment matrix of every clique at its order.

    With even blocks the degree-0 diagonal block is the constant 1 and is
    not emitted.
    """
    blocks = []
    for mu, clique in enumerate(decomp.cliques):
        variables = polys.variables.clique_variables(clique)
        for d, b in _bases(variables, clique_orders[mu], even_blocks):
            if d == 0:
                continue
            tag = f"clique {mu}" + (f" degree {d}" if d > 0 else "")
            blocks.append(PsdBlock("moment", tag, _linearize(symbolic_outer(b), index_map)))
    return blocks


def localizing_blocks(
    weight: Polynomial,
    variables: list[int],
    order: int,
    index_map: MomentIndexMap,
    kind: str,
    tag: str,
    even_blocks: bool = True,
) -> list[PsdBlock]:
    """Blocks of L{weight * b b^T} over the basis of ``order`` in ``variables``."""
    out = []
    for d, b in _bases(variables, order, even_blocks):
        suffix = f" degree {d}" if d >= 0 else ""
        out.append(PsdBlock(kind, tag + suffix, _linearize(symbolic_outer(b, weight), index_map)))
    return out


def _bus_constraints(polys: OpfPolynomials, k: int):
    """(name, polynomial) for inequalities h >= 0 and equalities g == 0 at bus position k."""
    inequalities, equalities = [], []
    if polys.p_fixed(k):
        equalities.append(("P", polys.fP[k] - polys.pmin[k]))
    else:
        inequalities.append(("P_min", polys.fP[k] - polys.pmin[k]))
        inequalities.append(("P_max", polys.pmax[k] - polys.fP[k]))
    if polys.q_fixed(k):
        equalities.append(("Q", polys.fQ[k] - polys.qmin[k]))
    else:
        inequalities.append(("Q_min", polys.fQ[k] - polys.qmin[k]))
        inequalities.append(("Q_max", polys.qmax[k] - polys.fQ[k]))
    inequalities.append(("V_min", polys.fV[k] - polys.vmin[k] ** 2))
    inequalities.append(("V_max", polys.vmax[k] ** 2 - polys.fV[k]))
    return inequalities, equalities


def _flow_clique(decomp: CliqueDecomposition, orders: list[int], l: int, m: int) -> tuple[int, int]:
    """(clique, order) used for the flow constraints of branch l-m."""
    terminal = l if orders[l] >= orders[m] else m
    return decomp.covering[terminal], max(orders[l], orders[m])


def build_localizing_blocks(
    polys: OpfPolynomials,
    decomp: CliqueDecomposition,
    orders: list[int],
    index_map: MomentIndexMap,
    options: RelaxationOptions,
    bus_ids: list[int] | None = None,
) -> list[PsdBlock]:
    """Localizing blocks of every injection, voltage and flow inequality.

    Injection and voltage constraints use the bus order over the bus's
    covering clique; direct flow constraints use the higher terminal order.

    Raises:
        OrderTooLowError: A flow limit needs order 2 and no Schur form is enabled.
    """
    label = (lambda k: bus_ids[k]) if bus_ids else (lambda k: k)
    blocks = []
    for k, order in enumerate(orders):
        variables = polys.variables.clique_variables(decomp.cliques[decomp.covering[k]])
        inequalities, _ = _bus_constraints(polys, k)
        for name, h in inequalities:
            blocks.extend(
                localizing_blocks(
                    h, variables, order - 1, index_map, "localizing", f"{name} bus {label(k)}", options.even_blocks
                )
            )

    for flow in polys.flows:
        if flow.fSlm is None:
            continue
        clique, order = _flow_clique(decomp, orders, flow.from_pos, flow.to_pos)
        if order < 2:
            if not options.schur_flow:
                raise OrderTooLowError(
                    f"flow limit on branch {label(flow.from_pos)}-{label(flow.to_pos)} needs order 2 without Schur blocks"
                )
            continue
        if not options.direct_flow and options.schur_flow:
            continue
        variables = polys.variables.clique_variables(decomp.cliques[clique])
        for terminal, fS in (("from", flow.fSlm), ("to", flow.fSml)):
            h = flow.s_max**2 - fS
            tag = f"S_max branch {flow.branch} {terminal}"
            blocks.extend(localizing_blocks(h, variables, order - 2, index_map, "flow", tag, options.even_blocks))
    return blocks


def build_equality_rows(
    polys: OpfPolynomials,
    decomp: CliqueDecomposition,
    orders: list[int],
    index_map: MomentIndexMap,
    even_blocks: bool = True,
    bus_ids: list[int] | None = None,
) -> list[EqualityRow]:
    """One row L{g * x^alpha} = 0 per distinct entry of the localizing matrix of g.

    The entries of the order-(gamma - 1) localizing matrix are the monomials
    of degree <= 2(gamma - 1) in the covering clique variables; with even
    blocks only the even degrees appear on the enforced diagonal blocks.
    """
    label = (lambda k: bus_ids[k]) if bus_ids else (lambda k: k)
    rows = []
    for k, order in enumerate(orders):
        _, equalities = _bus_constraints(polys, k)
        if not equalities:
            continue
        variables = polys.variables.clique_variables(decomp.cliques[decomp.covering[k]])
        multipliers = basis(variables, 2 * (order - 1))
        if even_blocks:
            multipliers = [e for e in multipliers if e.degree % 2 == 0]
        for name, g in equalities:
            for e in multipliers:
                rows.append(EqualityRow("equality", f"{name} bus {label(k)} x{e!r}", apply_L(g.times_monomial(e), index_map)))
    return rows


def build_schur_flow(polys: OpfPolynomials, index_map: MomentIndexMap) -> list[PsdBlock]:
    """3x3 blocks [[S^2, -P, -Q], [-P, 1, 0], [-Q, 0, 1]] per limited branch terminal."""
    blocks = []
    one, zero = LinearExpr(1.0), LinearExpr(0.0)
    for flow in polys.flows:
        if flow.fSlm is None:
            continue
        for terminal, fP, fQ in (("from", flow.fPlm, flow.fQlm), ("to", flow.fPml, flow.fQml)):
            p = -apply_L(fP, index_map)
            q = -apply_L(fQ, index_map)
            matrix = [
                [LinearExpr(flow.s_max**2), p, q],
                [p, one, zero],
                [q, zero, one],
            ]
            blocks.append(PsdBlock("schur_flow", f"S_max branch {flow.branch} {terminal}", matrix))
    return blocks


def cost_unit(polys: OpfPolynomials) -> float:
    """Cost in $/h of one per-unit of generation at the most expensive generator (at least 1)."""
    return max([1.0] + [c2 + abs(c1) + abs(c0) for c2, c1, c0 in polys.cost_coefficients.values()])


def build_schur_cost(
    polys: OpfPolynomials,
    decomp: CliqueDecomposition,
    clique_orders: list[int],
    index_map: MomentIndexMap,
    bus_ids: list[int] | None = None,
    scale: float = 1.0,
) -> tuple[LinearExpr, list[PsdBlock], list[EqualityRow], dict[int, int]]:
    """Epigraph form of the quadratic generation cost.

    Each t_k holds the generator cost divided by ``scale``; the objective
    multiplies it back.

    Returns the objective sum of scale * t_k, the 2x2 blocks of generators
    with c2 > 0, the equality rows, and the map bus position -> t_k variable.

    Raises:
        AssemblyError: A generator has a negative quadratic coefficient.
    """
    label = (lambda k: bus_ids[k]) if bus_ids else (lambda k: k)
    objective = LinearExpr()
    blocks, rows, cost_variables = [], [], {}
    for k, (c2, c1, c0) in sorted(polys.cost_coefficients.items()):
        if c2 < 0:
            raise AssemblyError(f"generator at bus {label(k)} has negative quadratic cost {c2}")
        t = index_map.auxiliary(f"t{label(k)}")
        cost_variables[k] = t
        t_expr = LinearExpr.of_variable(t)
        objective = objective + t_expr * scale
        p = apply_L(polys.fP[k], index_map)
        linear = (p * c1 + c0) * (1.0 / scale)
        if c2 == 0:
            rows.append(EqualityRow("cost", f"cost bus {label(k)}", t_expr - linear))
            continue
        off = p * (-math.sqrt(c2 / scale))
        matrix = [[t_expr - linear, off], [off, LinearExpr(1.0)]]
        blocks.append(PsdBlock("schur_cost", f"cost bus {label(k)}", matrix))
        if clique_orders[decomp.covering[k]] >= 2:
            rows.append(
                EqualityRow(
                    "cost",
                    f"quartic cost bus {label(k)}",
                    t_expr - apply_L(polys.fC[k], index_map) * (1.0 / scale),
                )
            )
    return objective, blocks, rows, cost_variables


def _bound_blocks(
    polys: OpfPolynomials,
    decomp: CliqueDecomposition,
    orders: list[int],
    clique_orders: list[int],
    index_map: MomentIndexMap,
    even_blocks: bool,
    bus_ids: list[int] | None = None,
) -> list[PsdBlock]:
    """Voltage upper-bound localizing blocks for every bus of a higher-order clique.

    They bound the highest-degree moments of the clique.
    """
    label = (lambda k: bus_ids[k]) if bus_ids else (lambda k: k)
    blocks = []
    for mu, clique in enumerate(decomp.cliques):
        order = clique_orders[mu]
        if order < 2:
            continue
        variables = polys.variables.clique_variables(clique)
        for j in clique:
            if decomp.covering[j] == mu and orders[j] == order:
                continue
            h = polys.vmax[j] ** 2 - polys.fV[j]
            blocks.extend(
                localizing_blocks(h, variables, order - 1, index_map, "bound", f"V_max bus {label(j)} clique {mu}", even_blocks)
            )
    return blocks


def assemble(
    case: NetworkCase,
    polys: OpfPolynomials,
    decomp: CliqueDecomposition,
    orders: list[int],
    options: RelaxationOptions | None = None,
) -> ConicProblem:
    """Build the full relaxation for per-bus orders ``orders``.

    Raises:
        AssemblyError: The case has no generators or a negative quadratic cost.
        OrderTooLowError: A constraint cannot be represented at the given orders.
    """
    options = options or RelaxationOptions()
    if not case.generators:
        raise AssemblyError("no generators")
    if len(orders) != case.n or min(orders) < 1:
        raise AssemblyError(f"need one order >= 1 per bus, got {orders}")

    bus_ids = [bus.id for bus in case.buses]
    clique_orders = decomp.orders(orders)
    index_map = MomentIndexMap()

    blocks = build_moment_blocks(decomp, clique_orders, polys, index_map, options.even_blocks)
    blocks += build_localizing_blocks(polys, decomp, orders, index_map, options, bus_ids)
    equalities = build_equality_rows(polys, decomp, orders, index_map, options.even_blocks, bus_ids)

    if options.schur_flow:
        blocks += build_schur_flow(polys, index_map)

    scale = 1.0
    if options.schur_cost:
        scale = cost_unit(polys)
        objective, cost_blocks, cost_rows, cost_variables = build_schur_cost(
            polys, decomp, clique_orders, index_map, bus_ids, scale
        )
        blocks += cost_blocks
        equalities += cost_rows
    else:
        for k, (c2, _, _) in polys.cost_coefficients.items():
            if c2 > 0 and clique_orders[decomp.covering[k]] < 2:
                raise OrderTooLowError(f"quadratic cost at bus {bus_ids[k]} needs order 2 without the Schur form")
        objective = apply_L(polys.objective(), index_map)
        cost_variables = {}

    if options.bound_clique_moments:
        blocks += _bound_blocks(polys, decomp, orders, clique_orders, index_map, options.even_blocks, bus_ids)

    if not polys.variables.eliminate_reference:
        vq_ref = polys.variables.vq(polys.variables.reference)
        for idx, e in index_map.moments():
            if vq_ref in e.variables():
                equalities.append(EqualityRow("angle_reference", f"angle reference {e!r}", LinearExpr.of_variable(idx)))

    problem = ConicProblem(
        index_map=index_map,
        objective=objective,
        equalities=equalities,
        blocks=blocks,
        cost_variables=cost_variables,
        orders=list(orders),
        clique_orders=clique_orders,
        cost_scale=scale,
    )
    logger.debug("assembled relaxation", extra={"census": problem.census()})
    return problem


def dump_sdpa(problem: ConicProblem, path: str | Path):
    """Write ``problem`` in the sparse SDPA text format.

    PSD blocks map to SDP blocks; equality rows become pairs of opposite
    inequalities in one diagonal block. The objective constant is dropped
    and reported in the header comment.
    """
    n = problem.n_variables
    lp_rows = []
    for row in problem.equalities:
        lp_rows.append(row.expr)
        lp_rows.append(-row.expr)
    structure = [block.dim for block in problem.blocks]
    if lp_rows:
        structure.append(-len(lp_rows))

    lines = [
        f'"moment relaxation; objective constant {problem.objective.constant!r}',
        str(n),
        str(len(structure)),
        " ".join(str(s) for s in structure),
        " ".join(repr(problem.objective.coeffs.get(i, 0.0)) for i in range(n)),
    ]
    for b, block in enumerate(problem.blocks, start=1):
        for i in range(block.dim):
            for j in range(i, block.dim):
                entry = block.matrix[i][j]
                if entry.constant:
                    lines.append(f"0 {b} {i + 1} {j + 1} {-entry.constant!r}")
                for var, coef in sorted(entry.coeffs.items()):
                    lines.append(f"{var + 1} {b} {i + 1} {j + 1} {coef!r}")
    if lp_rows:
        b = len(problem.blocks) + 1
        for r, expr in enumerate(lp_rows, start=1):
            if expr.constant:
                lines.append(f"0 {b} {r} {r} {-expr.constant!r}")
            for var, coef in sorted(expr.coeffs.items()):
                lines.append(f"{var + 1} {b} {r} {r} {coef!r}")
    Path(path).write_text("\n".join(lines) + "\n")

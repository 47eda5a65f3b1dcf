"""OPF constraint and cost polynomials in rectangular voltage coordinates.

Powers are in p.u. on the case base; costs are in $/h so that the objective
comes out in natural units.
"""

from dataclasses import dataclass, field

import numpy as np

from ._case import AdmittanceMatrix, branch_stamps, build_admittance
from ._models import NetworkCase
from ._polynomial import Polynomial


@dataclass(frozen=True)
class VoltageVariables:
    """Variable layout: V_d of bus k is variable k, V_q of bus k is variable n + k.

    With ``eliminate_reference`` the reference V_q is removed from the
    variable space and behaves as the zero polynomial.
    """

    n: int
    reference: int
    eliminate_reference: bool = True

    def vd(self, k: int) -> int:
        return k

    def vq(self, k: int) -> int:
        return self.n + k

    def Vd(self, k: int) -> Polynomial:
        return Polynomial.variable(self.vd(k))

    def Vq(self, k: int) -> Polynomial:
        if self.eliminate_reference and k == self.reference:
            return Polynomial()
        return Polynomial.variable(self.vq(k))

    def bus_variables(self, k: int) -> list[int]:
        if self.eliminate_reference and k == self.reference:
            return [self.vd(k)]
        return [self.vd(k), self.vq(k)]

    def clique_variables(self, buses) -> list[int]:
        out = []
        for k in buses:
            out.extend(self.bus_variables(k))
        return sorted(out)

    def free_variables(self) -> list[int]:
        return self.clique_variables(range(self.n))

    def bus_of(self, var: int) -> int:
        return var if var < self.n else var - self.n

    def point(self, V) -> np.ndarray:
        """Dense variable vector for complex bus voltages ``V``."""
        V = np.asarray(V, dtype=complex)
        return np.concatenate([V.real, V.imag])


def _power_terms(va_d: Polynomial, va_q: Polynomial, y: complex, vi_d: Polynomial, vi_q: Polynomial):
    """Real and imaginary parts of V_a * conj(y * V_i)."""
    g, b = y.real, y.imag
    ir = vi_d * g - vi_q * b
    ii = vi_d * b + vi_q * g
    return va_d * ir + va_q * ii, va_q * ir - va_d * ii


@dataclass(frozen=True)
class BranchFlows:
    branch: int
    from_pos: int
    to_pos: int
    fPlm: Polynomial
    fQlm: Polynomial
    fPml: Polynomial
    fQml: Polynomial
    fSlm: Polynomial | None
    fSml: Polynomial | None
    s_max: float


@dataclass(frozen=True)
class OpfPolynomials:
    """Every polynomial of the OPF problem plus its bounds, all in p.u."""

    variables: VoltageVariables
    fP: list[Polynomial]
    fQ: list[Polynomial]
    fV: list[Polynomial]
    fC: dict[int, Polynomial]
    flows: list[BranchFlows]
    pmin: list[float]
    pmax: list[float]
    qmin: list[float]
    qmax: list[float]
    vmin: list[float]
    vmax: list[float]
    cost_coefficients: dict[int, tuple[float, float, float]] = field(default_factory=dict)
    base_mva: float = 100.0

    def p_fixed(self, k: int) -> bool:
        return self.pmin[k] == self.pmax[k]

    def q_fixed(self, k: int) -> bool:
        return self.qmin[k] == self.qmax[k]

    def objective(self) -> Polynomial:
        total = Polynomial()
        for poly in self.fC.values():
            total = total + poly
        return total

    def cost_at(self, V) -> float:
        x = self.variables.point(V)
        return sum(poly.evaluate(x) for poly in self.fC.values())


def build_injections(case: NetworkCase, Y: AdmittanceMatrix, variables: VoltageVariables | None = None):
    """Generation polynomials f_P, f_Q per bus (injection plus load), p.u."""
    variables = variables or VoltageVariables(case.n, case.reference())
    Ycoo = Y.Y.tocoo()
    fP = [Polynomial.constant(bus.pd / case.base_mva) for bus in case.buses]
    fQ = [Polynomial.constant(bus.qd / case.base_mva) for bus in case.buses]
    for k, i, y in zip(Ycoo.row, Ycoo.col, Ycoo.data):
        if y == 0:
            continue
        p, q = _power_terms(variables.Vd(k), variables.Vq(k), complex(y), variables.Vd(i), variables.Vq(i))
        fP[k] = fP[k] + p
        fQ[k] = fQ[k] + q
    return fP, fQ


def build_voltage(case: NetworkCase, variables: VoltageVariables | None = None) -> list[Polynomial]:
    variables = variables or VoltageVariables(case.n, case.reference())
    return [variables.Vd(k) ** 2 + variables.Vq(k) ** 2 for k in range(case.n)]


def build_flows(case: NetworkCase, variables: VoltageVariables | None = None) -> list[BranchFlows]:
    """Terminal flow polynomials of every branch; squared magnitudes only for limited branches."""
    variables = variables or VoltageVariables(case.n, case.reference())
    pos = case.positions()
    out = []
    for idx, branch in enumerate(case.branches):
        l, m = pos[branch.from_bus], pos[branch.to_bus]
        yff, yft, ytf, ytt = branch_stamps(branch)
        vl = (variables.Vd(l), variables.Vq(l))
        vm = (variables.Vd(m), variables.Vq(m))
        p1, q1 = _power_terms(*vl, yff, *vl)
        p2, q2 = _power_terms(*vl, yft, *vm)
        p3, q3 = _power_terms(*vm, ytf, *vl)
        p4, q4 = _power_terms(*vm, ytt, *vm)
        fPlm, fQlm = p1 + p2, q1 + q2
        fPml, fQml = p3 + p4, q3 + q4
        fSlm = fSml = None
        if branch.limited:
            fSlm = fPlm**2 + fQlm**2
            fSml = fPml**2 + fQml**2
        out.append(
            BranchFlows(
                branch=idx,
                from_pos=l,
                to_pos=m,
                fPlm=fPlm,
                fQlm=fQlm,
                fPml=fPml,
                fQml=fQml,
                fSlm=fSlm,
                fSml=fSml,
                s_max=branch.s_max / case.base_mva,
            )
        )
    return out


def build_cost(case: NetworkCase, fP: list[Polynomial]) -> tuple[dict[int, Polynomial], dict[int, tuple[float, float, float]]]:
    """Cost polynomial per generator bus in $/h, with the coefficients rescaled to p.u. power."""
    costs, coefficients = {}, {}
    base = case.base_mva
    for k in range(case.n):
        gen = case.generator_at(k)
        if gen is None:
            continue
        c2, c1, c0 = gen.c2 * base**2, gen.c1 * base, gen.c0
        coefficients[k] = (c2, c1, c0)
        costs[k] = fP[k] ** 2 * c2 + fP[k] * c1 + c0
    return costs, coefficients


def build_opf_polynomials(
    case: NetworkCase, Y: AdmittanceMatrix | None = None, eliminate_reference: bool = True
) -> OpfPolynomials:
    Y = Y if Y is not None else build_admittance(case)
    variables = VoltageVariables(case.n, case.reference(), eliminate_reference)
    fP, fQ = build_injections(case, Y, variables)
    fC, coefficients = build_cost(case, fP)
    base = case.base_mva
    limits = [case.generation_limits(k) for k in range(case.n)]
    return OpfPolynomials(
        variables=variables,
        fP=fP,
        fQ=fQ,
        fV=build_voltage(case, variables),
        fC=fC,
        flows=build_flows(case, variables),
        pmin=[lim[0] / base for lim in limits],
        pmax=[lim[1] / base for lim in limits],
        qmin=[lim[2] / base for lim in limits],
        qmax=[lim[3] / base for lim in limits],
        vmin=[bus.vmin for bus in case.buses],
        vmax=[bus.vmax for bus in case.buses],
        cost_coefficients=coefficients,
        base_mva=base,
    )

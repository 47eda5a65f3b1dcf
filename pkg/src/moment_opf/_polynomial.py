"""Sparse polynomials over the real voltage components and the moment functional."""

from collections.abc import Iterable, Sequence
from itertools import combinations_with_replacement

import numpy as np

from ._errors import UnknownMonomialError


COEFFICIENT_TOLERANCE = 1e-12


class Exponent:
    """Sparse exponent vector stored as sorted ``(variable, power)`` pairs.

    The constant monomial is the empty exponent. Instances are immutable and
    hashable, so they key both polynomial terms and moment variables.
    """

    __slots__ = ("pairs", "degree", "_hash")

    def __init__(self, pairs: Iterable[tuple[int, int]] = ()):
        merged: dict[int, int] = {}
        for var, power in pairs:
            if power < 0:
                raise ValueError(f"negative power {power} for variable {var}")
            if power:
                merged[var] = merged.get(var, 0) + power
        self.pairs = tuple(sorted(merged.items()))
        self.degree = sum(power for _, power in self.pairs)
        self._hash = hash(self.pairs)

    @staticmethod
    def from_vars(variables: Iterable[int]) -> "Exponent":
        """Exponent of the product of the given variables (with repetition)."""
        return Exponent((var, 1) for var in variables)

    def expanded(self) -> tuple[int, ...]:
        return tuple(var for var, power in self.pairs for _ in range(power))

    def sort_key(self) -> tuple:
        """Graded lexicographic key: degree first, then the expanded variable tuple."""
        return (self.degree, self.expanded())

    def variables(self) -> frozenset[int]:
        return frozenset(var for var, _ in self.pairs)

    def __mul__(self, other: "Exponent") -> "Exponent":
        if not other.pairs:
            return self
        if not self.pairs:
            return other
        return Exponent(self.pairs + other.pairs)

    def evaluate(self, x: Sequence[float]) -> float:
        value = 1.0
        for var, power in self.pairs:
            value *= x[var] ** power
        return value

    def __eq__(self, other):
        return isinstance(other, Exponent) and self.pairs == other.pairs

    def __hash__(self):
        return self._hash

    def __lt__(self, other: "Exponent"):
        return self.sort_key() < other.sort_key()

    def __bool__(self):
        return bool(self.pairs)

    def __repr__(self):
        if not self.pairs:
            return "Exponent(1)"
        return "Exponent(" + "*".join(f"x{v}^{p}" if p > 1 else f"x{v}" for v, p in self.pairs) + ")"


CONSTANT = Exponent()


class Polynomial:
    """Real polynomial as a map Exponent -> coefficient.

    Arithmetic returns new objects and drops terms whose coefficient falls
    below ``COEFFICIENT_TOLERANCE`` in magnitude.
    """

    __slots__ = ("terms",)

    def __init__(self, terms: dict[Exponent, float] | None = None):
        self.terms: dict[Exponent, float] = {
            e: float(c) for e, c in (terms or {}).items() if abs(c) >= COEFFICIENT_TOLERANCE
        }

    @staticmethod
    def constant(value: float) -> "Polynomial":
        return Polynomial({CONSTANT: value})

    @staticmethod
    def variable(index: int) -> "Polynomial":
        return Polynomial({Exponent(((index, 1),)): 1.0})

    @staticmethod
    def monomial(exponent: Exponent, coefficient: float = 1.0) -> "Polynomial":
        return Polynomial({exponent: coefficient})

    @property
    def degree(self) -> int:
        return max((e.degree for e in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def constant_term(self) -> float:
        return self.terms.get(CONSTANT, 0.0)

    def variables(self) -> frozenset[int]:
        out: set[int] = set()
        for e in self.terms:
            out.update(var for var, _ in e.pairs)
        return frozenset(out)

    def evaluate(self, x: Sequence[float]) -> float:
        return sum(c * e.evaluate(x) for e, c in self.terms.items())

    def substitute_zero(self, var: int) -> "Polynomial":
        """Polynomial with variable ``var`` fixed to zero."""
        return Polynomial({e: c for e, c in self.terms.items() if var not in e.variables()})

    def times_monomial(self, exponent: Exponent) -> "Polynomial":
        if not exponent:
            return self
        return Polynomial({e * exponent: c for e, c in self.terms.items()})

    def scale(self, factor: float) -> "Polynomial":
        return Polynomial({e: c * factor for e, c in self.terms.items()})

    def __add__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0.0) + c
        return Polynomial(terms)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return self.scale(other)
        terms: dict[Exponent, float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = e1 * e2
                terms[e] = terms.get(e, 0.0) + c1 * c2
        return Polynomial(terms)

    __rmul__ = __mul__

    def __pow__(self, power: int):
        if power < 0:
            raise ValueError("negative powers are not polynomials")
        result = Polynomial.constant(1.0)
        for _ in range(power):
            result = result * self
        return result

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(other)
        return self.terms == other.terms

    def __repr__(self):
        if not self.terms:
            return "Polynomial(0)"
        parts = [f"{c:+g}*{e!r}" for e, c in sorted(self.terms.items(), key=lambda t: t[0].sort_key())]
        return "Polynomial(" + " ".join(parts) + ")"


def basis(variables: Iterable[int], order: int) -> list[Exponent]:
    """All monomials of total degree <= ``order``, graded-lex, constant first."""
    if order < 0:
        raise ValueError("basis order must be nonnegative")
    ordered = sorted(set(variables))
    out = []
    for degree in range(order + 1):
        out.extend(Exponent.from_vars(combo) for combo in combinations_with_replacement(ordered, degree))
    return out


def homogeneous_basis(variables: Iterable[int], degree: int) -> list[Exponent]:
    ordered = sorted(set(variables))
    return [Exponent.from_vars(combo) for combo in combinations_with_replacement(ordered, degree)]


class MomentIndexMap:
    """Dense indices for the moment variables y_alpha and auxiliary scalars.

    The constant exponent is never registered: it stands for y_0 = 1 and is
    folded into the constant of every LinearExpr.
    """

    def __init__(self):
        self._index: dict[Exponent, int] = {}
        self.labels: list[Exponent | str] = []

    def register(self, exponent: Exponent) -> int:
        if not exponent:
            raise ValueError("the constant moment is fixed to 1 and has no variable")
        idx = self._index.get(exponent)
        if idx is None:
            idx = len(self.labels)
            self._index[exponent] = idx
            self.labels.append(exponent)
        return idx

    def index(self, exponent: Exponent) -> int:
        try:
            return self._index[exponent]
        except KeyError:
            raise UnknownMonomialError(f"moment {exponent!r} was never instantiated") from None

    def auxiliary(self, name: str) -> int:
        """Register a named auxiliary scalar (e.g. a cost epigraph variable)."""
        idx = len(self.labels)
        self.labels.append(name)
        return idx

    def __contains__(self, exponent: Exponent) -> bool:
        return exponent in self._index

    def __len__(self):
        return len(self.labels)

    def moments(self) -> list[tuple[int, Exponent]]:
        return [(i, lbl) for i, lbl in enumerate(self.labels) if isinstance(lbl, Exponent)]

    def auxiliaries(self) -> list[tuple[int, str]]:
        return [(i, lbl) for i, lbl in enumerate(self.labels) if isinstance(lbl, str)]


class LinearExpr:
    """Affine expression ``constant + sum(coeffs[i] * z[i])`` over problem variables."""

    __slots__ = ("constant", "coeffs")

    def __init__(self, constant: float = 0.0, coeffs: dict[int, float] | None = None):
        self.constant = float(constant)
        self.coeffs = {i: float(c) for i, c in (coeffs or {}).items() if abs(c) >= COEFFICIENT_TOLERANCE}

    @staticmethod
    def of_variable(index: int, coefficient: float = 1.0) -> "LinearExpr":
        return LinearExpr(0.0, {index: coefficient})

    def is_constant(self) -> bool:
        return not self.coeffs

    def evaluate(self, z: Sequence[float]) -> float:
        return self.constant + sum(c * z[i] for i, c in self.coeffs.items())

    def scale(self, factor: float) -> "LinearExpr":
        return LinearExpr(self.constant * factor, {i: c * factor for i, c in self.coeffs.items()})

    def __add__(self, other):
        if not isinstance(other, LinearExpr):
            return LinearExpr(self.constant + other, self.coeffs)
        coeffs = dict(self.coeffs)
        for i, c in other.coeffs.items():
            coeffs[i] = coeffs.get(i, 0.0) + c
        return LinearExpr(self.constant + other.constant, coeffs)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, factor: float):
        return self.scale(factor)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, LinearExpr):
            return self.is_constant() and self.constant == other
        return self.constant == other.constant and self.coeffs == other.coeffs

    def __repr__(self):
        parts = [f"{self.constant:g}"] + [f"{c:+g}*z{i}" for i, c in sorted(self.coeffs.items())]
        return "LinearExpr(" + " ".join(parts) + ")"


def apply_L(p: Polynomial, index_map: MomentIndexMap, register: bool = True) -> LinearExpr:
    """Replace every monomial x^alpha of ``p`` by its moment variable y_alpha.

    Args:
        p: Polynomial to linearize.
        index_map: Moment variable registry.
        register: Create missing moment variables. When False an unknown
            monomial raises ``UnknownMonomialError``.
    """
    constant = 0.0
    coeffs: dict[int, float] = {}
    for e, c in p.terms.items():
        if not e:
            constant += c
            continue
        idx = index_map.register(e) if register else index_map.index(e)
        coeffs[idx] = coeffs.get(idx, 0.0) + c
    return LinearExpr(constant, coeffs)


def symbolic_outer(b: Sequence[Exponent], weight: Polynomial | None = None) -> list[list[Polynomial]]:
    """Symmetric matrix with entries ``weight * b[i] * b[j]``."""
    if weight is None:
        weight = Polynomial.constant(1.0)
    size = len(b)
    out: list[list[Polynomial]] = [[None] * size for _ in range(size)]
    for i in range(size):
        for j in range(i, size):
            entry = weight.times_monomial(b[i] * b[j])
            out[i][j] = entry
            out[j][i] = entry
    return out


def lift_point(x: Sequence[float], index_map: MomentIndexMap) -> np.ndarray:
    """Moment vector y_alpha = x^alpha for every registered monomial.

    Auxiliary scalars are left at zero; callers fill them when needed.
    """
    values = np.zeros(len(index_map))
    for i, exponent in index_map.moments():
        values[i] = exponent.evaluate(x)
    return values

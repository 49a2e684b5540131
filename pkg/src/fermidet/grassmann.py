"""Finite-dimensional exterior algebra.

Elements of the exterior algebra over an ``N``-dimensional complex space are
stored sparsely as ``{mask: coefficient}`` where bit ``i`` of ``mask`` marks the
generator ``e_{i+1}`` and the basis monomial is the wedge of the marked
generators in ascending order.

Conventions
-----------
* A one-form ``alpha`` is given by its coefficient vector, ``alpha = sum_i
  alpha[i] e_i``, and pairs bilinearly with a vector: ``alpha(v) = alpha @ v``.
* ``contract_apply(u, .)`` is the interior product by the vector ``u``; it is
  the degree -1 antiderivation with ``u _| e_i = u[i]``.
* The duality pairing of ``alpha_1 ^ ... ^ alpha_k`` with ``v_1 ^ ... ^ v_k`` is
  ``det(alpha_i(v_j))``; in coefficients it is ``sum_S a_S b_S``.
* The Hilbert-space structure identifies a vector ``u`` with the one-form
  ``conj(u)``, so ``(u ^)`` in the adjoint relations means
  ``wedge_apply(u.conj(), .)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

MAX_DIMENSION = 16


class DimensionError(ValueError):
    pass


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _bits(mask: int):
    i = 0
    while mask:
        if mask & 1:
            yield i
        mask >>= 1
        i += 1


def _reorder_sign(left: int, right: int) -> int:
    """Sign of ``e_left ^ e_right`` relative to the sorted monomial."""
    # every generator of ``right`` must move past the larger generators of ``left``
    n = 0
    for j in _bits(right):
        n += _popcount(left >> (j + 1))
    return -1 if n & 1 else 1


@dataclass(frozen=True)
class Multivector:
    """Sparse element of the exterior algebra over ``C^dim``."""

    dim: int
    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= self.dim <= MAX_DIMENSION:
            raise DimensionError(f"dimension must lie in 1..{MAX_DIMENSION}, got {self.dim}")

    @classmethod
    def scalar(cls, dim: int, value: complex = 1.0) -> "Multivector":
        return cls(dim, {0: complex(value)} if value != 0 else {})

    @classmethod
    def one_form(cls, vector) -> "Multivector":
        vector = np.asarray(vector, dtype=complex)
        return cls(len(vector), {1 << i: complex(c) for i, c in enumerate(vector) if c != 0})

    @classmethod
    def monomial(cls, dim: int, generators: Sequence[int], value: complex = 1.0) -> "Multivector":
        """``value * e_{g_1} ^ ... ^ e_{g_k}`` with zero-based generator indices in any order."""
        out = cls.scalar(dim, value)
        for g in reversed(list(generators)):
            basis = np.zeros(dim, dtype=complex)
            basis[g] = 1.0
            out = wedge_apply(basis, out)
        return out

    @classmethod
    def random(cls, dim: int, rng, density: float = 1.0) -> "Multivector":
        coeffs = {}
        for mask in range(1 << dim):
            if density >= 1.0 or rng.random() < density:
                coeffs[mask] = complex(rng.normal(), rng.normal())
        return cls(dim, coeffs)

    def grade(self, k: int) -> "Multivector":
        return Multivector(self.dim, {m: c for m, c in self.coeffs.items() if _popcount(m) == k})

    @property
    def scalar_part(self) -> complex:
        return self.coeffs.get(0, 0j)

    def norm(self) -> float:
        return float(np.sqrt(sum(abs(c) ** 2 for c in self.coeffs.values())))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(1 << self.dim, dtype=complex)
        for m, c in self.coeffs.items():
            out[m] = c
        return out

    @classmethod
    def from_dense(cls, dim: int, values) -> "Multivector":
        return cls(dim, {m: complex(c) for m, c in enumerate(values) if c != 0})

    def pruned(self, eps: float) -> "Multivector":
        return Multivector(self.dim, {m: c for m, c in self.coeffs.items() if abs(c) > eps})

    def _check(self, other: "Multivector"):
        if other.dim != self.dim:
            raise DimensionError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other: "Multivector") -> "Multivector":
        self._check(other)
        out = dict(self.coeffs)
        for m, c in other.coeffs.items():
            out[m] = out.get(m, 0j) + c
        return Multivector(self.dim, out)

    def __sub__(self, other: "Multivector") -> "Multivector":
        return self + other.scale(-1.0)

    def __neg__(self) -> "Multivector":
        return self.scale(-1.0)

    def scale(self, factor: complex) -> "Multivector":
        return Multivector(self.dim, {m: factor * c for m, c in self.coeffs.items()})

    def wedge(self, other: "Multivector") -> "Multivector":
        """Exterior product ``self ^ other``."""
        self._check(other)
        out: dict = {}
        for ma, ca in self.coeffs.items():
            for mb, cb in other.coeffs.items():
                if ma & mb:
                    continue
                m = ma | mb
                out[m] = out.get(m, 0j) + _reorder_sign(ma, mb) * ca * cb
        return Multivector(self.dim, out)

    __mul__ = wedge


def _as_vector(v, dim: int) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if v.shape != (dim,):
        raise DimensionError(f"expected a vector of length {dim}, got shape {v.shape}")
    return v


def wedge_apply(alpha, m: Multivector) -> Multivector:
    """Apply ``(alpha ^)`` to ``m``."""
    alpha = _as_vector(alpha, m.dim)
    out: dict = {}
    for i in np.flatnonzero(alpha):
        bit = 1 << int(i)
        a = alpha[i]
        for mask, c in m.coeffs.items():
            if mask & bit:
                continue
            sign = -1 if _popcount(mask & (bit - 1)) & 1 else 1
            key = mask | bit
            out[key] = out.get(key, 0j) + sign * a * c
    return Multivector(m.dim, out)


def contract_apply(u, m: Multivector) -> Multivector:
    """Apply the interior product ``(u _|)`` to ``m``."""
    u = _as_vector(u, m.dim)
    out: dict = {}
    for i in np.flatnonzero(u):
        bit = 1 << int(i)
        a = u[i]
        for mask, c in m.coeffs.items():
            if not mask & bit:
                continue
            sign = -1 if _popcount(mask & (bit - 1)) & 1 else 1
            key = mask ^ bit
            out[key] = out.get(key, 0j) + sign * a * c
    return Multivector(m.dim, out)


def inner(a: Multivector, b: Multivector) -> complex:
    """Hermitian scalar product, antilinear in ``a``."""
    a._check(b)
    return sum(np.conj(c) * b.coeffs.get(m, 0j) for m, c in a.coeffs.items())


def pairing(a: Multivector, b: Multivector) -> complex:
    """Bilinear duality pairing between forms and multivectors."""
    a._check(b)
    return sum(c * b.coeffs.get(m, 0j) for m, c in a.coeffs.items())


def car_defect(alpha, u, m: Multivector) -> float:
    """Norm of ``((alpha^)(u_|) + (u_|)(alpha^)) m - alpha(u) m``."""
    alpha = _as_vector(alpha, m.dim)
    u = _as_vector(u, m.dim)
    lhs = wedge_apply(alpha, contract_apply(u, m)) + contract_apply(u, wedge_apply(alpha, m))
    return (lhs - m.scale(alpha @ u)).norm()


def wedge_all(vectors, dim: int) -> Multivector:
    out = Multivector.scalar(dim)
    for v in reversed(list(vectors)):
        out = wedge_apply(v, out)
    return out


def duality_det(alphas, vs) -> complex:
    """``det(alpha_i(v_j))``, evaluated through the algebra pairing."""
    alphas = [np.asarray(a, dtype=complex) for a in alphas]
    vs = [np.asarray(v, dtype=complex) for v in vs]
    if len(alphas) != len(vs):
        raise ValueError(f"need equally many forms and vectors, got {len(alphas)} and {len(vs)}")
    if not alphas:
        return 1.0 + 0j
    dim = len(alphas[0])
    if len(alphas) > dim:
        return 0j
    return pairing(wedge_all(alphas, dim), wedge_all(vs, dim))


class OrderedLabel(NamedTuple):
    """Label ``(time, tier, rank)``; tuples compare lexicographically."""

    time: float
    tier: int
    rank: int


def extend_order(phi_labels, phi_prime_labels, strict: bool = True):
    """Break ties between column labels ``phi`` and row labels ``phi_prime``.

    Returns ``(J, J_prime)`` lists of distinct :class:`OrderedLabel` such that
    ``J_prime[k] > J[l]`` holds exactly when ``phi_prime[k] > phi[l]``
    (``strict=True``) or ``phi_prime[k] >= phi[l]`` (``strict=False``).
    """
    row_tier, col_tier = (0, 1) if strict else (1, 0)
    seen_row: dict = {}
    seen_col: dict = {}
    J = []
    for t in phi_labels:
        seen_col[t] = seen_col.get(t, 0) + 1
        J.append(OrderedLabel(float(t), col_tier, seen_col[t]))
    J_prime = []
    for t in phi_prime_labels:
        seen_row[t] = seen_row.get(t, 0) + 1
        J_prime.append(OrderedLabel(float(t), row_tier, seen_row[t]))
    return J, J_prime


def permutation_sign(perm) -> int:
    perm = list(perm)
    inversions = sum(1 for i, j in itertools.combinations(range(len(perm)), 2) if perm[i] > perm[j])
    return -1 if inversions & 1 else 1


def rho_sign(J, J_prime) -> int:
    """``(-1)**#{(j, j') in J x J' : j > j'}``."""
    if set(J) & set(J_prime):
        raise ValueError("label sets must be disjoint")
    crossings = sum(1 for j in J for jp in J_prime if j > jp)
    return -1 if crossings & 1 else 1


class ChronoOperator(NamedTuple):
    kind: str  # "wedge" or "contract"
    vector: np.ndarray
    label: tuple

    @property
    def degree(self) -> int:
        return 1 if self.kind == "wedge" else -1

    def apply(self, m: Multivector) -> Multivector:
        if self.kind == "wedge":
            return wedge_apply(self.vector, m)
        if self.kind == "contract":
            return contract_apply(self.vector, m)
        raise ValueError(f"unknown operator kind {self.kind!r}")


def chrono_product_apply(ops: Sequence[ChronoOperator], m: Multivector) -> Multivector:
    """Label-ordered, permutation-signed product of odd operators applied to ``m``.

    The product is ``sgn(pi) * op[pi(1)] ... op[pi(K)]`` with ``pi`` sorting the
    labels ascending, so the operator with the largest label acts first.
    """
    labels = [op.label for op in ops]
    if len(set(labels)) != len(labels):
        raise ValueError("chronological product needs pairwise distinct labels")
    perm = sorted(range(len(ops)), key=lambda i: labels[i])
    out = m
    for i in reversed(perm):
        out = ops[i].apply(out)
    return out if permutation_sign(perm) > 0 else out.scale(-1.0)


def chrono_det(alphas, vs, J, J_prime) -> complex:
    """``det(alpha_k(v_l) 1[J'_k > J_l])`` as a chronological product applied to 1.

    ``J`` labels the contractions by ``v_l`` and ``J_prime`` the wedges by
    ``alpha_k``; both must be sorted ascending and disjoint.
    """
    n = len(alphas)
    if not (len(vs) == len(J) == len(J_prime) == n):
        raise ValueError("alphas, vs, J and J_prime must have equal lengths")
    if n == 0:
        return 1.0 + 0j
    dim = len(alphas[0])
    if n > dim:
        raise DimensionError(f"n={n} exceeds the space dimension {dim}")
    if list(J) != sorted(J) or list(J_prime) != sorted(J_prime):
        raise ValueError("label lists must be sorted ascending")
    if set(J) & set(J_prime):
        raise ValueError("label sets must be disjoint")
    ops = [ChronoOperator("contract", np.asarray(v, dtype=complex), j) for v, j in zip(vs, J)]
    ops += [ChronoOperator("wedge", np.asarray(a, dtype=complex), j) for a, j in zip(alphas, J_prime)]
    value = chrono_product_apply(ops, Multivector.scalar(dim)).scalar_part
    return value if (n * (n - 1) // 2) % 2 == 0 else -value


def chrono_masked_det(alphas, vs, row_times, col_times, strict: bool = True) -> complex:
    """Signed ``det(alpha_k(v_l) 1[row_k > col_l])`` (``>=`` if not strict) for arbitrary labels.

    Ties are resolved by :func:`extend_order`; rows and columns are sorted by
    their extended labels and the permutation signs restored.
    """
    J, J_prime = extend_order(col_times, row_times, strict)
    cols = sorted(range(len(J)), key=lambda i: J[i])
    rows = sorted(range(len(J_prime)), key=lambda i: J_prime[i])
    value = chrono_det(
        [alphas[k] for k in rows],
        [vs[l] for l in cols],
        [J[l] for l in cols],
        [J_prime[k] for k in rows],
    )
    return value * permutation_sign(rows) * permutation_sign(cols)


def gaussian_integral(covariance, monomial) -> complex:
    """Grassmann Gaussian expectation of an ordered field monomial.

    Fields are ``(barred, index)`` pairs; the two-point function is
    ``E[psibar_a psi_b] = covariance[a, b]``. The result is the Wick
    determinant with the sign of the reordering to
    ``psibar_{a1} psi_{b1} psibar_{a2} psi_{b2} ...``.
    """
    C = np.asarray(covariance, dtype=complex)
    size = C.shape[0]
    bars = [i for i, (barred, _) in enumerate(monomial) if barred]
    plain = [i for i, (barred, _) in enumerate(monomial) if not barred]
    for _, idx in monomial:
        if not 0 <= idx < size:
            raise IndexError(f"field index {idx} out of range for a {size}x{size} covariance")
    if len(bars) != len(plain):
        return 0j
    if not bars:
        return 1.0 + 0j
    order = [p for pair in zip(bars, plain) for p in pair]
    a = [monomial[i][1] for i in bars]
    b = [monomial[i][1] for i in plain]
    return permutation_sign(order) * complex(np.linalg.det(C[np.ix_(a, b)]))

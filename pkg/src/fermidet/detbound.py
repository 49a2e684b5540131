"""Randomized verification of determinant bounds.

A constant ``delta`` is a determinant bound for a matrix rule ``C`` when every
matrix ``(<p_i, q_j> C[x_i, y_j])`` with unit vectors ``p_i, q_j`` has
``|det| <= delta**(2n)``. The supremum cannot be computed, so the harness only
samples: it asserts the one-sided inequality on every trial and records the
largest ``|det|**(1/(2n))`` seen as a tightness diagnostic.

Trials for a given size ``n`` draw from the stream
``numpy.random.default_rng([seed, n, stream])`` so results do not depend on
how sizes are scheduled.
"""

from __future__ import annotations

import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .covariance import DomainError, LatticeModel, covariance_matrix, sup_covariance_witness

REL_SLACK = 1e-9
ABS_FLOOR = 1e-14


class UnverifiedGramConstant(ValueError):
    pass


def sample_unit_ball(n: int, rng, size=None) -> np.ndarray:
    """Uniform draw from the unit sphere of ``C^n`` (shape ``size + (n,)``)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (n,)
    z = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def sample_interpolation_matrix(n: int, rng, size=None):
    """Random hermitian PSD ``P = Q^* Q`` with ``P_ii <= 1``; returns ``(P, Q)``."""
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (n, n)
    R = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    col = np.linalg.norm(R, axis=-2, keepdims=True)
    Q = R / np.maximum(1.0, col) * rng.uniform(0.2, 1.0, size=col.shape)
    P = np.conj(np.swapaxes(Q, -1, -2)) @ Q
    return P, Q


def abs_det(M: np.ndarray) -> np.ndarray:
    """``|det|`` by LAPACK pivoted LU, batched over leading axes."""
    return np.abs(np.linalg.det(M))


# ---------------------------------------------------------------- matrix specs


@dataclass(frozen=True)
class GramPiece:
    """``C_xy = <v_x, w_y>`` on a finite index set, optionally times a time-order indicator."""

    v: np.ndarray
    w: np.ndarray
    gamma: float
    indicator: str = "none"  # "none", "strict" (phi'(x) > phi(y)) or "weak" (>=)
    phi: np.ndarray | None = None
    phi_prime: np.ndarray | None = None

    def verify(self) -> float:
        norms = max(np.linalg.norm(self.v, axis=1).max(), np.linalg.norm(self.w, axis=1).max())
        if norms > self.gamma * (1 + 1e-12):
            raise UnverifiedGramConstant(f"vector norm {norms:.6g} exceeds claimed Gram constant {self.gamma:.6g}")
        if self.indicator != "none" and (self.phi is None or self.phi_prime is None):
            raise UnverifiedGramConstant("indicator pieces need both time maps")
        return float(norms)

    def matrix(self, xs, ys) -> np.ndarray:
        xs, ys = np.asarray(xs), np.asarray(ys)
        M = np.conj(self.v[xs]) @ self.w[ys].swapaxes(-1, -2)
        if self.indicator == "strict":
            M = M * (self.phi_prime[xs][..., :, None] > self.phi[ys][..., None, :])
        elif self.indicator == "weak":
            M = M * (self.phi_prime[xs][..., :, None] >= self.phi[ys][..., None, :])
        return M


def gram_sum_bound(pieces: Sequence[GramPiece]) -> float:
    """Determinant bound ``sum_l gamma_l`` for a sum of (indicator-masked) Gram pieces."""
    for piece in pieces:
        piece.verify()
    return float(sum(piece.gamma for piece in pieces))


@dataclass
class CovarianceMatrixSpec:
    """Rule for matrix entries plus a point sampler.

    ``kind`` is one of ``fermion_full``, ``fermion_uv``, ``fermion_ir``,
    ``step_u``, ``constant`` or ``gram_sum``.
    """

    kind: str
    model: LatticeModel | None = None
    Omega: float | None = None
    cutoff: object = None
    constant: complex = 1.0
    pieces: list = field(default_factory=list)
    cluster_prob: float = 0.3
    _split: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind in ("fermion_full", "fermion_uv", "fermion_ir") and self.model is None:
            raise DomainError(f"{self.kind} needs a lattice model")
        if self.kind in ("fermion_uv", "fermion_ir"):
            from .scales import STRICT_BUMP, scale_split

            if self.Omega is None:
                raise DomainError(f"{self.kind} needs Omega")
            if self.cutoff is None:
                self.cutoff = STRICT_BUMP
            self._split = scale_split(self.model, self.cutoff, self.Omega)
        if self.kind == "gram_sum":
            gram_sum_bound(self.pieces)

    @property
    def label(self) -> str:
        if self.kind in ("fermion_uv", "fermion_ir"):
            return f"{self.kind}(Omega={self.Omega:g})"
        if self.kind == "constant":
            return f"constant({self.constant})"
        return self.kind

    def bound(self) -> float:
        """Theoretical determinant bound of the rule."""
        if self.kind == "fermion_full":
            return 2 * math.sqrt(self.model.h_norm)
        if self.kind == "fermion_uv":
            return 2 * math.sqrt(self.model.h_norm) + self.ir_gram_constant()
        if self.kind == "fermion_ir":
            return self.ir_gram_constant()
        if self.kind == "step_u":
            return 1.0
        if self.kind == "constant":
            return math.sqrt(abs(self.constant))
        if self.kind == "gram_sum":
            return gram_sum_bound(self.pieces)
        raise ValueError(f"unknown spec kind {self.kind!r}")

    def ir_gram_constant(self) -> float:
        """Standard Gram constant of ``C_<``: ``sqrt(sum |chi_< h / (i w - E)|) / beta``."""
        split = self._split
        E = self.model.energies
        w = split.frequencies
        chi = self.cutoff(w / self.Omega)
        total = np.sum(chi[:, None] * np.abs(self.model.h_values)[None, :] / np.abs(1j * w[:, None] - E[None, :]))
        return float(math.sqrt(total / (self.model.beta * self.model.volume) + split.tail_bound))

    # -- points

    def sample_points(self, n: int, rng, trials: int):
        """Two point sets per trial. Times are clustered with probability ``cluster_prob``."""
        if self.kind == "gram_sum":
            size = self.pieces[0].v.shape[0]
            return rng.integers(0, size, (trials, n)), rng.integers(0, size, (trials, n))
        beta = self.model.beta if self.model is not None else 1.0
        taus = rng.uniform(0, beta, (trials, 2 * n))
        clustered = rng.random((trials, 2 * n)) < self.cluster_prob
        donors = rng.integers(0, 2 * n, (trials, 2 * n))
        jitter = rng.choice([0.0, 1e-12, -1e-12, 1e-9, -1e-9], size=(trials, 2 * n))
        copied = np.take_along_axis(taus, donors, axis=1) + jitter
        taus = np.where(clustered, np.clip(copied, 0.0, np.nextafter(beta, 0)), taus)
        if self.kind in ("step_u", "constant"):
            return taus[:, :n], taus[:, n:]
        d, L = self.model.d, self.model.L
        xs = rng.integers(0, L, (trials, 2 * n, d))
        same_site = rng.random((trials, 2 * n)) < self.cluster_prob
        xs = np.where(same_site[..., None], xs[:, :1, :], xs)
        return (taus[:, :n], xs[:, :n]), (taus[:, n:], xs[:, n:])

    def matrix(self, pts_x, pts_y) -> np.ndarray:
        if self.kind == "fermion_full":
            (tx, xx), (ty, xy) = pts_x, pts_y
            return covariance_matrix(tx, xx, ty, xy, self.model)
        if self.kind in ("fermion_uv", "fermion_ir"):
            (tx, xx), (ty, xy) = pts_x, pts_y
            return self._scale_matrix(tx, xx, ty, xy)
        if self.kind == "step_u":
            return (pts_x[..., :, None] >= pts_y[..., None, :]).astype(complex)
        if self.kind == "constant":
            return np.full(pts_x.shape + pts_y.shape[-1:], complex(self.constant))
        if self.kind == "gram_sum":
            return sum(piece.matrix(pts_x, pts_y) for piece in self.pieces)
        raise ValueError(f"unknown spec kind {self.kind!r}")

    def _scale_matrix(self, tx, xx, ty, xy):
        model = self.model
        tau = tx[..., :, None] - ty[..., None, :]
        dx = np.mod(xx[..., :, None, :] - xy[..., None, :, :], model.L)
        site = np.ravel_multi_index(tuple(np.moveaxis(dx, -1, 0)), (model.L,) * model.d)
        if self.kind == "fermion_ir":
            values = self._split.ir(tau)
        else:
            values = self._split.uv(tau)
        return np.take_along_axis(values, site[..., None], axis=-1)[..., 0]


# ---------------------------------------------------------------- trials


def masked_det_trial(spec: CovarianceMatrixSpec, n: int, rng, trials: int = 1) -> np.ndarray:
    """``|det(<p_i, q_j> C[x_i, y_j])|`` for ``trials`` independent draws."""
    pts_x, pts_y = spec.sample_points(n, rng, trials)
    C = spec.matrix(pts_x, pts_y)
    p = sample_unit_ball(n, rng, trials * n).reshape(trials, n, n)
    q = sample_unit_ball(n, rng, trials * n).reshape(trials, n, n)
    overlaps = np.conj(p) @ np.swapaxes(q, -1, -2)
    return abs_det(overlaps * C)


def interp_det_trial(spec: CovarianceMatrixSpec, n: int, rng, trials: int = 1, P=None) -> np.ndarray:
    """``|det(C[x_i, y_j] P_ij)|`` with ``P`` a random (or given) positive interpolation matrix."""
    pts_x, pts_y = spec.sample_points(n, rng, trials)
    C = spec.matrix(pts_x, pts_y)
    if P is None:
        P, _ = sample_interpolation_matrix(n, rng, trials)
    return abs_det(C * P)


@dataclass
class BoundReport:
    spec: str
    n_values: list
    trials: int
    seed: int
    observed: float
    bound: float
    margin: float
    passed: bool
    per_n: dict = field(default_factory=dict)
    witness: float | None = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pass"] = out.pop("passed")
        return out


def _worst_for_n(spec, n: int, trials: int, seed: int, mode: str, delta: float, batch: int):
    trial_fn = {"masked": masked_det_trial, "interp": interp_det_trial}[mode]
    rng = np.random.default_rng([seed, n, 0 if mode == "masked" else 1])
    worst = 0.0
    violations = 0
    limit = max(delta ** (2 * n) * (1 + REL_SLACK), ABS_FLOOR)
    for start in range(0, trials, batch):
        dets = trial_fn(spec, n, rng, min(batch, trials - start))
        violations += int(np.count_nonzero(dets > limit))
        worst = max(worst, float(np.max(dets)) ** (1 / (2 * n)))
    return worst, violations


_SHARED: dict = {}


def _forked_worker(i: int):
    return _worst_for_n(*_SHARED["args"][i])


def run_bound_suite(
    spec: CovarianceMatrixSpec,
    n_values=range(1, 7),
    trials: int = 10_000,
    seed: int = 0,
    mode: str = "masked",
    bound: float | None = None,
    batch: int = 2_000,
    workers: int = 1,
) -> BoundReport:
    """Max of ``|det|**(1/(2n))`` over trials for each ``n``; pass iff it never exceeds the bound.

    Each ``n`` owns its random stream, so ``workers > 1`` (one process per
    ``n``) gives the same report as a serial run.
    """
    if mode not in ("masked", "interp"):
        raise ValueError(f"unknown trial mode {mode!r}")
    delta = spec.bound() if bound is None else bound
    n_values = list(n_values)
    args = [(spec, n, trials, seed, mode, delta, batch) for n in n_values]
    if workers > 1 and len(n_values) > 1 and "fork" in mp.get_all_start_methods():
        # model callables are closures, so workers inherit the arguments by fork
        _SHARED["args"] = args
        try:
            with ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("fork")) as pool:
                results = list(pool.map(_forked_worker, range(len(args))))
        finally:
            _SHARED.clear()
    else:
        results = [_worst_for_n(*a) for a in args]
    per_n = {str(n): {"observed": w, "violations": v} for n, (w, v) in zip(n_values, results)}
    observed = max(w for w, _ in results)
    passed = all(v == 0 for _, v in results)
    return BoundReport(
        spec=spec.label,
        n_values=n_values,
        trials=trials,
        seed=seed,
        observed=observed,
        bound=delta,
        margin=delta - observed,
        passed=bool(passed),
        per_n=per_n,
    )


def diagonal_witness(model: LatticeModel) -> float:
    """``|det|**(1/(2n))`` of ``diag(C[x_i, x_i'])`` at the points maximizing ``|C|``.

    Equal sites with ``t' = t`` give ``rho_+``; ``t' -> t`` from below gives
    ``-rho_-``. For every ``n`` the diagonal determinant equals the ``n``-th
    power, so the witness is the square root of ``max(rho_+, rho_-)``.
    """
    return math.sqrt(sup_covariance_witness(model))


def witness_matrix(model: LatticeModel, n: int, below: bool) -> np.ndarray:
    """Explicit diagonal-witness matrix ``(C[x_i, y_j] delta_ij)`` with ``p_i = q_i = e_i``."""
    t = np.linspace(0.1, 0.9, n) * model.beta
    shift = 1e-13 if below else 0.0
    xs = np.zeros((n, model.d))
    C = covariance_matrix(t, xs, t - shift, xs, model)
    return C * np.eye(n)


def masked_gram_det_trial(n: int, dim: int, rng, trials: int, strict: bool, levels: int = 3):
    """``(|det(<v_k, w_l> 1[phi'(k) > phi(l)])|, prod ||v_k|| ||w_k||)`` with repeated labels."""
    shape = (trials, n, dim)
    v = (rng.normal(size=shape) + 1j * rng.normal(size=shape)) * rng.uniform(0.1, 2.0, (trials, n, 1))
    w = (rng.normal(size=shape) + 1j * rng.normal(size=shape)) * rng.uniform(0.1, 2.0, (trials, n, 1))
    phi = rng.integers(0, levels, (trials, n)).astype(float)
    phi_prime = rng.integers(0, levels, (trials, n)).astype(float)
    G = np.conj(v) @ np.swapaxes(w, -1, -2)
    mask = phi_prime[:, :, None] > phi[:, None, :] if strict else phi_prime[:, :, None] >= phi[:, None, :]
    dets = abs_det(G * mask)
    norms = np.prod(np.linalg.norm(v, axis=-1), axis=-1) * np.prod(np.linalg.norm(w, axis=-1), axis=-1)
    return dets, norms


# ---------------------------------------------------------------- Laplace / subdeterminant property


def pi_property_trials(A: np.ndarray, gamma: float, rng, trials: int = 2_000) -> float:
    """Largest ``|det|**(1/(2p)) / gamma`` over random submatrix selections and unit vectors."""
    n = A.shape[0]
    worst = 0.0
    for _ in range(trials):
        p = int(rng.integers(1, n + 1))
        a = np.sort(rng.choice(n, p, replace=False))
        b = np.sort(rng.choice(n, p, replace=False))
        v = sample_unit_ball(n, rng, p)
        w = sample_unit_ball(n, rng, p)
        M = (np.conj(v) @ w.T) * A[np.ix_(a, b)]
        worst = max(worst, float(abs_det(M)) ** (1 / (2 * p)) / gamma)
    return worst


def laplace_sum_check(A_pieces, gammas, rng, trials: int = 2_000, seed: int = 0) -> BoundReport:
    """Check the subdeterminant property of ``sum A_l`` with constant ``sum gamma_l``.

    Each piece is first checked empirically against its own constant; a piece
    that fails raises :class:`UnverifiedGramConstant`.
    """
    for A, g in zip(A_pieces, gammas):
        if pi_property_trials(np.asarray(A), g, rng, trials // 4 or 1) > 1 + REL_SLACK:
            raise UnverifiedGramConstant(f"piece violates its claimed constant {g}")
    total = sum(np.asarray(A, dtype=complex) for A in A_pieces)
    bound = float(sum(gammas))
    worst = pi_property_trials(total, bound, rng, trials) * bound
    n = total.shape[0]
    return BoundReport(
        spec=f"laplace_sum[{len(A_pieces)}]",
        n_values=list(range(1, n + 1)),
        trials=trials,
        seed=seed,
        observed=worst,
        bound=bound,
        margin=bound - worst,
        passed=bool(worst <= bound * (1 + REL_SLACK)),
    )


def binomial_square_check(p_max: int = 12) -> bool:
    """``C(p, s)^2 <= C(2p, 2s)`` for all ``0 <= s <= p <= p_max``."""
    return all(math.comb(p, s) ** 2 <= math.comb(2 * p, 2 * s) for p in range(p_max + 1) for s in range(p + 1))


def hadamard_comparison(n: int) -> tuple[float, float]:
    """Hadamard bound and optimal Gram bound for the all-ones ``n x n`` matrix."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(n ** (n / 2)), 1.0


# ---------------------------------------------------------------- step matrix


def step_gram_representation(times, rng=None):
    """Vectors with ``<v_s, w_t> = 1[s >= t]`` for the given distinct times.

    ``v_s`` is the indicator of the times ``<= s`` and ``w_t`` the unit vector at
    ``t``; an optional random unitary rotation keeps the representation valid.
    Returns ``(v, w, gamma)`` keyed by time.
    """
    times = sorted(float(t) for t in times)
    m = len(times)
    V = np.tril(np.ones((m, m), dtype=complex))
    W = np.eye(m, dtype=complex)
    if rng is not None:
        Z = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
        U, _ = np.linalg.qr(Z)
        V, W = V @ U.T, W @ U.T
    v = {t: V[i] for i, t in enumerate(times)}
    w = {t: W[i] for i, t in enumerate(times)}
    gamma = float(max(np.linalg.norm(V, axis=1).max(), np.linalg.norm(W, axis=1).max()))
    return v, w, gamma


def gram_separation_check(times, candidate_w: dict, gamma: float, tol: float = 1e-12) -> bool:
    """All distinct-time pairs satisfy ``||w_t - w_t'|| >= 1/gamma``."""
    times = sorted(set(float(t) for t in times))
    for i, t in enumerate(times):
        for s in times[i + 1 :]:
            if np.linalg.norm(np.asarray(candidate_w[t]) - np.asarray(candidate_w[s])) < 1 / gamma - tol:
                return False
    return True


def fermion_gram_pieces(model: LatticeModel, points):
    """Explicit finite Gram pieces of the many-fermion covariance on a finite point set.

    Each point carries vectors in ``L^2(R x torus)`` discretized exactly by
    Cholesky factors of their Gram matrix, so the indicator decomposition
    (strict order in ``t``, weak order in ``-t``) can be assembled as a
    :class:`GramPiece` sum.
    """
    from .covariance import GramVector, gram_inner_product

    beta = model.beta
    taus = [float(p[0]) for p in points]
    xs = [tuple(np.atleast_1d(p[1])) for p in points]
    m = len(points)
    # basis: for each point the five vectors g+_t, g-_{beta-t}, h_t, g+_{t-beta}
    basis = []
    for t, x in zip(taus, xs):
        basis += [GramVector("g+", t, x), GramVector("g-", beta - t, x), GramVector("h", t, x), GramVector("g+", t - beta, x)]
    G = np.array([[gram_inner_product(a, b, model) for b in basis] for a in basis])
    evals, evecs = np.linalg.eigh((G + G.conj().T) / 2)
    evals = np.clip(evals, 0, None)
    # coordinates with <e_i, e_j> = G_ij
    coords = (evecs * np.sqrt(evals)).conj()
    c = coords.reshape(m, 4, -1)
    gplus, gminus, hvec, gshift = c[:, 0], c[:, 1], c[:, 2], c[:, 3]
    v1, w1 = -gplus - gminus, gplus + hvec
    v2, w2 = gplus + hvec, gshift + hvec
    gamma = math.sqrt(model.h_norm)
    gamma1 = float(max(np.linalg.norm(v1, axis=1).max(), np.linalg.norm(w1, axis=1).max(), gamma))
    gamma2 = float(max(np.linalg.norm(v2, axis=1).max(), np.linalg.norm(w2, axis=1).max(), gamma))
    t = np.asarray(taus)
    return [
        GramPiece(v1, w1, gamma1, "strict", phi=t, phi_prime=t),
        GramPiece(v2, w2, gamma2, "weak", phi=-t, phi_prime=-t),
    ]

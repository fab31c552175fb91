"""Multivariate normal/t rectangle probabilities and equicoordinate quantiles.

Rectangle probabilities ``P(X_1 <= u_1, ..., X_d <= u_d)`` are computed with
the separation-of-variables transform to the unit cube (sequential
conditioning through a Cholesky factor, with variable reordering so the most
truncating coordinates come first), integrated by randomized quasi-Monte
Carlo: scrambled Sobol points in >= 8 independent randomization replicates.
The reported error estimate is three standard errors across replicates.
Student-t rectangles mix the normal transform over the chi scale inside the
same QMC loop, using one extra cube coordinate.

Everything is deterministic given an :class:`~fwersim.rng.RngStream`: the
replicate scrambles derive from the stream, so identical (seed, path) gives
bit-identical probabilities on any worker layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincinv, ndtr, ndtri
from scipy.stats import qmc
from scipy.stats import t as student_t

from .errors import NumericError
from .rng import RngStream

__all__ = [
    "CorrelationMatrix",
    "MvProbResult",
    "mv_normal_prob",
    "mv_t_prob",
    "equicoordinate_quantile",
    "true_fwer_given_shift",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 5e-4
_REPLICATES = 8
_START_POINTS = 1 << 10
_MAX_POINTS = 1 << 17
_QUANTILE_MAX_POINTS = 1 << 15
_EIG_FLOOR = -1e-8


@dataclass(frozen=True)
class CorrelationMatrix:
    """Validated correlation matrix, PSD-repaired for integration.

    Accepts matrices that are symmetric within 1e-12 with unit diagonal and
    smallest eigenvalue >= -1e-8; negative eigenvalues inside that tolerance
    are clipped to zero and the diagonal renormalized.  Anything worse
    raises :class:`NumericError`.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise NumericError("correlation matrix must be square")
        if not np.all(np.abs(m - m.T) <= 1e-12):
            raise NumericError("correlation matrix must be symmetric")
        if not np.all(np.abs(np.diag(m) - 1.0) <= 1e-10):
            raise NumericError("correlation matrix must have unit diagonal")
        m = 0.5 * (m + m.T)
        w = np.linalg.eigvalsh(m)
        if w[0] < _EIG_FLOOR:
            raise NumericError(f"matrix is not PSD (min eigenvalue {w[0]:.3e})")
        if w[0] < 0.0:
            vals, vecs = np.linalg.eigh(m)
            m = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
            d = np.sqrt(np.clip(np.diag(m), 1e-300, None))
            m = m / np.outer(d, d)
            np.fill_diagonal(m, 1.0)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, d: int) -> "CorrelationMatrix":
        return cls(np.eye(d))

    @classmethod
    def equicorrelated(cls, d: int, rho: float) -> "CorrelationMatrix":
        m = np.full((d, d), float(rho))
        np.fill_diagonal(m, 1.0)
        return cls(m)


@dataclass(frozen=True)
class MvProbResult:
    """Probability estimate with its Monte Carlo error and cost."""

    value: float
    error_estimate: float
    points_used: int

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise NumericError(f"probability {self.value!r} outside [0, 1]")
        if self.error_estimate < 0:
            raise NumericError("negative error estimate")


def _ordered_cholesky(rmat: np.ndarray, upper: np.ndarray):
    """Genz variable reordering with on-the-fly Cholesky factorization.

    Picks, at each stage, the remaining variable with the smallest
    conditional mass (strongest truncation), which reduces the variance of
    the sequential-conditioning integrand.  Returns the lower factor and
    the permuted limits.
    """
    d = len(upper)
    a = rmat.copy()
    b = upper.astype(float).copy()
    lower = np.zeros((d, d))
    y = np.zeros(d)
    for i in range(d):
        best_j, best_p = i, np.inf
        for j in range(i, d):
            s2 = a[j, j] - lower[j, :i] @ lower[j, :i]
            num = b[j] - lower[j, :i] @ y[:i]
            if s2 > 1e-12:
                p = ndtr(num / np.sqrt(s2))
            else:
                p = 1.0 if num >= 0 else 0.0
            if p < best_p:
                best_p, best_j = p, j
        if best_j != i:
            for arr in (a,):
                arr[[i, best_j], :] = arr[[best_j, i], :]
                arr[:, [i, best_j]] = arr[:, [best_j, i]]
            lower[[i, best_j], :] = lower[[best_j, i], :]
            b[[i, best_j]] = b[[best_j, i]]
        s2 = a[i, i] - lower[i, :i] @ lower[i, :i]
        if s2 > 1e-12:
            lower[i, i] = np.sqrt(s2)
            ti = (b[i] - lower[i, :i] @ y[:i]) / lower[i, i]
            ti = np.clip(ti, -37.0, 37.0)
            den = max(ndtr(ti), 1e-300)
            y[i] = -np.exp(-0.5 * ti * ti) / np.sqrt(2.0 * np.pi) / den
            for j in range(i + 1, d):
                lower[j, i] = (a[j, i] - lower[j, :i] @ lower[i, :i]) / lower[i, i]
        else:
            # variable is a.s. determined by the previous ones
            lower[i, i] = 0.0
            y[i] = 0.0
    return lower, b


def _masses(lower: np.ndarray, b: np.ndarray, w: np.ndarray, df: float | None):
    """Sequential-conditioning integrand on a batch of cube points.

    ``w`` has shape (n, d-1) for the normal case and (n, d) with the first
    column driving the chi mixing scale for the t case.  Returns the (n,)
    per-point probability masses.
    """
    d = len(b)
    n = w.shape[0]
    if df is None:
        scale = None
        col = 0
    else:
        u0 = np.clip(w[:, 0], 1e-15, 1.0 - 1e-15)
        scale = np.sqrt(2.0 * gammaincinv(df / 2.0, u0) / df)
        col = 1

    b0 = b[0] if scale is None else scale * b[0]
    if lower[0, 0] > 1e-12:
        e = ndtr(b0 / lower[0, 0])
    else:
        e = np.where(b0 >= 0, 1.0, 0.0)
    if np.ndim(e) == 0:
        e = np.full(n, float(e))
    prev = np.asarray(e, dtype=float)
    f = prev.copy()
    if d == 1:
        return f
    y = np.empty((n, d - 1))
    for i in range(1, d):
        u = w[:, col + i - 1] * prev
        np.clip(u, 1e-300, 1.0 - 1e-16, out=u)
        y[:, i - 1] = ndtri(u)
        num = (b[i] if scale is None else scale * b[i]) - y[:, :i] @ lower[i, :i]
        if lower[i, i] > 1e-12:
            e_i = ndtr(num / lower[i, i])
        else:
            e_i = (num >= 0).astype(float)
        f *= e_i
        prev = e_i
    return f


def _reduce_rectangle(upper: np.ndarray, rmat: np.ndarray):
    """Drop unconstraining (+inf) coordinates; detect trivial answers."""
    upper = np.asarray(upper, dtype=float).reshape(-1)
    if upper.shape[0] != rmat.shape[0]:
        raise NumericError("limit vector and correlation dimension differ")
    if np.any(np.isneginf(upper)):
        return None, None, 0.0
    keep = ~np.isposinf(upper)
    if not np.any(keep):
        return None, None, 1.0
    return upper[keep], rmat[np.ix_(keep, keep)], None


def _sobol_engines(dim: int, rng: RngStream):
    gen = rng.generator()
    seeds = gen.integers(0, 2**63 - 1, size=_REPLICATES)
    return [qmc.Sobol(dim, scramble=True, seed=int(s)) for s in seeds]


def _adaptive_estimate(lower, b, df, tol, rng, max_points):
    dim = len(b) - 1 + (0 if df is None else 1)
    engines = _sobol_engines(dim, rng)
    sums = np.zeros(_REPLICATES)
    count = 0
    n_next = _START_POINTS
    while True:
        for r, eng in enumerate(engines):
            w = eng.random(n_next)
            sums[r] += _masses(lower, b, w, df).sum()
        count += n_next
        means = sums / count
        value = float(means.mean())
        err = 3.0 * float(means.std(ddof=1)) / np.sqrt(_REPLICATES)
        if err <= tol or count >= max_points:
            break
        n_next = count  # double the total
    return min(max(value, 0.0), 1.0), err, count * _REPLICATES


def mv_normal_prob(upper, corr: CorrelationMatrix, tol: float = DEFAULT_TOL,
                   rng: RngStream | None = None) -> MvProbResult:
    """P(X_1 <= u_1, ..., X_d <= u_d) for X ~ N(0, corr).

    Coordinates at ``+inf`` are unconstraining and any ``-inf`` coordinate
    gives probability 0 exactly; the univariate case is exact.  Otherwise
    the returned ``error_estimate`` is the achieved three-standard-error
    bound (target ``tol``, point budget capped at 2**17 per replicate).
    """
    rng = rng if rng is not None else RngStream(0)
    b, rmat, trivial = _reduce_rectangle(upper, corr.matrix)
    if trivial is not None:
        return MvProbResult(trivial, 0.0, 0)
    if len(b) == 1:
        return MvProbResult(float(ndtr(b[0])), 0.0, 0)
    lower, b_perm = _ordered_cholesky(rmat, b)
    value, err, used = _adaptive_estimate(lower, b_perm, None, tol, rng, _MAX_POINTS)
    return MvProbResult(value, err, used)


def mv_t_prob(upper, corr: CorrelationMatrix, df: float, tol: float = DEFAULT_TOL,
              rng: RngStream | None = None) -> MvProbResult:
    """Central multivariate t rectangle probability with ``df`` degrees of freedom."""
    if df <= 0:
        raise NumericError("df must be positive")
    rng = rng if rng is not None else RngStream(0)
    b, rmat, trivial = _reduce_rectangle(upper, corr.matrix)
    if trivial is not None:
        return MvProbResult(trivial, 0.0, 0)
    if len(b) == 1:
        return MvProbResult(float(student_t.cdf(b[0], df)), 0.0, 0)
    lower, b_perm = _ordered_cholesky(rmat, b)
    value, err, used = _adaptive_estimate(lower, b_perm, float(df), tol, rng, _MAX_POINTS)
    return MvProbResult(value, err, used)


class _FrozenRectangle:
    """Equicoordinate CDF with one frozen point set and variable order.

    Freezing both makes ``c -> F(c, ..., c)`` exactly monotone and
    noise-free, which is what the quantile bisection needs.
    """

    def __init__(self, corr: CorrelationMatrix, df: float | None, rng: RngStream,
                 tol: float, c_ref: float):
        self.df = df
        d = corr.dim
        b_ref = np.full(d, c_ref)
        self.lower, _ = _ordered_cholesky(corr.matrix, b_ref)
        self.d = d
        dim = d - 1 + (0 if df is None else 1)
        engines = _sobol_engines(dim, rng)
        n = _START_POINTS
        self.points = [eng.random(n) for eng in engines]
        # refine the point budget until the reference evaluation meets tol/2
        while True:
            _, err = self.evaluate(c_ref)
            if err <= 0.5 * tol or self.points[0].shape[0] >= _QUANTILE_MAX_POINTS:
                break
            self.points = [
                np.vstack([p, eng.random(p.shape[0])]) for p, eng in zip(self.points, engines)
            ]

    def evaluate(self, c: float):
        b = np.full(self.d, float(c))
        means = np.array([_masses(self.lower, b, w, self.df).mean() for w in self.points])
        value = float(means.mean())
        err = 3.0 * float(means.std(ddof=1)) / np.sqrt(len(means))
        return min(max(value, 0.0), 1.0), err


def _univariate_quantile(alpha: float, df: float | None) -> float:
    if df is None:
        return float(ndtri(1.0 - alpha))
    return float(student_t.ppf(1.0 - alpha, df))


def equicoordinate_quantile(corr: CorrelationMatrix, alpha: float, df: float | None = None,
                            tol: float = DEFAULT_TOL, rng: RngStream | None = None) -> float:
    """Threshold c with P(max_i X_i > c) = alpha for X ~ N/t(0, corr).

    Solves ``1 - F(c, ..., c) = alpha`` by bracketing between the
    single-test and Bonferroni quantiles and bisecting a frozen-point-set
    CDF, so the objective is monotone without integration noise.  The
    result satisfies ``|1 - F(c,...,c) - alpha| <= tol``.
    """
    if not 0.0 < alpha < 1.0:
        raise NumericError("alpha must be inside (0, 1)")
    if df is not None and df <= 0:
        raise NumericError("df must be positive")
    rng = rng if rng is not None else RngStream(0)
    d = corr.dim
    if d == 1:
        return _univariate_quantile(alpha, df)
    lo = _univariate_quantile(alpha, df)
    hi = _univariate_quantile(alpha / d, df)
    rect = _FrozenRectangle(corr, df, rng, tol, 0.5 * (lo + hi))
    target = 1.0 - alpha

    def g(c: float) -> float:
        return rect.evaluate(c)[0] - target

    g_lo, g_hi = g(lo), g(hi)
    width = max(hi - lo, 0.1)
    expansions = 0
    while g_lo > 0.0:
        lo -= width
        width *= 2.0
        g_lo = g(lo)
        expansions += 1
        if expansions > 50:
            raise NumericError("failed to bracket the equicoordinate quantile from below")
    expansions = 0
    while g_hi < 0.0:
        hi += width
        width *= 2.0
        g_hi = g(hi)
        expansions += 1
        if expansions > 50:
            raise NumericError("failed to bracket the equicoordinate quantile from above")

    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g_mid = g(mid)
        if abs(g_mid) <= 0.5 * tol:
            return mid
        if g_mid > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-12:
            return mid
    raise NumericError("equicoordinate quantile bisection did not converge")


def true_fwer_given_shift(shift, corr: CorrelationMatrix, c: float,
                          tol: float = DEFAULT_TOL, rng: RngStream | None = None) -> float:
    """P(at least one coordinate of N(shift, corr) exceeds c)."""
    shift = np.asarray(shift, dtype=float).reshape(-1)
    if shift.shape[0] != corr.dim:
        raise NumericError("shift vector and correlation dimension differ")
    res = mv_normal_prob(c - shift, corr, tol=tol, rng=rng)
    return min(max(1.0 - res.value, 0.0), 1.0)

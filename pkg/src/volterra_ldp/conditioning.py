"""Exact Gaussian conditional laws of a Volterra process.

Two observation schemes of the noisy channel ``W = alpha B + alpha_tilde B~``:

* finitely many linear functionals ``G_i = int_0^T g_i dW`` with observed
  values ``x`` (:class:`FunctionalConditionalLaw`);
* the whole path of ``W`` on ``[0, T]`` (:class:`PathConditionalLaw`).

Both laws are also exposed through small scikit-learn style estimators,
:class:`FunctionalConditioner` and :class:`PathConditioner`.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import NearSingularGramError, ValidationError
from .models import ConditioningFunction, ConditioningSet, ProcessModel, Tabulated
from .numerics import GramMatrix, quad_value, spd_factor

DEFAULT_COND_BOUND = 1e8
DEFAULT_COND_TOL = 1e-11
# the cached explicit inverse is only trusted for small systems
MAX_EXPLICIT_INVERSE = 8


def _check_horizon(gset: ConditioningSet, T: float):
    for g in gset.functions:
        if isinstance(g, Tabulated):
            g.check_horizon(T)


def _points(model: ProcessModel, *gs: ConditioningFunction):
    pts = list(model.kernel.singular_points())
    for g in gs:
        pts.extend(g.breakpoints(model.T))
    return tuple(pts)


def functional_gram(
    model: ProcessModel,
    gset: ConditioningSet,
    tol: float = DEFAULT_COND_TOL,
    cond_bound: float = DEFAULT_COND_BOUND,
) -> np.ndarray:
    """``C^g[i, j] = (alpha^2 + alpha_tilde^2) int_0^T g_i g_j``.

    Raises :class:`NearSingularGramError` when the condition number exceeds
    ``cond_bound``, i.e. the functions are numerically dependent.
    """
    _check_horizon(gset, model.T)
    n = len(gset)
    T = model.T
    C = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            gi, gj = gset.functions[i], gset.functions[j]
            pts = tuple(gi.breakpoints(T)) + tuple(gj.breakpoints(T))
            val = quad_value(lambda u: gi(u, T) * gj(u, T), 0.0, T, tol=tol, points=pts)
            C[i, j] = C[j, i] = model.noise_var * val
    cond = np.linalg.cond(C)
    if not np.isfinite(cond) or cond > cond_bound:
        raise NearSingularGramError(
            f"conditioning Gram matrix has condition number {cond:.3g} > {cond_bound:.3g}; "
            "the conditioning functions are numerically linearly dependent"
        )
    return C


def cross_cov(
    model: ProcessModel, g: ConditioningFunction, t: float, tol: float = DEFAULT_COND_TOL
) -> float:
    """``r(t) = alpha int_0^{t ^ T} K(t, u) g(u) du``."""
    t = float(t)
    if t < 0:
        raise ValidationError("t must be non-negative")
    if model.alpha == 0.0:
        return 0.0
    upper = min(t, model.T)
    if upper <= 0:
        return 0.0
    K = model.kernel.kernel
    T = model.T
    val = quad_value(lambda u: K(t, u) * g(u, T), 0.0, upper, tol=tol, points=_points(model, g))
    return model.alpha * val


def cross_cov_increment(
    model: ProcessModel, g: ConditioningFunction, t0: float, t: float, tol: float = DEFAULT_COND_TOL
) -> float:
    """``r(t) - r(t0)`` integrated as one difference, for ``t, t0 >= T``.

    Past ``T`` the functionals see only ``[0, T]``, so the difference is
    ``alpha int_0^T (K(t, u) - K(t0, u)) g(u) du`` with no cancellation.
    """
    T = model.T
    if min(t, t0) < T:
        return cross_cov(model, g, t, tol) - cross_cov(model, g, t0, tol)
    if model.alpha == 0.0 or t == t0:
        return 0.0
    K = model.kernel.kernel
    f = lambda u: (K(t, u) - K(t0, u)) * g(u, T)
    val = quad_value(f, 0.0, T, tol=tol, points=_points(model, g), abs_tol=1e-300)
    return model.alpha * val


class FunctionalConditionalLaw:
    """Law of ``X`` given ``int_0^T g_i dW = x_i`` for ``i = 1..n``.

    Mean ``m(t) = r(t)' C^-1 x`` and covariance
    ``k(t, s) - r(t)' C^-1 r(s)``.  Caches ``C^g`` and its Cholesky factor
    on construction; treat instances as immutable.
    """

    def __init__(
        self,
        model: ProcessModel,
        gset: ConditioningSet,
        tol: float = DEFAULT_COND_TOL,
        cond_bound: float = DEFAULT_COND_BOUND,
    ):
        self.model = model
        self.gset = gset
        self.tol = tol
        self.gram = functional_gram(model, gset, tol=tol, cond_bound=cond_bound)
        self._factor = spd_factor(self.gram, base_jitter=0.0)
        n = len(gset)
        self.gram_inv = (
            self._factor.solve(np.eye(n)) if n <= MAX_EXPLICIT_INVERSE else None
        )
        self._weights = self._factor.solve(np.asarray(gset.x, dtype=float))

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.gset.x, dtype=float)

    def solve(self, rhs) -> np.ndarray:
        """``(C^g)^-1 rhs`` through the cached Cholesky factor."""
        return cho_solve((self._factor.lower, True), rhs)

    def r(self, t) -> np.ndarray:
        """Cross covariances ``r_i(t)``; shape ``(len(t), n)`` for array ``t``."""
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.array(
            [[cross_cov(self.model, g, ti, self.tol) for g in self.gset.functions] for ti in ts]
        )
        return out[0] if np.ndim(t) == 0 else out

    def mean(self, t):
        rt = self.r(t)
        out = rt @ self._weights
        return float(out) if np.ndim(t) == 0 else out

    def kappa(self, t, s) -> float:
        rt, rs = self.r(t), self.r(s)
        return float(rt @ self.solve(rs))

    def cov(self, t, s) -> float:
        k = float(self.model.covariance(float(t), float(s)))
        return k - self.kappa(t, s)

    def cov_matrix(self, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        R = self.r(grid)
        K = self.model.covariance(grid[:, None], grid[None, :])
        out = K - R @ self.solve(R.T)
        return 0.5 * (out + out.T)

    def increment_cov(self, t0: float, t: float, s: float, kernel_quad: bool = False) -> float:
        """``Cov(X_t - X_t0, X_s - X_t0)`` under the conditional law."""
        if kernel_quad:
            base = self.model.increment_covariance_quad(t0, t, s)
        else:
            base = float(self.model.increment_covariance(t0, t, s))
        dr_t = np.array([cross_cov_increment(self.model, g, t0, t, self.tol) for g in self.gset.functions])
        dr_s = np.array([cross_cov_increment(self.model, g, t0, s, self.tol) for g in self.gset.functions])
        return base - float(dr_t @ self.solve(dr_s))


def conditional_mean_functional(law: FunctionalConditionalLaw, t: float) -> float:
    return law.mean(float(t))


def conditional_cov_functional(law: FunctionalConditionalLaw, t: float, s: float) -> float:
    return law.cov(float(t), float(s))


def _validate_path(model: ProcessModel, u, psi):
    u = np.asarray(u, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if u.ndim != 1 or u.shape != psi.shape or u.size < 2:
        raise ValidationError("path grid and values must be 1-d arrays of equal length >= 2")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(psi))):
        raise ValidationError("path grid and values must be finite")
    if u[0] != 0.0:
        raise ValidationError("path grid must start at 0")
    if not math.isclose(u[-1], model.T, rel_tol=1e-12, abs_tol=1e-14):
        raise ValidationError(f"path grid must end at T={model.T}, ends at {u[-1]}")
    if np.any(np.diff(u) <= 0):
        raise ValidationError("path grid must be strictly increasing")
    if psi[0] != 0.0:
        raise ValidationError("observed path must start at 0")
    return u, psi


class PathConditionalLaw:
    """Law of ``X`` given the observed noisy path ``psi`` of ``W`` on ``[0, T]``.

    Parameters
    ----------
    model : ProcessModel
    u, psi : array_like
        Observation grid (from 0 to T) and the values of ``W`` on it.
    paper_literal_coefficients : bool
        Use ``alpha^2 / (alpha^2 + alpha_tilde^2)`` as mean prefactor instead
        of the regression coefficient ``alpha / (alpha^2 + alpha_tilde^2)``.
        The two agree for ``alpha`` in ``{0, 1}``.
    tol : float
        Quadrature tolerance.
    """

    def __init__(
        self,
        model: ProcessModel,
        u,
        psi,
        paper_literal_coefficients: bool = False,
        tol: float = DEFAULT_COND_TOL,
    ):
        self.model = model
        self.u, self.psi = _validate_path(model, u, psi)
        self.paper_literal_coefficients = paper_literal_coefficients
        self.tol = tol

    @property
    def mean_coefficient(self) -> float:
        a = self.model.alpha
        num = a * a if self.paper_literal_coefficients else a
        return num / self.model.noise_var

    def mean(self, t):
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.array([self._mean_one(ti) for ti in ts])
        return float(out[0]) if np.ndim(t) == 0 else out

    def _mean_one(self, t: float) -> float:
        coef = self.mean_coefficient
        if coef == 0.0:
            return 0.0
        K = self.model.kernel.kernel
        left = self.u[:-1]
        dpsi = np.diff(self.psi)
        kv = np.asarray(K(t, left), dtype=float)
        if not np.isfinite(kv[0]):
            # integrable singularity at the left end: use the cell average
            h = self.u[1] - self.u[0]
            hi = min(self.u[1], t)
            kv[0] = quad_value(lambda v: K(t, v), 0.0, hi, tol=self.tol) / h if hi > 0 else 0.0
        return coef * float(kv @ dpsi)

    def cov(self, t: float, s: float) -> float:
        t, s = float(t), float(s)
        if min(t, s) >= self.model.T:
            return self._cov_after_horizon(t, s)
        return self._cov_general(t, s)

    def _cov_general(self, t: float, s: float) -> float:
        m, T = self.model, self.model.T
        p = m.signal_fraction
        ts = min(t, s)
        before = m.kernel_product_integral(t, s, 0.0, min(ts, T), self.tol)
        after = m.kernel_product_integral(t, s, T, ts, self.tol)
        return (1.0 - p) ** 2 * before + after + p * (1.0 - p) * before

    def _cov_after_horizon(self, t: float, s: float) -> float:
        m, T = self.model, self.model.T
        p = m.signal_fraction
        after = m.kernel_product_integral(t, s, T, min(t, s), self.tol) if p else 0.0
        return p * after + (1.0 - p) * float(m.covariance(t, s))

    def cov_matrix(self, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        n = grid.size
        out = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                out[i, j] = out[j, i] = self.cov(grid[i], grid[j])
        return out

    def increment_cov(self, t0: float, t: float, s: float) -> float:
        """``Cov(X_t - X_t0, X_s - X_t0)`` under the path-conditioned law."""
        if t0 < self.model.T:
            return self.cov(t, s) - self.cov(t, t0) - self.cov(t0, s) + self.cov(t0, t0)
        return path_increment_cov(self.model, t0, t, s, self.tol)


def path_increment_cov(model: ProcessModel, t0: float, t: float, s: float, tol: float = DEFAULT_COND_TOL) -> float:
    """Increment covariance of the path-conditioned law for ``t, s >= t0 >= T``.

    Does not depend on the observed path.  Computed from kernel differences,
    so it stays accurate for increments many orders below ``k(T, T)``.
    """
    T = model.T
    if min(t, s, t0) < T:
        raise ValidationError("path_increment_cov needs t, s, t0 >= T")
    p = model.signal_fraction
    K = model.kernel.kernel
    after = model.kernel_product_integral(t, s, t0, min(t, s), tol, abs_tol=1e-300)
    if t0 > T:
        f = lambda v: (K(t, v) - K(t0, v)) * (K(s, v) - K(t0, v))
        after += quad_value(f, T, t0, tol=tol, abs_tol=1e-300)
    return p * after + (1.0 - p) * float(model.increment_covariance(t0, t, s))


def path_conditional_mean(law: PathConditionalLaw, t: float) -> float:
    return law.mean(float(t))


def path_conditional_cov(law: PathConditionalLaw, t: float, s: float) -> float:
    return law.cov(t, s)


def joint_conditioning_oracle(model: ProcessModel, gset: ConditioningSet, grid):
    """Brute-force conditioning by a Schur complement of the joint covariance.

    Assembles ``Cov`` of ``(X_grid, G_1..G_n)`` explicitly and returns the
    conditional mean vector and covariance matrix on ``grid``.
    """
    from .sim import joint_model_cov

    grid = np.asarray(grid, dtype=float)
    J = joint_model_cov(model, gset, grid).entries
    m = grid.size
    Sxx, Sxg, Sgg = J[:m, :m], J[:m, m:], J[m:, m:]
    x = np.asarray(gset.x, dtype=float)
    mean = Sxg @ np.linalg.solve(Sgg, x)
    cov = Sxx - Sxg @ np.linalg.solve(Sgg, Sxg.T)
    return mean, 0.5 * (cov + cov.T)


class FunctionalConditioner(BaseEstimator):
    """Estimator wrapper around :class:`FunctionalConditionalLaw`.

    ``fit(x)`` takes the observed functional values; ``predict(t)`` returns
    the conditional mean, optionally with standard deviations or the full
    covariance.

    Examples
    --------
    >>> from volterra_ldp.models import Brownian, Indicator, ProcessModel
    >>> est = FunctionalConditioner(ProcessModel(Brownian(), 1.0, 1.0, 0.0), (Indicator(),))
    >>> float(est.fit([1.0]).predict([1.0])[0])
    1.0
    """

    def __init__(
        self,
        model: Optional[ProcessModel] = None,
        functions: Sequence[ConditioningFunction] = (),
        tol: float = DEFAULT_COND_TOL,
        cond_bound: float = DEFAULT_COND_BOUND,
    ):
        self.model = model
        self.functions = functions
        self.tol = tol
        self.cond_bound = cond_bound

    def fit(self, x, y=None):
        if self.model is None:
            raise ValidationError("model must be set before fit")
        x = np.asarray(x, dtype=float).ravel()
        gset = ConditioningSet(tuple(self.functions), tuple(x))
        self.law_ = FunctionalConditionalLaw(self.model, gset, self.tol, self.cond_bound)
        self.n_features_in_ = len(gset)
        return self

    def predict(self, t, return_std: bool = False, return_cov: bool = False):
        check_is_fitted(self, "law_")
        if return_std and return_cov:
            raise ValidationError("return_std and return_cov are mutually exclusive")
        t = np.asarray(t, dtype=float).ravel()
        mean = self.law_.mean(t)
        if return_cov:
            return mean, self.law_.cov_matrix(t)
        if return_std:
            var = np.diag(self.law_.cov_matrix(t))
            return mean, np.sqrt(np.clip(var, 0.0, None))
        return mean

    def sample_y(self, t, n_samples: int = 1, random_state: int = 0):
        """Draw conditional paths on ``t``; shape ``(len(t), n_samples)``."""
        from .sim import sample_gaussian

        mean, cov = self.predict(t, return_cov=True)
        batch = sample_gaussian(mean, GramMatrix(cov), n_samples, random_state, tag="sample_y")
        return batch.samples.T


class PathConditioner(BaseEstimator):
    """Estimator wrapper around :class:`PathConditionalLaw`; ``fit(u, psi)``."""

    def __init__(
        self,
        model: Optional[ProcessModel] = None,
        paper_literal_coefficients: bool = False,
        tol: float = DEFAULT_COND_TOL,
    ):
        self.model = model
        self.paper_literal_coefficients = paper_literal_coefficients
        self.tol = tol

    def fit(self, u, psi):
        if self.model is None:
            raise ValidationError("model must be set before fit")
        self.law_ = PathConditionalLaw(
            self.model, u, psi, self.paper_literal_coefficients, self.tol
        )
        return self

    def predict(self, t, return_std: bool = False, return_cov: bool = False):
        check_is_fitted(self, "law_")
        t = np.asarray(t, dtype=float).ravel()
        mean = self.law_.mean(t)
        if return_cov:
            return mean, self.law_.cov_matrix(t)
        if return_std:
            var = np.array([self.law_.cov(ti, ti) for ti in t])
            return mean, np.sqrt(np.clip(var, 0.0, None))
        return mean

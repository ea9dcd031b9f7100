"""Small-time limits of rescaled increment covariances after the horizon ``T``.

With ``gamma_eps = eps**gamma_exp`` the objects are

* ``kbar(t, s)``   limit of ``Cov(X_{T+eps t} - X_T, X_{T+eps s} - X_T) / gamma_eps^2``;
* ``rbar_i(t)``    limit of ``(r_i(T + eps t) - r_i(T)) / gamma_eps``;
* ``kbar^g``       ``kbar - rbar' C^-1 rbar`` (functional conditioning);
* ``Kbar(t, s)``   limit of ``sqrt(eps) K(T + eps t, T + eps s) / gamma_eps``;
* ``Upsilon_bar``  limit covariance under path conditioning.

Each can be estimated along an epsilon ladder (a sequence of ratios plus a
convergence flag) or, for the supported example families, in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .conditioning import (
    DEFAULT_COND_TOL,
    FunctionalConditionalLaw,
    cross_cov_increment,
    functional_gram,
    path_increment_cov,
)
from .exceptions import DegenerateVarianceError, UnsupportedExampleError, ValidationError
from .models import (
    Brownian,
    ConditioningFunction,
    ConditioningSet,
    FBm,
    IntegratedVolterra,
    MFoldIBM,
    ProcessModel,
)
from .numerics import GramMatrix, quad_value

DEFAULT_RTOL = 5e-3
EXAMPLES = ("fbm", "mfold", "integrated", "brownian")
KINDS = ("base", "functional", "path")


def default_ladder_values() -> tuple:
    return tuple(10.0 ** (-1 - 0.5 * k) for k in range(7))


@dataclass(frozen=True)
class EpsilonLadder:
    """Strictly decreasing positive scales, by default ``1e-1 ... 1e-4``."""

    values: tuple = field(default_factory=default_ladder_values)

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValidationError("ladder must contain at least one epsilon")
        if any(not (v > 0 and math.isfinite(v)) for v in vals):
            raise ValidationError("ladder values must be positive and finite")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValidationError("ladder values must be strictly decreasing")
        object.__setattr__(self, "values", vals)

    def check_horizon(self, T: float):
        if self.values[0] >= T:
            raise ValidationError(f"ladder values must be below T={T}")

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class LadderEstimate:
    eps: np.ndarray
    ratios: np.ndarray
    extrapolation: float
    converged: bool

    def rows(self):
        for e, r in zip(self.eps, self.ratios):
            yield float(e), float(r)


def _ladder(fn: Callable[[float], float], ladder, T: float, rtol: float, atol: float) -> LadderEstimate:
    ladder = ladder if isinstance(ladder, EpsilonLadder) else EpsilonLadder(tuple(ladder))
    ladder.check_horizon(T)
    eps = np.array(ladder.values)
    ratios = np.array([fn(e) for e in eps], dtype=float)
    last = float(ratios[-1])
    if ratios.size < 2:
        converged = False
    else:
        prev = float(ratios[-2])
        converged = bool(abs(last - prev) <= rtol * max(abs(last), abs(prev)) + atol)
    return LadderEstimate(eps, ratios, last, converged)


def _check_gamma(gamma_exp: float):
    if not (gamma_exp > 0 and math.isfinite(gamma_exp)):
        raise ValidationError("gamma_exp must be positive")


def _check_unit(*xs):
    for x in xs:
        if not (0.0 <= x <= 1.0):
            raise ValidationError("limit arguments must lie in [0, 1]")


def limit_cov_estimate(
    model: ProcessModel,
    gamma_exp: float,
    t: float,
    s: float,
    ladder=None,
    rtol: float = DEFAULT_RTOL,
    atol: float = 0.0,
    kernel_quad: bool = False,
) -> LadderEstimate:
    """Ladder of ``Cov(X_{T+eps t} - X_T, X_{T+eps s} - X_T) / eps^(2 gamma_exp)``.

    ``kernel_quad`` switches from the closed-form covariance to quadrature
    of kernel differences.
    """
    _check_gamma(gamma_exp)
    _check_unit(t, s)
    T = model.T

    def ratio(e):
        if kernel_quad:
            c = model.increment_covariance_quad(T, T + e * t, T + e * s)
        else:
            c = float(model.increment_covariance(T, T + e * t, T + e * s))
        return c / e ** (2 * gamma_exp)

    return _ladder(ratio, ladder or EpsilonLadder(), T, rtol, atol)


def limit_cross_estimate(
    model: ProcessModel,
    g: ConditioningFunction,
    gamma_exp: float,
    t: float,
    ladder=None,
    rtol: float = DEFAULT_RTOL,
    atol: float = 0.0,
) -> LadderEstimate:
    """Ladder of ``(r(T + eps t) - r(T)) / eps^gamma_exp``."""
    _check_gamma(gamma_exp)
    _check_unit(t)
    T = model.T
    fn = lambda e: cross_cov_increment(model, g, T, T + e * t) / e**gamma_exp
    return _ladder(fn, ladder or EpsilonLadder(), T, rtol, atol)


def limit_cond_cov_estimate(
    law: FunctionalConditionalLaw,
    gamma_exp: float,
    t: float,
    s: float,
    ladder=None,
    rtol: float = DEFAULT_RTOL,
    atol: float = 0.0,
) -> LadderEstimate:
    """Ladder of the functionally conditioned increment covariance ratio."""
    _check_gamma(gamma_exp)
    _check_unit(t, s)
    T = law.model.T
    fn = lambda e: law.increment_cov(T, T + e * t, T + e * s) / e ** (2 * gamma_exp)
    return _ladder(fn, ladder or EpsilonLadder(), T, rtol, atol)


def limit_path_cov_estimate(
    model: ProcessModel,
    gamma_exp: float,
    t: float,
    s: float,
    ladder=None,
    rtol: float = DEFAULT_RTOL,
    atol: float = 0.0,
) -> LadderEstimate:
    """Ladder of the path-conditioned increment covariance ratio."""
    _check_gamma(gamma_exp)
    _check_unit(t, s)
    T = model.T
    fn = lambda e: path_increment_cov(model, T, T + e * t, T + e * s) / e ** (2 * gamma_exp)
    return _ladder(fn, ladder or EpsilonLadder(), T, rtol, atol)


def limit_kernel_estimate(
    model: ProcessModel,
    gamma_exp: float,
    t: float,
    s: float,
    ladder=None,
    rtol: float = DEFAULT_RTOL,
    atol: float = 0.0,
) -> LadderEstimate:
    """Ladder of ``sqrt(eps) K(T + eps t, T + eps s) / eps^gamma_exp``."""
    _check_gamma(gamma_exp)
    _check_unit(t, s)
    if s > t:
        raise ValidationError("limit_kernel_estimate needs s <= t")
    T = model.T
    K = model.kernel.kernel
    fn = lambda e: math.sqrt(e) * float(K(T + e * t, T + e * s)) / e**gamma_exp
    return _ladder(fn, ladder or EpsilonLadder(), T, rtol, atol)


def limit_cov_functional(kbar: Callable, rbar: Callable, Cg, t: float, s: float) -> float:
    """``kbar(t, s) - rbar(t)' C^-1 rbar(s)``."""
    Cg = np.atleast_2d(np.asarray(Cg, dtype=float))
    rt = np.atleast_1d(np.asarray(rbar(t), dtype=float))
    rs = np.atleast_1d(np.asarray(rbar(s), dtype=float))
    return float(kbar(t, s)) - float(rt @ np.linalg.solve(Cg, rs))


def _kernel_coefficient(model: ProcessModel, paper_literal_coefficients: bool) -> float:
    if paper_literal_coefficients:
        return 1.0 - model.signal_fraction
    return model.signal_fraction


def limit_cov_path(
    model: ProcessModel,
    kbar: Callable,
    Kbar: Optional[Callable],
    t: float,
    s: float,
    paper_literal_coefficients: bool = False,
    tol: float = 1e-10,
) -> float:
    """``c int_0^{t ^ s} Kbar(t, u) Kbar(s, u) du + (1 - p) kbar(t, s)``.

    ``p`` is the signal fraction; ``c = p`` by default and ``c = 1 - p``
    with ``paper_literal_coefficients``.
    """
    p = model.signal_fraction
    c = _kernel_coefficient(model, paper_literal_coefficients)
    first = 0.0
    if Kbar is not None and c != 0.0 and min(t, s) > 0:
        f = lambda u: np.asarray(Kbar(t, u)) * np.asarray(Kbar(s, u))
        first = quad_value(f, 0.0, min(t, s), tol=tol)
    return c * first + (1.0 - p) * float(kbar(t, s))


@dataclass
class LimitLaw:
    """Scaling exponent plus the limit covariance of one conditioning kind.

    ``kbar`` is a vectorised covariance on ``[0, 1]^2``.  ``a`` is set when
    the limit has the rank-one form ``a s t``.  ``kernel_limit`` and
    ``rbar`` record the ingredients when known.
    """

    gamma_exp: float
    kbar: Callable
    kind: str = "base"
    provenance: str = "closed-form"
    a: Optional[float] = None
    kernel_limit: Optional[Callable] = None
    rbar: Optional[Callable] = None
    example: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}")
        if self.provenance not in ("closed-form", "ladder-extrapolated"):
            raise ValidationError("provenance must be 'closed-form' or 'ladder-extrapolated'")
        _check_gamma(self.gamma_exp)

    def __call__(self, t, s):
        return self.kbar(t, s)

    def gram(self, grid) -> GramMatrix:
        grid = np.asarray(grid, dtype=float)
        tt, ss = np.meshgrid(grid, grid, indexing="ij")
        M = np.asarray(self.kbar(tt, ss), dtype=float)
        return GramMatrix(0.5 * (M + M.T), grid=grid)

    @classmethod
    def from_ladder(cls, model, gamma_exp, grid, kind="base", gset=None, ladder=None,
                    paper_literal_coefficients=False):
        """Tabulate the ratio at the smallest ladder epsilon on ``grid``.

        The resulting ``kbar`` only accepts points of ``grid``.
        """
        ladder = ladder or EpsilonLadder()
        eps = ladder.values[-1]
        grid = np.asarray(grid, dtype=float)
        T = model.T
        if kind == "functional":
            if gset is None:
                raise ValidationError("functional limits need a conditioning set")
            law = FunctionalConditionalLaw(model, gset)
            inc = lambda a, b: law.increment_cov(T, T + eps * a, T + eps * b)
        elif kind == "path":
            inc = lambda a, b: path_increment_cov(model, T, T + eps * a, T + eps * b)
        else:
            inc = lambda a, b: float(model.increment_covariance(T, T + eps * a, T + eps * b))
        n = grid.size
        table = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                table[i, j] = table[j, i] = inc(grid[i], grid[j]) / eps ** (2 * gamma_exp)
        index = {float(v): i for i, v in enumerate(grid)}

        def kbar(t, s):
            t = np.asarray(t, dtype=float)
            s = np.asarray(s, dtype=float)
            try:
                it = np.vectorize(lambda v: index[float(v)])(t)
                js = np.vectorize(lambda v: index[float(v)])(s)
            except KeyError as exc:
                raise ValidationError("ladder-extrapolated limits are only defined on their grid") from exc
            out = table[it, js]
            return float(out) if np.ndim(out) == 0 else out

        return cls(gamma_exp, kbar, kind, "ladder-extrapolated")


def _check_example(example: str, model: ProcessModel):
    fam = model.kernel
    expected = {"fbm": FBm, "mfold": MFoldIBM, "integrated": IntegratedVolterra, "brownian": Brownian}
    if example not in expected:
        raise UnsupportedExampleError(f"no closed-form limits for example {example!r}; choose from {EXAMPLES}")
    if not isinstance(fam, expected[example]):
        raise UnsupportedExampleError(
            f"example {example!r} does not match kernel family {type(fam).__name__}"
        )
    if example == "fbm":
        fam.require_kernel_regime()


def derivative_kernel(model: ProcessModel) -> Callable:
    """``u -> d/dt K(t, u)`` at ``t = T`` for the differentiable families."""
    fam = model.kernel
    T = model.T
    if isinstance(fam, MFoldIBM):
        m = fam.m
        return lambda u: np.where(np.asarray(u) <= T, (T - np.asarray(u)) ** (m - 1), 0.0) / math.factorial(m - 1)
    if isinstance(fam, IntegratedVolterra):
        inner = fam.inner
        return lambda u: inner.kernel(T, u)
    raise UnsupportedExampleError("derivative kernel only exists for m-fold and integrated families")


def _rank_one(t, s, a):
    return a * np.asarray(t, dtype=float) * np.asarray(s, dtype=float)


def closed_form_limits(
    example: str,
    model: ProcessModel,
    gset: Optional[ConditioningSet] = None,
    kind: str = "base",
    paper_literal_coefficients: bool = False,
    tol: float = 1e-12,
) -> LimitLaw:
    """Explicit limit law for one of the supported example families."""
    _check_example(example, model)
    if kind not in KINDS:
        raise ValidationError(f"kind must be one of {KINDS}")
    if kind == "functional" and gset is None:
        raise ValidationError("functional limits need a conditioning set")
    p = model.signal_fraction
    c_kernel = _kernel_coefficient(model, paper_literal_coefficients)
    fam = model.kernel
    T = model.T

    if example in ("mfold", "integrated"):
        D = derivative_kernel(model)
        if isinstance(fam, MFoldIBM):
            m = fam.m
            k0 = m * m * T ** (2 * m - 1) / ((2 * m - 1) * math.factorial(m) ** 2)
        else:
            pts = tuple(fam.inner.singular_points())
            k0 = quad_value(lambda u: D(u) ** 2, 0.0, T, tol=tol, points=pts)
        A = None
        if gset is not None:
            A = np.array([
                quad_value(lambda u, g=g: D(u) * g(u, T), 0.0, T, tol=tol,
                           points=tuple(fam.singular_points()) + tuple(g.breakpoints(T)))
                for g in gset.functions
            ])
        rbar = (lambda t, A=A: model.alpha * A * float(t)) if A is not None else None
        if kind == "base":
            a = k0
        elif kind == "functional":
            C = functional_gram(model, gset)
            a = k0 - model.alpha**2 * float(A @ np.linalg.solve(C, A))
        else:
            # the kernel limit vanishes, leaving the noise share of kbar
            a = (1.0 - p) * k0
        zero = lambda t, s: np.zeros(np.broadcast(np.asarray(t), np.asarray(s)).shape)
        return LimitLaw(1.0, lambda t, s, a=a: _rank_one(t, s, a), kind, "closed-form", a,
                        zero, rbar, example)

    if example == "fbm":
        H = fam.H
        cH = fam.c_H
        beta = H - 0.5
        kbar = fam.covariance

        def Kbar(t, s):
            t = np.asarray(t, dtype=float)
            s = np.asarray(s, dtype=float)
            d = np.clip(t - s, 0.0, None)
            return np.where(s < t, cH * d**beta, 0.0)

        rbar = (lambda t, n=len(gset): np.zeros(n)) if gset is not None else None
        if kind in ("base", "functional"):
            return LimitLaw(H, kbar, kind, "closed-form", None, Kbar, rbar, example)

        def ups_one(t, s):
            lo = min(t, s)
            first = 0.0
            if lo > 0 and c_kernel != 0.0:
                first = quad_value(lambda u: cH**2 * (t - u) ** beta * (s - u) ** beta, 0.0, lo, tol=tol)
            return c_kernel * first + (1.0 - p) * float(kbar(t, s))

        ups = np.vectorize(ups_one, otypes=[float])
        return LimitLaw(H, lambda t, s: _finish(ups(t, s)), kind, "closed-form", None, Kbar, rbar, example)

    # brownian: gamma = 1/2, kbar = min, no cross limit, Kbar = indicator
    kbar = lambda t, s: np.minimum(t, s)
    Kbar = lambda t, s: np.where(np.asarray(s) <= np.asarray(t), 1.0, 0.0)
    rbar = (lambda t, n=len(gset): np.zeros(n)) if gset is not None else None
    if kind == "path":
        w = c_kernel + (1.0 - p)
        return LimitLaw(0.5, lambda t, s, w=w: w * np.minimum(t, s), kind, "closed-form", None, Kbar, rbar, example)
    return LimitLaw(0.5, kbar, kind, "closed-form", None, Kbar, rbar, example)


def _finish(out):
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def speed_exponent_fit(model: ProcessModel, ladder=None):
    """Least-squares slope of ``log Var(X_{T+eps} - X_T)`` against ``log eps``.

    Variances come from kernel-difference quadrature.  Returns ``(slope, r2)``.
    """
    ladder = ladder if isinstance(ladder, EpsilonLadder) else EpsilonLadder(tuple(ladder or default_ladder_values()))
    if len(ladder) < 3:
        raise ValidationError("speed_exponent_fit needs at least three ladder values")
    ladder.check_horizon(model.T)
    T = model.T
    eps = np.array(ladder.values)
    var = np.array([model.increment_covariance_quad(T, T + e, T + e) for e in eps])
    if np.any(~np.isfinite(var)) or np.any(var <= 0):
        raise DegenerateVarianceError("non-positive increment variance along the ladder")
    x, y = np.log(eps), np.log(var)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


def default_tau(model: ProcessModel) -> float:
    fam = model.kernel
    if isinstance(fam, FBm):
        return fam.H
    if isinstance(fam, Brownian):
        return 0.5
    return 1.0


def default_tau_hat(model: ProcessModel) -> float:
    return 0.5 if isinstance(model.kernel, Brownian) else 1.0


@dataclass
class TightnessReport:
    eps: np.ndarray
    sup_var: np.ndarray
    sup_cross: Optional[np.ndarray]
    sup_kernel: np.ndarray
    sup_kernel_unscaled: np.ndarray
    slopes: dict


def _loglog_slope(eps, vals) -> float:
    vals = np.asarray(vals, dtype=float)
    if np.any(vals <= 0):
        # an identically vanishing statistic shows no growth
        return 0.0 if np.all(vals == 0) else float("nan")
    return float(np.polyfit(np.log(eps), np.log(vals), 1)[0])


def exp_tight_statistics(
    model: ProcessModel,
    gamma_exp: float,
    ladder=None,
    n_grid: int = 20,
    gset: Optional[ConditioningSet] = None,
    tau: Optional[float] = None,
    tau_hat: Optional[float] = None,
    tol: float = DEFAULT_COND_TOL,
) -> TightnessReport:
    """Sup-ratio statistics of the exponential-tightness bounds along a ladder.

    Over all pairs ``s < t`` of ``n_grid`` equispaced points of ``[0, 1]``:

    * ``sup_var``: ``Var(X_{T+eps t} - X_{T+eps s}) / (gamma^2 |t-s|^(2 tau))``;
    * ``sup_cross``: ``max_i |r_i(T+eps t) - r_i(T+eps s)| / (gamma |t-s|^tau_hat)``;
    * ``sup_kernel``: ``eps int_0^t (K(T+eps t, T+eps u) - K(T+eps s, T+eps u))^2 du
      / (gamma^2 |t-s|^(2 tau_hat))``.  The factor ``eps`` is the Jacobian of
      ``v = T + eps u``; ``sup_kernel_unscaled`` omits it.

    ``slopes`` holds the fitted log-log slope of each statistic against eps;
    a bounded statistic has slope >= 0 up to noise.
    """
    _check_gamma(gamma_exp)
    ladder = ladder if isinstance(ladder, EpsilonLadder) else EpsilonLadder(tuple(ladder or default_ladder_values()))
    ladder.check_horizon(model.T)
    tau = default_tau(model) if tau is None else tau
    tau_hat = default_tau_hat(model) if tau_hat is None else tau_hat
    T = model.T
    K = model.kernel.kernel
    pts = np.linspace(0.0, 1.0, n_grid)
    pairs = [(pts[i], pts[j]) for i in range(n_grid) for j in range(i + 1, n_grid)]
    eps = np.array(ladder.values)
    sup_var, sup_cross, sup_kern = [], [], []
    for e in eps:
        g2 = e ** (2 * gamma_exp)
        v_best = c_best = k_best = 0.0
        for s, t in pairs:
            a, b = T + e * s, T + e * t
            d = t - s
            var = float(model.increment_covariance(a, b, b))
            v_best = max(v_best, var / (g2 * d ** (2 * tau)))
            if gset is not None:
                for g in gset.functions:
                    dr = abs(cross_cov_increment(model, g, a, b, tol))
                    c_best = max(c_best, dr / (e**gamma_exp * d**tau_hat))
            f = lambda v, a=a, b=b: (K(b, v) - K(a, v)) ** 2
            integral = quad_value(f, T, b, tol=tol, points=(a,), abs_tol=1e-300)
            k_best = max(k_best, integral / (g2 * d ** (2 * tau_hat)))
        sup_var.append(v_best)
        sup_cross.append(c_best)
        sup_kern.append(k_best)
    sup_var = np.array(sup_var)
    sup_kern = np.array(sup_kern)
    unscaled = sup_kern / eps
    cross = np.array(sup_cross) if gset is not None else None
    slopes = {
        "var": _loglog_slope(eps, sup_var),
        "kernel": _loglog_slope(eps, sup_kern),
        "kernel_unscaled": _loglog_slope(eps, unscaled),
    }
    if cross is not None:
        slopes["cross"] = _loglog_slope(eps, cross)
    return TightnessReport(eps, sup_var, cross, sup_kern, unscaled, slopes)

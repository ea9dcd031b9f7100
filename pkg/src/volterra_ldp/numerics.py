"""Quadrature, jittered SPD factorization and pseudo-inverse quadratic forms.

Everything here is a pure function of its arguments; no module level state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import NotPositiveSemidefiniteError, QuadratureError, ValidationError

DEFAULT_TOL = 1e-9
DEFAULT_MAX_EVALS = 10**6
DEFAULT_REL_CUTOFF = 1e-10
JITTER_LEVELS = 7  # base_jitter * 10**k, k = 0..6

# Gauss-Kronrod 21/10 pair on [-1, 1]; Gauss nodes are every other Kronrod node
_XGK = np.array([
    0.99565716302580808074, 0.97390652851717172008, 0.930157491355708226,
    0.86506336668898451073, 0.78081772658641689706, 0.67940956829902440623,
    0.56275713466860468334, 0.4333953941292471908, 0.29439286270146019813,
    0.14887433898163121088, 0.0,
])
_WGK_HALF = np.array([
    0.011694638867371874278, 0.032558162307964727479, 0.054755896574351996031,
    0.075039674810919952767, 0.093125454583697605535, 0.1093871588022976419,
    0.12349197626206585108, 0.13470921731147332593, 0.1427759385770600808,
    0.14773910490133849137, 0.14944555400291690566,
])
_WG_HALF = np.array([
    0.066671344308688137594, 0.14945134915058059315, 0.219086362515982044,
    0.26926671930999635509, 0.29552422471475287017,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_WK = np.concatenate([_WGK_HALF[:-1], _WGK_HALF[::-1]])
_WG = np.zeros(21)
_WG[1:10:2] = _WG_HALF
_WG[11:20:2] = _WG_HALF[::-1]
_EPS = np.finfo(float).eps
_MAX_SPLITS_PER_PASS = 256


@dataclass(frozen=True)
class QuadratureResult:
    """Outcome of :func:`integrate`."""

    value: float
    error_estimate: float
    evaluations: int
    converged: bool = True
    message: str = ""

    def __float__(self) -> float:
        return self.value


def _gk21(f, lo, hi, vectorized):
    """GK21 on each ``[lo_i, hi_i]``: (values, QUADPACK-style error estimates)."""
    centre = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    x = centre[:, None] + half[:, None] * _NODES[None, :]
    if vectorized:
        fx = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
    else:
        fx = np.array([float(f(xi)) for xi in x.ravel()]).reshape(x.shape)
    resk = fx @ _WK
    resg = fx @ _WG
    resabs = (np.abs(fx) @ _WK) * half
    resasc = (np.abs(fx - 0.5 * resk[:, None]) @ _WK) * half
    err = np.abs((resk - resg) * half)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        scaled = resasc * np.minimum(1.0, (200.0 * err / resasc) ** 1.5)
    err = np.where((resasc != 0) & (err != 0), scaled, err)
    err = np.maximum(err, 50.0 * _EPS * resabs)
    return resk * half, err


def integrate(
    f: Callable,
    a: float,
    b: float,
    tol: float = DEFAULT_TOL,
    points: Optional[Sequence[float]] = None,
    max_evals: int = DEFAULT_MAX_EVALS,
    strict: bool = False,
    vectorized: bool = True,
    abs_tol: Optional[float] = None,
) -> QuadratureResult:
    """Globally adaptive Gauss-Kronrod (10/21-point) quadrature over ``[a, b]``.

    Parameters
    ----------
    f
        Integrand. With ``vectorized`` it receives a 1-d array of nodes,
        otherwise it is called once per node. Integrable endpoint
        singularities are fine: nodes are strictly interior.
    a, b
        Integration limits, ``a <= b``.
    tol
        Relative tolerance; also the absolute tolerance unless ``abs_tol`` is given.
    points
        Split hints (kinks, jumps, interior singularities). Points outside
        the open interval are ignored.
    max_evals
        Upper bound on integrand evaluations.
    strict
        Raise :class:`QuadratureError` instead of returning a flagged result
        when the tolerance is not met.
    vectorized
        Whether ``f`` accepts arrays.
    abs_tol
        Absolute tolerance floor; pass something tiny for integrals whose
        magnitude is far below 1.

    Returns
    -------
    QuadratureResult
        ``converged`` is False when the error estimate exceeds the tolerance
        or the evaluation budget ran out; ``value`` is then the best estimate.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    a = float(a)
    b = float(b)
    if b < a:
        raise ValidationError(f"integration limits must satisfy a <= b, got [{a}, {b}]")
    if a == b:
        return QuadratureResult(0.0, 0.0, 0)
    if abs_tol is None:
        abs_tol = tol

    edges = [a] + sorted({float(p) for p in (points or ()) if a < p < b}) + [b]
    lo = np.array(edges[:-1])
    hi = np.array(edges[1:])
    vals, errs = _gk21(f, lo, hi, vectorized)
    nevals = 21 * lo.size
    message = ""
    while True:
        total = float(np.sum(vals))
        if not np.isfinite(total):
            message = "non-finite integral"
            break
        target = max(abs_tol, tol * abs(total))
        if float(np.sum(errs)) <= target:
            break
        # bisect the worst intervals until the remainder fits in half the budget
        splittable = (hi - lo) > 64 * _EPS * np.maximum(np.abs(lo), np.abs(hi))
        order = np.argsort(-errs)
        tail = np.cumsum(errs[order][::-1])[::-1]  # error of order[i:]
        n_pick = int(np.searchsorted(-tail, -0.5 * target, side="left"))
        idx = order[: max(n_pick, 1)]
        idx = idx[splittable[idx]][:_MAX_SPLITS_PER_PASS]
        if idx.size == 0:
            message = "roundoff limits the attainable accuracy"
            break
        if nevals + 42 * idx.size > max_evals:
            message = "max-evaluations-exceeded"
            break
        mid = 0.5 * (lo[idx] + hi[idx])
        new_lo = np.concatenate([lo[idx], mid])
        new_hi = np.concatenate([mid, hi[idx]])
        new_vals, new_errs = _gk21(f, new_lo, new_hi, vectorized)
        nevals += 21 * new_lo.size
        keep = np.ones(lo.size, dtype=bool)
        keep[idx] = False
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        vals = np.concatenate([vals[keep], new_vals])
        errs = np.concatenate([errs[keep], new_errs])
    order = np.argsort(lo)
    value = float(np.sum(vals[order]))
    err = float(np.sum(errs))
    ok = not message
    result = QuadratureResult(value, err, int(nevals), ok, message)
    if strict and not ok:
        raise QuadratureError(
            f"quadrature on [{a}, {b}] failed: estimate {value:.6g} +- {err:.2g} ({message})"
        )
    return result


def quad_value(f, a, b, tol=DEFAULT_TOL, points=None, slack=1e3, vectorized=True, abs_tol=None):
    """Return only the value of :func:`integrate`.

    Raises when the error estimate is worse than ``slack * tol``; smaller
    misses are tolerated because the GK estimate is pessimistic near
    algebraic endpoint singularities.
    """
    res = integrate(f, a, b, tol=tol, points=points, vectorized=vectorized, abs_tol=abs_tol)
    floor = tol if abs_tol is None else abs_tol
    if not res.converged and res.error_estimate > slack * max(floor, tol * abs(res.value)):
        raise QuadratureError(
            f"quadrature on [{a}, {b}] failed: estimate {res.value:.6g} "
            f"+- {res.error_estimate:.2g} ({res.message})"
        )
    return res.value


@dataclass
class GramMatrix:
    """Covariance matrix of a kernel evaluated on a grid.

    ``grid`` is the list of evaluation points when the matrix is a plain
    covariance Gram; block matrices (e.g. joint process/functional
    covariances) leave it ``None`` and describe their rows through ``labels``.
    """

    entries: np.ndarray
    grid: Optional[np.ndarray] = None
    jitter_used: float = 0.0
    eig_cutoff: float = 0.0
    labels: Optional[list] = field(default=None)

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValidationError("Gram entries must be a square matrix")
        scale = max(1.0, float(np.max(np.abs(entries)))) if entries.size else 1.0
        if entries.size and np.max(np.abs(entries - entries.T)) > 1e-12 * scale:
            raise ValidationError("Gram matrix is not symmetric")
        self.entries = 0.5 * (entries + entries.T)
        if self.grid is not None:
            grid = np.asarray(self.grid, dtype=float)
            if grid.shape != (entries.shape[0],):
                raise ValidationError("grid length does not match Gram dimension")
            if grid.size > 1 and np.any(np.diff(grid) <= 0):
                raise ValidationError("grid must be strictly increasing")
            self.grid = grid

    @classmethod
    def from_covariance(cls, cov: Callable, grid) -> "GramMatrix":
        """Evaluate a vectorised covariance ``cov(t, s)`` on ``grid x grid``."""
        grid = np.asarray(grid, dtype=float)
        tt, ss = np.meshgrid(grid, grid, indexing="ij")
        return cls(np.asarray(cov(tt, ss), dtype=float), grid=grid)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def factor(self, base_jitter: Optional[float] = None) -> "Factorization":
        fac = spd_factor(self.entries, base_jitter)
        self.jitter_used = fac.jitter_used
        return fac

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])


@dataclass(frozen=True)
class Factorization:
    """Lower Cholesky factor of ``M + jitter_used * I``."""

    lower: np.ndarray
    jitter_used: float

    def solve(self, rhs):
        from scipy.linalg import cho_solve

        return cho_solve((self.lower, True), rhs)


def default_jitter(M) -> float:
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    tr = float(np.trace(M)) / n if n else 0.0
    return 1e-12 * tr if tr > 0 else 1e-12


def spd_factor(M, base_jitter: Optional[float] = None) -> Factorization:
    """Cholesky-factorize ``M`` with the smallest jitter that succeeds.

    Tries ``0`` first, then ``base_jitter * 10**k`` for ``k = 0..6``.
    ``base_jitter`` defaults to ``1e-12 * trace(M) / n``.
    """
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError("spd_factor expects a square matrix")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.T)) > 1e-10 * scale:
        raise ValidationError("spd_factor expects a symmetric matrix")
    M = 0.5 * (M + M.T)
    if base_jitter is None:
        base_jitter = default_jitter(M)
    if base_jitter < 0:
        raise ValidationError("base_jitter must be non-negative")
    eye = np.eye(M.shape[0])
    levels = [0.0] + [base_jitter * 10.0**k for k in range(JITTER_LEVELS) if base_jitter > 0]
    for jitter in levels:
        try:
            lower = np.linalg.cholesky(M + jitter * eye)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(lower)):
            return Factorization(lower, float(jitter))
    raise NotPositiveSemidefiniteError(
        f"matrix is not positive semidefinite (largest jitter tried: {levels[-1]:.3g})"
    )


def pinv_quadratic_form(G, h, rel_cutoff: float = DEFAULT_REL_CUTOFF):
    """Half the squared RKHS norm of ``h`` seen through the Gram matrix ``G``.

    Eigen-decomposes ``G``, drops modes with eigenvalue below
    ``rel_cutoff * lambda_max`` and returns ``(value, residual)`` where
    ``value = 0.5 * sum((u_i . h)**2 / lambda_i)`` over retained modes and
    ``residual`` is the relative norm of the part of ``h`` outside the
    retained range (0 for ``h == 0``).
    """
    entries = G.entries if isinstance(G, GramMatrix) else np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float).ravel()
    if h.shape[0] != entries.shape[0]:
        raise ValidationError("h length does not match Gram dimension")
    if isinstance(G, GramMatrix):
        G.eig_cutoff = rel_cutoff
    hnorm = float(np.linalg.norm(h))
    if hnorm == 0.0:
        return 0.0, 0.0
    lam, U = np.linalg.eigh(0.5 * (entries + entries.T))
    lam_max = float(lam[-1]) if lam.size else 0.0
    if lam_max <= 0:
        return 0.0, 1.0
    keep = lam > rel_cutoff * lam_max
    coef = U[:, keep].T @ h
    value = 0.5 * float(np.sum(coef**2 / lam[keep]))
    residual = float(np.linalg.norm(h - U[:, keep] @ coef)) / hnorm
    return value, residual

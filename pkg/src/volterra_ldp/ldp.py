"""Rate functionals on grids, discrete log-MGF, exit rates and Monte Carlo probes."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import log_ndtr

from .asymptotics import EpsilonLadder, LimitLaw
from .conditioning import FunctionalConditionalLaw, PathConditionalLaw
from .exceptions import DegenerateVarianceError, ValidationError
from .models import ProcessModel
from .numerics import DEFAULT_REL_CUTOFF, GramMatrix, pinv_quadratic_form, spd_factor
from .sim import standard_normals, stream

DEFAULT_RESIDUAL_THRESHOLD = 1e-6
DEFAULT_BLOCK = 10_000
PROBE_COLUMNS = ("eps", "p_hat", "mc_stderr", "gamma_sq_log_p", "predicted_rate_bound")


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValidationError("grid must not be empty")
    if np.any(grid <= 0) or np.any(grid > 1):
        raise ValidationError("grid must lie in (0, 1]")
    if np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be strictly increasing")
    return grid


@dataclass
class RateQuery:
    """Target path ``h`` on ``grid`` (``h(0) = 0`` is implicit)."""

    limit: LimitLaw
    grid: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.grid = _check_grid(self.grid)
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.h.shape != self.grid.shape:
            raise ValidationError("h and grid must have the same length")
        if not np.all(np.isfinite(self.h)):
            raise ValidationError("h must be finite")


@dataclass(frozen=True)
class RateResult:
    value: float
    residual: float
    in_rkhs: bool

    def to_dict(self) -> dict:
        return {"value": self.value, "residual": self.residual, "in_rkhs": self.in_rkhs}


def rate_functional(
    q: RateQuery,
    rel_cutoff: float = DEFAULT_REL_CUTOFF,
    residual_threshold: float = DEFAULT_RESIDUAL_THRESHOLD,
) -> RateResult:
    """``1/2 |h|^2`` in the RKHS of the limit covariance, restricted to the grid.

    ``in_rkhs`` is False when the part of ``h`` outside the retained
    eigenspace exceeds ``residual_threshold`` (relative); the rate is then
    infinite at this resolution and ``value`` only covers the retained part.
    """
    G = q.limit.gram(q.grid)
    value, residual = pinv_quadratic_form(G, q.h, rel_cutoff)
    return RateResult(float(value), float(residual), bool(residual < residual_threshold))


def log_mgf_discrete(limit: LimitLaw, points, weights) -> float:
    """``Lambda`` of the point-mass measure ``sum w_i delta_{t_i}``: ``w' K w / 2``."""
    points = np.asarray(points, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if points.shape != weights.shape:
        raise ValidationError("points and weights must have the same length")
    if points.size == 0 or not np.any(weights):
        return 0.0
    if np.any(points < 0) or np.any(points > 1):
        raise ValidationError("points must lie in [0, 1]")
    tt, ss = np.meshgrid(points, points, indexing="ij")
    K = np.asarray(limit.kbar(tt, ss), dtype=float)
    return 0.5 * float(weights @ K @ weights)


def exit_rate(limit: LimitLaw, grid, delta: float) -> float:
    """``min_i delta^2 / (2 kbar(t_i, t_i))``: cheapest single-point exit above ``delta``."""
    if delta < 0:
        raise ValidationError("delta must be non-negative")
    grid = _check_grid(grid)
    var = np.asarray(limit.kbar(grid, grid), dtype=float)
    vmax = float(np.max(var))
    if not vmax > 0:
        raise DegenerateVarianceError("limit variance vanishes on the whole grid")
    if delta == 0:
        return 0.0
    return float(delta**2 / (2.0 * vmax))


def bm_exit_exact(delta: float, eps: float, t_max: float = 1.0) -> float:
    """``log P(sup_{t <= t_max} W_{eps t} >= delta)`` by the reflection principle."""
    if delta < 0 or eps <= 0 or t_max <= 0:
        raise ValidationError("need delta >= 0, eps > 0 and t_max > 0")
    if delta == 0:
        return 0.0
    x = delta / math.sqrt(eps * t_max)
    return float(math.log(2.0) + log_ndtr(-x))


@dataclass
class ProbeReport:
    """One row per ladder epsilon; see ``PROBE_COLUMNS``.

    ``mc_stderr`` is the delta-method standard error of ``gamma_sq_log_p``
    (``eps^(2 gamma) sqrt((1 - p) / (N p))``).  Rows with no hits carry
    ``p_hat = 0``, ``gamma_sq_log_p = -inf`` and ``mc_stderr = inf``.
    """

    rows: list = field(default_factory=list)
    hits: list = field(default_factory=list)
    N: int = 0
    gamma_exp: float = 0.5
    delta: float = 0.0

    @property
    def columns(self):
        return PROBE_COLUMNS

    def as_array(self) -> np.ndarray:
        return np.array(self.rows, dtype=float)

    def zero_hit_rows(self):
        return [i for i, h in enumerate(self.hits) if h == 0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PROBE_COLUMNS)
            for row in self.rows:
                w.writerow([format(float(v), ".17g") for v in row])


ProbeLaw = Union[ProcessModel, FunctionalConditionalLaw, PathConditionalLaw]


def increment_gram(law: ProbeLaw, eps: float, grid) -> np.ndarray:
    """Covariance of ``(X_{T + eps t_i} - X_T)_i`` under ``law``."""
    grid = np.asarray(grid, dtype=float)
    model = law if isinstance(law, ProcessModel) else law.model
    T = model.T
    times = T + eps * grid
    if isinstance(law, ProcessModel):
        M = np.asarray(model.increment_covariance(T, times[:, None], times[None, :]), dtype=float)
    else:
        n = grid.size
        M = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                M[i, j] = M[j, i] = law.increment_cov(T, times[i], times[j])
    return 0.5 * (M + M.T)


def _count_hits(lower, delta, seed, eps_index, rep, size) -> int:
    z = standard_normals(stream(seed, "probe", eps_index, rep), (size, lower.shape[0]))
    paths = z @ lower.T
    # the increment starts at 0, so a non-positive threshold is always reached
    return int(np.count_nonzero(np.maximum(paths.max(axis=1), 0.0) >= delta))


def ldp_probe(
    law: ProbeLaw,
    gamma_exp: float,
    ladder,
    delta: float,
    grid,
    N: int,
    seed: int,
    limit: Optional[LimitLaw] = None,
    block: int = DEFAULT_BLOCK,
    workers: int = 1,
    deltas: Optional[Sequence[float]] = None,
) -> ProbeReport:
    """Monte Carlo estimate of ``P(max_i (X_{T+eps t_i} - X_T) >= delta)`` per ladder eps.

    Samples are centred (the conditional mean increment vanishes as eps
    goes to 0).  Replicate ``r`` of ladder index ``j`` always uses the stream
    ``(seed, "probe", j, r)``, so the report does not depend on ``workers``.
    ``deltas`` optionally gives one threshold per ladder entry.
    """
    if N < 1000:
        raise ValidationError("N must be at least 1000")
    if block < 1:
        raise ValidationError("block must be positive")
    grid = _check_grid(grid)
    eps_values = ladder.values if isinstance(ladder, EpsilonLadder) else tuple(float(e) for e in ladder)
    if deltas is None:
        deltas = [delta] * len(eps_values)
    if len(deltas) != len(eps_values):
        raise ValidationError("deltas must have one entry per ladder value")
    if any(d < 0 for d in deltas):
        raise ValidationError("delta must be non-negative")
    sizes = [block] * (N // block) + ([N % block] if N % block else [])
    report = ProbeReport(N=int(N), gamma_exp=gamma_exp, delta=float(delta))
    for j, (eps, d) in enumerate(zip(eps_values, deltas)):
        lower = spd_factor(increment_gram(law, eps, grid)).lower
        jobs = [(lower, d, seed, j, r, size) for r, size in enumerate(sizes)]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                counts = list(ex.map(lambda a: _count_hits(*a), jobs))
        else:
            counts = [_count_hits(*a) for a in jobs]
        hits = int(sum(counts))
        p = hits / N
        scale = eps ** (2 * gamma_exp)
        if hits == 0:
            glp, se = -math.inf, math.inf
        else:
            glp = scale * math.log(p)
            se = scale * math.sqrt((1.0 - p) / (N * p))
        pred = -exit_rate(limit, grid, d) if limit is not None else math.nan
        report.rows.append((float(eps), p, se, glp, pred))
        report.hits.append(hits)
    return report

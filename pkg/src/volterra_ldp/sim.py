"""Exact finite-dimensional Gaussian sampling and the empirical conditioning oracle.

Streams: every batch is drawn from a Philox generator keyed by
``SeedSequence(seed, spawn_key=(crc32(tag), *indices))``, so a batch depends
only on ``(seed, tag, indices)`` and never on how many batches were drawn
before it or on which worker drew it.

Normals: 53-bit uniforms ``(k + 1/2) 2^-53`` pushed through the inverse
normal CDF (``scipy.special.ndtri``).  Unlike the ziggurat this uses only the
raw integer stream plus one well-conditioned special function, so batches
are reproducible across platforms.
"""
from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .exceptions import ValidationError
from .models import ConditioningSet, ProcessModel
from .numerics import GramMatrix, quad_value, spd_factor

DEFAULT_BOOTSTRAP = 100


def stream(seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Deterministic generator for ``(seed, tag, indices)``."""
    if seed < 0:
        raise ValidationError("seed must be non-negative")
    key = (zlib.crc32(tag.encode("utf-8")),) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def standard_normals(gen: np.random.Generator, shape) -> np.ndarray:
    raw = gen.bit_generator.random_raw(int(np.prod(shape)))
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u).reshape(shape)


@dataclass
class SampleBatch:
    """``N`` i.i.d. draws on ``grid`` (rows are draws)."""

    grid: np.ndarray
    samples: np.ndarray
    seed: int
    law_descriptor: str
    labels: Optional[list] = None

    def column_names(self) -> list:
        if self.labels is not None:
            return list(self.labels)
        return [f"t={t!r}" for t in np.asarray(self.grid).tolist()]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.column_names())
            for row in self.samples:
                w.writerow([format(v, ".17g") for v in row])


def sample_gaussian(
    mean,
    gram,
    N: int,
    seed: int,
    tag: str = "sample",
    indices: Sequence[int] = (),
    law_descriptor: str = "",
) -> SampleBatch:
    """Draw ``mean + L z`` with ``L`` the (jittered) Cholesky factor of ``gram``."""
    G = gram if isinstance(gram, GramMatrix) else GramMatrix(np.asarray(gram, dtype=float))
    mean = np.asarray(mean, dtype=float).ravel()
    if mean.shape != (G.size,):
        raise ValidationError("mean length does not match Gram dimension")
    if N < 1:
        raise ValidationError("N must be positive")
    fac = G.factor()
    z = standard_normals(stream(seed, tag, *indices), (int(N), G.size))
    samples = mean[None, :] + z @ fac.lower.T
    grid = G.grid if G.grid is not None else np.arange(G.size, dtype=float)
    return SampleBatch(grid, samples, int(seed), law_descriptor, G.labels)


def joint_model_cov(model: ProcessModel, gset: ConditioningSet, grid, tol: float = 1e-11) -> GramMatrix:
    """Covariance of ``(X_{t_1}, ..., X_{t_m}, G_1, ..., G_n)``.

    Blocks: ``k(t_i, t_j)``, ``r_j(t_i)`` and ``C^g``.  Entries are assembled
    here from their defining integrals rather than taken from the
    conditioning module, so the result is an independent oracle.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(grid <= 0):
        raise ValidationError("grid must be a 1-d array of positive times")
    T = model.T
    fs = gset.functions
    m, n = grid.size, len(fs)
    J = np.zeros((m + n, m + n))
    J[:m, :m] = model.covariance(grid[:, None], grid[None, :])
    K = model.kernel.kernel
    sing = tuple(model.kernel.singular_points())
    for i, t in enumerate(grid):
        for j, g in enumerate(fs):
            hi = min(t, T)
            if model.alpha == 0.0 or hi <= 0:
                continue
            pts = sing + tuple(g.breakpoints(T))
            J[i, m + j] = J[m + j, i] = model.alpha * quad_value(
                lambda u, t=t, g=g: K(t, u) * g(u, T), 0.0, hi, tol=tol, points=pts
            )
    for a in range(n):
        for b in range(a, n):
            ga, gb = fs[a], fs[b]
            pts = tuple(ga.breakpoints(T)) + tuple(gb.breakpoints(T))
            v = quad_value(lambda u: ga(u, T) * gb(u, T), 0.0, T, tol=tol, points=pts)
            J[m + a, m + b] = J[m + b, m + a] = model.noise_var * v
    labels = [f"X(t={t!r})" for t in grid.tolist()] + [f"G{j + 1}" for j in range(n)]
    return GramMatrix(J, labels=labels)


def _schur(S: np.ndarray, m: int, x: np.ndarray, mu: Optional[np.ndarray] = None):
    Sxx, Sxg, Sgg = S[:m, :m], S[:m, m:], S[m:, m:]
    if np.linalg.cond(Sgg) > 1e12:
        raise ValidationError("empirical functional block is singular")
    mu = np.zeros(S.shape[0]) if mu is None else mu
    A = np.linalg.solve(Sgg, Sxg.T).T
    mean = mu[:m] + A @ (x - mu[m:])
    cov = Sxx - A @ Sxg.T
    return mean, 0.5 * (cov + cov.T)


def empirical_conditional(batch: SampleBatch, x, n_functionals: Optional[int] = None):
    """Regression estimate of the conditional mean and covariance at ``x``.

    The last ``n_functionals`` columns of the batch are the observed
    functionals (default ``len(x)``).  The empirical mean and covariance of
    the joint sample replace the model quantities in the Schur complement.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = len(x) if n_functionals is None else n_functionals
    Y = np.asarray(batch.samples, dtype=float)
    m = Y.shape[1] - n
    if m < 1:
        raise ValidationError("batch has no process columns")
    mu = Y.mean(axis=0)
    S = np.cov(Y, rowvar=False)
    return _schur(np.atleast_2d(S), m, x, mu)


def bootstrap_stderr(
    batch: SampleBatch,
    x,
    n_resamples: int = DEFAULT_BOOTSTRAP,
    seed: int = 0,
):
    """Bootstrap standard errors of :func:`empirical_conditional` (mean, cov)."""
    x = np.asarray(x, dtype=float).ravel()
    Y = np.asarray(batch.samples)
    N = Y.shape[0]
    means, covs = [], []
    for b in range(n_resamples):
        gen = stream(seed, "bootstrap", b)
        idx = gen.integers(0, N, size=N)
        sub = SampleBatch(batch.grid, Y[idx], batch.seed, batch.law_descriptor)
        mu, cov = empirical_conditional(sub, x)
        means.append(mu)
        covs.append(cov)
    return np.std(means, axis=0, ddof=1), np.std(covs, axis=0, ddof=1)

"""Volterra kernel families, conditioning functions and the process model.

A Volterra process is ``X_t = int_0^t K(t, s) dB_s``; its covariance is
``k(t, s) = int_0^{t ^ s} K(t, u) K(s, u) du``.  Every family below provides
the kernel ``K`` (vectorised over numpy arrays) and a closed-form covariance,
plus :meth:`KernelFamily.covariance_quad`, the kernel-quadrature route used
to cross-check the closed forms.
"""
from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import gamma as gamma_fn
from scipy.special import hyp2f1

from .exceptions import UnsupportedParameterError, ValidationError
from .numerics import DEFAULT_TOL, quad_value

MAX_INTEGRATION_DEPTH = 2


def _as_float_arrays(t, s):
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    scalar = t.ndim == 0 and s.ndim == 0
    t, s = np.broadcast_arrays(t, s)
    return t, s, scalar


def _finish(out, scalar):
    return float(out) if scalar else out


class KernelFamily(abc.ABC):
    """A causal kernel ``K(t, s)`` (zero for ``s > t``) and its covariance."""

    name: str = ""

    @abc.abstractmethod
    def kernel(self, t, s):
        """Evaluate ``K(t, s)``, broadcasting over arrays."""

    @abc.abstractmethod
    def covariance(self, t, s):
        """Closed-form covariance ``k(t, s)`` for ``t, s >= 0``."""

    @property
    def depth(self) -> int:
        """Number of nested time-integrations above a base family."""
        return 0

    def singular_points(self):
        """Kernel arguments ``s`` where ``K(t, .)`` is singular or kinked."""
        return (0.0,)

    def covariance_quad(self, t: float, s: float, tol: float = DEFAULT_TOL) -> float:
        """``k(t, s)`` by quadrature of ``K(t, u) K(s, u)`` over ``[0, t ^ s]``."""
        upper = min(float(t), float(s))
        if upper <= 0:
            return 0.0
        return quad_value(lambda u: self.kernel(t, u) * self.kernel(s, u), 0.0, upper, tol=tol)

    def to_dict(self) -> dict:
        return {"family": self.name}

    def variance(self, t):
        return self.covariance(t, t)


@dataclass(frozen=True)
class Brownian(KernelFamily):
    """Standard Brownian motion, ``K(t, s) = 1`` on ``0 <= s <= t``."""

    name = "brownian"

    def kernel(self, t, s):
        t, s, scalar = _as_float_arrays(t, s)
        out = ((s >= 0) & (s <= t)).astype(float)
        return _finish(out, scalar)

    def covariance(self, t, s):
        t, s, scalar = _as_float_arrays(t, s)
        return _finish(np.minimum(t, s), scalar)

    def covariance_quad(self, t, s, tol=DEFAULT_TOL):
        # the indicator product is exactly 1 on [0, t ^ s]
        return max(0.0, min(float(t), float(s)))


@dataclass(frozen=True)
class FBm(KernelFamily):
    """Fractional Brownian motion with Hurst index ``H``.

    Kernel, for ``0 < s < t``::

        K(t, s) = c_H [ (t/s (t - s))^(H - 1/2)
                        - (H - 1/2) s^(1/2 - H) int_s^t u^(H-3/2) (u - s)^(H-1/2) du ]

    The kernel representation is only provided for ``H > 1/2``; the
    covariance ``(t^2H + s^2H - |t - s|^2H) / 2`` works for all ``0 < H < 1``.

    Parameters
    ----------
    H : float
        Hurst index in ``(0, 1)``.
    inner_method : {"hyp2f1", "quad"}
        How the inner integral is computed.  ``"hyp2f1"`` uses the Gauss
        hypergeometric closed form; ``"quad"`` uses adaptive quadrature
        after the substitution ``u = s + v**2``.
    """

    H: float
    inner_method: str = "hyp2f1"
    c_H: float = field(init=False, repr=False, compare=False)

    name = "fbm"

    def __post_init__(self):
        H = float(self.H)
        if not (0.0 < H < 1.0) or not math.isfinite(H):
            raise UnsupportedParameterError(f"Hurst index must lie in (0, 1), got {self.H}")
        if self.inner_method not in ("hyp2f1", "quad"):
            raise ValidationError(f"unknown inner_method {self.inner_method!r}")
        # computed once at construction; the frozen instance is then read-only
        c_H = math.sqrt(2 * H * gamma_fn(1.5 - H) / (gamma_fn(H + 0.5) * gamma_fn(2 - 2 * H)))
        object.__setattr__(self, "c_H", c_H)

    def require_kernel_regime(self):
        if self.H <= 0.5:
            raise UnsupportedParameterError(
                f"the fBm kernel and its small-time closed forms need H > 1/2, got H={self.H}; "
                "use the Brownian family for H = 1/2"
            )

    def _inner_hyp2f1(self, t, s):
        H = self.H
        z = (t - s) / s
        return (
            (t - s) ** (H + 0.5)
            * s ** (H - 1.5)
            / (H + 0.5)
            * hyp2f1(1.5 - H, H + 0.5, H + 1.5, -z)
        )

    def _inner_quad(self, t, s):
        H = self.H
        out = np.empty_like(t)
        for i, (ti, si) in enumerate(zip(t.ravel(), s.ravel())):
            # u = s + v^2 removes the (u - s)^(H - 1/2) endpoint behaviour
            f = lambda v, si=si: 2.0 * v ** (2 * H) * (si + v * v) ** (H - 1.5)
            out.flat[i] = quad_value(f, 0.0, math.sqrt(ti - si), tol=1e-13)
        return out

    def inner_integral(self, t, s):
        """``int_s^t u^(H-3/2) (u-s)^(H-1/2) du`` for ``0 < s < t``."""
        t, s, scalar = _as_float_arrays(t, s)
        if self.inner_method == "quad":
            out = self._inner_quad(t, s)
        else:
            out = self._inner_hyp2f1(t, s)
        return _finish(out, scalar)

    def kernel(self, t, s):
        self.require_kernel_regime()
        t, s, scalar = _as_float_arrays(t, s)
        H = self.H
        out = np.zeros(t.shape)
        inside = (s > 0) & (s < t)
        if np.any(inside):
            ti, si = t[inside], s[inside]
            if self.inner_method == "quad":
                inner = self._inner_quad(ti, si)
            else:
                inner = self._inner_hyp2f1(ti, si)
            out[inside] = self.c_H * (
                (ti / si * (ti - si)) ** (H - 0.5) - (H - 0.5) * si ** (0.5 - H) * inner
            )
        out[(s == 0) & (t > 0)] = np.inf
        return _finish(out, scalar)

    def integrated_kernel(self, t, s, k: int = 0):
        """Kernel of the ``k``-fold time integral, ``int_s^t (t-v)^(k-1)/(k-1)! K(v, s) dv``.

        Closed form: ``c_H (H-1/2) B(H-1/2, k+1) / k! (t-s)^(H+k-1/2)
        2F1(1/2-H, H-1/2; H+k+1/2; -(t-s)/s)``; ``k = 0`` is the kernel itself.
        """
        self.require_kernel_regime()
        t, s, scalar = _as_float_arrays(t, s)
        H = self.H
        out = np.zeros(t.shape)
        inside = (s > 0) & (s < t)
        if np.any(inside):
            d = t[inside] - s[inside]
            coef = self.c_H * (H - 0.5) * beta_fn(H - 0.5, k + 1) / math.factorial(k)
            out[inside] = coef * d ** (H + k - 0.5) * hyp2f1(
                0.5 - H, H - 0.5, H + k + 0.5, -d / s[inside]
            )
        # every integrated kernel still blows up like s^(1/2 - H) at s = 0
        out[(s == 0) & (t > 0)] = np.inf
        return _finish(out, scalar)

    def covariance(self, t, s):
        t, s, scalar = _as_float_arrays(t, s)
        h2 = 2.0 * self.H
        out = 0.5 * (t**h2 + s**h2 - np.abs(t - s) ** h2)
        return _finish(out, scalar)

    def to_dict(self):
        return {"family": self.name, "H": self.H}


def _mfold_covariance(m: int, t, s):
    """``(m!)^-2 int_0^{t^s} (t - u)^m (s - u)^m du`` without cancellation."""
    a = np.minimum(t, s)
    b = np.maximum(t, s)
    d = b - a
    out = np.zeros(np.shape(a))
    for j in range(m + 1):
        out = out + math.comb(m, j) * d ** (m - j) * a ** (m + j + 1) / (m + j + 1)
    return out / math.factorial(m) ** 2


@dataclass(frozen=True)
class MFoldIBM(KernelFamily):
    """``m``-fold integrated Brownian motion, ``K(t, s) = (t - s)^m / m!``."""

    m: int

    name = "mfold"

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise UnsupportedParameterError(f"m must be a positive integer, got {self.m}")

    def kernel(self, t, s):
        t, s, scalar = _as_float_arrays(t, s)
        inside = (s >= 0) & (s <= t)
        out = np.where(inside, np.clip(t - s, 0, None) ** self.m, 0.0) / math.factorial(self.m)
        return _finish(out, scalar)

    def covariance(self, t, s):
        t, s, scalar = _as_float_arrays(t, s)
        return _finish(_mfold_covariance(self.m, t, s), scalar)

    def singular_points(self):
        return ()

    def to_dict(self):
        return {"family": self.name, "m": int(self.m)}


@dataclass(frozen=True)
class IntegratedVolterra(KernelFamily):
    """Time integral ``X_t = int_0^t Z_u du`` of a Volterra process ``Z``.

    The kernel is ``h(t, s) = int_s^t K(u, s) du``.  For Brownian and
    m-fold inner kernels the antiderivative is exact and used directly;
    otherwise ``h`` is computed by adaptive quadrature.
    """

    inner: KernelFamily
    quad_tol: float = 1e-11

    name = "integrated"

    def __post_init__(self):
        if not isinstance(self.inner, KernelFamily):
            raise ValidationError("inner must be a KernelFamily")
        if self.depth > MAX_INTEGRATION_DEPTH:
            raise UnsupportedParameterError(
                f"integrated nesting depth {self.depth} exceeds {MAX_INTEGRATION_DEPTH}"
            )

    @property
    def depth(self) -> int:
        return 1 + self.inner.depth

    def _polynomial_degree(self) -> Optional[int]:
        base, k = self._base()
        if isinstance(base, Brownian):
            return k
        if isinstance(base, MFoldIBM):
            return base.m + k
        return None

    def _base(self):
        fam, k = self, 0
        while isinstance(fam, IntegratedVolterra):
            fam, k = fam.inner, k + 1
        return fam, k

    def singular_points(self):
        return self._base()[0].singular_points()

    def kernel(self, t, s):
        t, s, scalar = _as_float_arrays(t, s)
        deg = self._polynomial_degree()
        inside = (s >= 0) & (s <= t)
        if deg is not None:
            out = np.where(inside, np.clip(t - s, 0, None) ** deg, 0.0) / math.factorial(deg)
            return _finish(out, scalar)
        base, k = self._base()
        if isinstance(base, FBm):
            return _finish(base.integrated_kernel(t, s, k), scalar)
        out = np.zeros(t.shape)
        mask = inside & (s < t)
        for idx in np.ndindex(t.shape):
            if not mask[idx]:
                continue
            ti, si = float(t[idx]), float(s[idx])
            out[idx] = quad_value(
                lambda u: self.inner.kernel(u, si), si, ti, tol=self.quad_tol
            )
        return _finish(out, scalar)

    def covariance(self, t, s):
        t, s, scalar = _as_float_arrays(t, s)
        deg = self._polynomial_degree()
        if deg is not None:
            return _finish(_mfold_covariance(deg, t, s), scalar)
        if isinstance(self.inner, FBm):
            # int_0^t int_0^s of the fBm covariance, in closed form
            H = self.inner.H
            a = np.minimum(t, s)
            b = np.maximum(t, s)
            p = 2 * H
            cross = (b**(p + 2) + a**(p + 2) - (b - a) ** (p + 2)) / ((p + 1) * (p + 2))
            out = 0.5 * (a * b**(p + 1) / (p + 1) + b * a**(p + 1) / (p + 1) - cross)
            return _finish(out, scalar)
        out = np.vectorize(self.covariance_quad)(t, s)
        return _finish(np.asarray(out, dtype=float), scalar)

    def to_dict(self):
        return {"family": self.name, "inner": self.inner.to_dict()}


def kernel_from_dict(spec: dict) -> KernelFamily:
    """Build a kernel family from its ``to_dict`` representation."""
    spec = dict(spec)
    family = spec.pop("family", None)
    if family == "brownian":
        return Brownian()
    if family == "fbm":
        return FBm(H=spec["H"], inner_method=spec.get("inner_method", "hyp2f1"))
    if family == "mfold":
        return MFoldIBM(m=int(spec["m"]))
    if family == "integrated":
        return IntegratedVolterra(inner=kernel_from_dict(spec["inner"]))
    raise ValidationError(f"unknown kernel family {family!r}")


@dataclass(frozen=True)
class ProcessModel:
    """A Volterra kernel observed through ``W = alpha B + alpha_tilde B~`` up to ``T``.

    Parameters
    ----------
    kernel : KernelFamily
    T : float
        Conditioning horizon.
    alpha, alpha_tilde : float
        Signal and noise weights of the observed mixed Brownian motion.
    """

    kernel: KernelFamily
    T: float = 1.0
    alpha: float = 1.0
    alpha_tilde: float = 0.0

    def __post_init__(self):
        if not isinstance(self.kernel, KernelFamily):
            raise ValidationError("kernel must be a KernelFamily instance")
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValidationError(f"T must be positive, got {self.T}")
        if not (math.isfinite(self.alpha) and math.isfinite(self.alpha_tilde)):
            raise ValidationError("alpha and alpha_tilde must be finite")
        if self.alpha**2 + self.alpha_tilde**2 <= 0:
            raise ValidationError("alpha^2 + alpha_tilde^2 must be positive")

    @property
    def noise_var(self) -> float:
        """``alpha^2 + alpha_tilde^2``, the variance rate of the observed channel."""
        return self.alpha**2 + self.alpha_tilde**2

    @property
    def signal_fraction(self) -> float:
        """``alpha^2 / (alpha^2 + alpha_tilde^2)``."""
        return self.alpha**2 / self.noise_var

    def kernel_at(self, t, s):
        return self.kernel.kernel(t, s)

    def covariance(self, t, s):
        return self.kernel.covariance(t, s)

    def increment_covariance(self, t0, t, s):
        """``Cov(X_t - X_t0, X_s - X_t0)`` from the covariance function."""
        k = self.kernel.covariance
        return k(t, s) - k(t, t0) - k(s, t0) + k(t0, t0)

    def kernel_product_integral(self, t, s, lo, hi, tol=DEFAULT_TOL, abs_tol=None):
        """``int_lo^hi K(t, v) K(s, v) dv`` by quadrature (0 when ``hi <= lo``)."""
        hi = min(float(hi), float(t), float(s))
        lo = max(float(lo), 0.0)
        if hi <= lo:
            return 0.0
        K = self.kernel.kernel
        pts = tuple(self.kernel.singular_points()) + (self.T,)
        return quad_value(lambda v: K(t, v) * K(s, v), lo, hi, tol=tol, points=pts, abs_tol=abs_tol)

    def increment_covariance_quad(self, t0, t, s, tol=DEFAULT_TOL):
        """``Cov(X_t - X_t0, X_s - X_t0)`` by quadrature of kernel differences.

        Avoids the cancellation of :meth:`increment_covariance` when the
        increments are tiny compared with ``k(t0, t0)``.
        """
        t0, t, s = float(t0), float(t), float(s)
        hi = min(t, s)
        if hi <= 0:
            return 0.0
        K = self.kernel.kernel
        f = lambda v: (K(t, v) - K(t0, v)) * (K(s, v) - K(t0, v))
        pts = tuple(self.kernel.singular_points()) + (t0,)
        return quad_value(f, 0.0, hi, tol=tol, points=pts, abs_tol=1e-300)

    def to_dict(self):
        return {
            "kernel": self.kernel.to_dict(),
            "T": self.T,
            "alpha": self.alpha,
            "alpha_tilde": self.alpha_tilde,
        }


def kernel_eval(model: ProcessModel, t: float, s: float) -> float:
    """``K(t, s)`` for the model's kernel; 0 whenever ``s > t``."""
    if not (math.isfinite(t) and math.isfinite(s)):
        raise ValidationError("t and s must be finite")
    if t < 0 or s < 0:
        raise ValidationError("t and s must be non-negative")
    if s > t:
        return 0.0
    return float(model.kernel_at(t, s))


class ConditioningFunction(abc.ABC):
    """Square-integrable ``g`` on ``[0, T)`` defining ``int_0^T g dW``."""

    @abc.abstractmethod
    def __call__(self, t, T):
        ...

    def breakpoints(self, T):
        return ()

    @abc.abstractmethod
    def to_dict(self) -> dict:
        ...


@dataclass(frozen=True)
class Indicator(ConditioningFunction):
    """``g(t) = 1`` on ``[0, T)``."""

    def __call__(self, t, T):
        t = np.asarray(t, dtype=float)
        out = ((t >= 0) & (t < T)).astype(float)
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {"type": "indicator"}


@dataclass(frozen=True)
class LinearDecay(ConditioningFunction):
    """``g(t) = (T - t) / T`` on ``[0, T)``; pairs with the time average of ``W``."""

    def __call__(self, t, T):
        t = np.asarray(t, dtype=float)
        out = np.where((t >= 0) & (t < T), (T - t) / T, 0.0)
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {"type": "linear_decay"}


@dataclass(frozen=True)
class Tabulated(ConditioningFunction):
    """Piecewise-constant ``g`` with left-constant interpolation.

    ``g(t) = values[j]`` for ``grid[j] <= t < grid[j+1]``; zero at and after
    the last grid point.
    """

    grid: tuple
    values: tuple

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise ValidationError("tabulated grid needs at least two points")
        if np.any(np.diff(grid) <= 0):
            raise ValidationError("tabulated grid must be strictly increasing")
        if grid[0] != 0.0:
            raise ValidationError("tabulated grid must start at 0")
        if values.size not in (grid.size, grid.size - 1):
            raise ValidationError("tabulated values must have len(grid) or len(grid) - 1 entries")
        if not np.all(np.isfinite(values)):
            raise ValidationError("tabulated values must be finite")
        object.__setattr__(self, "grid", tuple(grid.tolist()))
        object.__setattr__(self, "values", tuple(values.tolist()))

    def check_horizon(self, T):
        if not math.isclose(self.grid[-1], T, rel_tol=1e-12, abs_tol=1e-14):
            raise ValidationError(f"tabulated grid must end at T={T}, ends at {self.grid[-1]}")

    def __call__(self, t, T):
        self.check_horizon(T)
        grid = np.asarray(self.grid)
        vals = np.asarray(self.values[: grid.size - 1])
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(grid, t, side="right") - 1
        ok = (t >= 0) & (t < T) & (idx >= 0) & (idx < vals.size)
        out = np.where(ok, vals[np.clip(idx, 0, vals.size - 1)], 0.0)
        return float(out) if out.ndim == 0 else out

    def breakpoints(self, T):
        return self.grid[1:-1]

    def to_dict(self):
        return {"type": "tabulated", "grid": list(self.grid), "values": list(self.values)}


def conditioning_fn_from_dict(spec: dict) -> ConditioningFunction:
    kind = spec.get("type")
    if kind == "indicator":
        return Indicator()
    if kind == "linear_decay":
        return LinearDecay()
    if kind == "tabulated":
        return Tabulated(tuple(spec["grid"]), tuple(spec["values"]))
    raise ValidationError(f"unknown conditioning function type {kind!r}")


def conditioning_fn_eval(g: ConditioningFunction, t: float, T: float) -> float:
    if T <= 0:
        raise ValidationError("T must be positive")
    if t < 0:
        raise ValidationError("t must be non-negative")
    return float(g(t, T))


@dataclass(frozen=True)
class ConditioningSet:
    """Ordered conditioning functions ``g_1..g_n`` and observed values ``x``."""

    functions: tuple
    x: tuple

    def __post_init__(self):
        functions = tuple(self.functions)
        x = tuple(float(v) for v in np.atleast_1d(np.asarray(self.x, dtype=float)))
        if not functions:
            raise ValidationError("at least one conditioning function is required")
        if any(not isinstance(g, ConditioningFunction) for g in functions):
            raise ValidationError("functions must be ConditioningFunction instances")
        if len(x) != len(functions):
            raise ValidationError(
                f"observation vector has length {len(x)}, expected {len(functions)}"
            )
        if not all(math.isfinite(v) for v in x):
            raise ValidationError("observations must be finite")
        object.__setattr__(self, "functions", functions)
        object.__setattr__(self, "x", x)

    def __len__(self):
        return len(self.functions)

    def with_x(self, x: Sequence[float]) -> "ConditioningSet":
        return ConditioningSet(self.functions, tuple(x))


def holder_modulus(
    model: ProcessModel,
    delta: float,
    resolution: int = 32,
    tol: float = 1e-10,
    full_output: bool = False,
):
    """Numerical ``M(delta) = sup_{|t1 - t2| <= delta} int_0^T (K(t1,s) - K(t2,s))^2 ds``.

    The supremum is taken over ``resolution`` pairs ``(t, t + delta)`` with
    ``t`` uniform on ``[0, T - delta]``.  With ``full_output`` a dict with the
    pair grid and the maximizing pair is returned as well.
    """
    T = model.T
    if not (0 < delta <= T):
        raise ValidationError(f"delta must lie in (0, T], got {delta}")
    if resolution < 1:
        raise ValidationError("resolution must be positive")
    K = model.kernel_at
    starts = np.linspace(0.0, T - delta, resolution)
    sing = tuple(model.kernel.singular_points())
    values = np.empty(resolution)
    for i, t1 in enumerate(starts):
        t2 = min(t1 + delta, T)
        f = lambda s, t1=t1, t2=t2: (K(t2, s) - K(t1, s)) ** 2
        values[i] = quad_value(f, 0.0, T, tol=tol, points=(t1, t2) + sing)
    best = int(np.argmax(values))
    value = float(values[best])
    if full_output:
        info = {
            "pairs": np.column_stack([starts, np.minimum(starts + delta, T)]),
            "values": values,
            "argmax": (float(starts[best]), float(min(starts[best] + delta, T))),
            "grid": "uniform (t, t + delta)",
        }
        return value, info
    return value

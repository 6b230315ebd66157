"""Bounded loss functions and the robust scale estimator built on them.

Three loss families are provided.  The hyperbolic tangent family is the
workhorse: quadratic up to ``b``, smoothly flattening between ``b`` and ``c``,
and constant beyond ``c`` so that gross outliers carry zero derivative.  The
``square`` and ``abs`` kinds are the classical least squares and least
absolute value losses used by the non-robust special cases and by the
initialization, respectively.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RhoSpec",
    "MScaleSpec",
    "TANH_RHO",
    "SQUARE_RHO",
    "ABS_RHO",
    "DEFAULT_MSCALE",
    "mscale",
    "mscale_grid",
    "DegenerateScaleWarning",
    "ScaleConvergenceWarning",
]

# IRLS weight assigned to an exactly-zero denominator in the |z| loss.
_ABS_WEIGHT_CAP = 1e6


class DegenerateScaleWarning(RuntimeWarning):
    """A scale estimate collapsed to zero (constant or all-zero input)."""


class ScaleConvergenceWarning(RuntimeWarning):
    """The scale fixed point did not reach tolerance within max_iter."""


@dataclass(frozen=True)
class RhoSpec:
    """Loss family selector with the hyperbolic tangent tuning constants.

    For ``kind="tanh"`` the loss is ``z**2 / 2`` on ``|z| <= b``,
    ``d - (q1/q2) * log(cosh(q2 * (c - |z|)))`` on ``b <= |z| <= c`` and the
    constant ``d = b**2/2 + (q1/q2) * log(cosh(q2 * (c - b)))`` beyond ``c``.
    The derivative ``psi`` is continuous and vanishes for ``|z| >= c``.
    """

    kind: str = "tanh"
    b: float = 1.5
    c: float = 4.0
    q1: float = 1.540793
    q2: float = 0.8622731

    def __post_init__(self):
        if self.kind not in ("tanh", "square", "abs"):
            raise ValueError(f"unknown rho kind {self.kind!r}")
        if self.kind == "tanh":
            if not 0 < self.b < self.c:
                raise ValueError("tanh family needs 0 < b < c")
            if self.q1 <= 0 or self.q2 <= 0:
                raise ValueError("tanh family needs positive q1, q2")

    @property
    def d(self):
        """Plateau value of the tanh loss."""
        return self.b**2 / 2 + (self.q1 / self.q2) * np.log(np.cosh(self.q2 * (self.c - self.b)))

    @property
    def sup(self):
        """Supremum of the loss (infinite for the unbounded kinds)."""
        return self.d if self.kind == "tanh" else np.inf

    def rho(self, z):
        scalar = np.isscalar(z) or np.ndim(z) == 0
        z = np.abs(np.atleast_1d(np.asarray(z, dtype=float)))
        if self.kind == "square":
            out = z**2
        elif self.kind == "abs":
            out = z
        else:
            out = np.where(z <= self.b, z * z / 2, self.d)
            mid = (z > self.b) & (z < self.c)
            if mid.any():
                out[mid] = self.d - (self.q1 / self.q2) * np.log(
                    np.cosh(self.q2 * (self.c - z[mid]))
                )
        return float(out[0]) if scalar else out

    def psi(self, z):
        scalar = np.isscalar(z) or np.ndim(z) == 0
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if self.kind == "square":
            out = 2.0 * z
        elif self.kind == "abs":
            out = np.sign(z)
        else:
            az = np.abs(z)
            out = np.where(az <= self.b, z, 0.0)
            mid = (az > self.b) & (az < self.c)
            if mid.any():
                out[mid] = self.q1 * np.tanh(self.q2 * (self.c - az[mid])) * np.sign(z[mid])
        return float(out[0]) if scalar else out

    def weight(self, z):
        """IRLS weight ``psi(z) / z`` with ``weight(0) = 1``.

        The square loss uses the constant 1 (the factor 2 cancels in the
        normal equations) and the abs loss caps ``1 / |z|`` at 1e6 so the
        weight stays finite at zero residuals.
        """
        scalar = np.isscalar(z) or np.ndim(z) == 0
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if self.kind == "square":
            out = np.ones_like(z)
        elif self.kind == "abs":
            az = np.abs(z)
            with np.errstate(divide="ignore"):
                out = np.minimum(1.0 / np.where(az > 0, az, 1.0), _ABS_WEIGHT_CAP)
            out = np.where(az > 0, out, _ABS_WEIGHT_CAP)
        else:
            az = np.abs(z)
            out = np.where(az <= self.b, 1.0, 0.0)
            mid = (az > self.b) & (az < self.c)
            if mid.any():
                out[mid] = self.q1 * np.tanh(self.q2 * (self.c - az[mid])) / az[mid]
        return float(out[0]) if scalar else out


TANH_RHO = RhoSpec("tanh")
SQUARE_RHO = RhoSpec("square")
ABS_RHO = RhoSpec("abs")


@dataclass(frozen=True)
class MScaleSpec:
    """Settings for the M-estimator of scale.

    ``sigma`` solves ``mean(rho(z_i / (a * sigma))) = delta``; delta = 1.88
    puts the breakdown point at one half for the default tanh loss and
    a = 0.3431 makes the estimate consistent at the standard Gaussian.
    """

    rho: RhoSpec = field(default_factory=RhoSpec)
    delta: float = 1.88
    a: float = 0.3431
    max_iter: int = 100
    rel_tol: float = 1e-9

    def __post_init__(self):
        if not 0 < self.delta < self.rho.sup:
            raise ValueError("delta must lie in (0, sup rho)")
        if self.a <= 0:
            raise ValueError("consistency constant a must be positive")


DEFAULT_MSCALE = MScaleSpec()


def mscale(values, spec=DEFAULT_MSCALE):
    """M-estimate of scale of a univariate sample.

    Solves the scale equation by the fixed point
    ``sigma_{k+1}^2 = sigma_k^2 * mean(rho(z / (a * sigma_k))) / delta``
    started from ``median(|z|) / 0.6745``.  An all-zero sample has no
    positive solution; 0.0 is returned with a :class:`DegenerateScaleWarning`.
    """
    z = np.asarray(values, dtype=float).ravel()
    if z.size == 0:
        raise ValueError("mscale of an empty sample")
    out = mscale_grid(z[:, None], spec=spec)
    return float(out[0])


def mscale_grid(values, mask=None, spec=DEFAULT_MSCALE):
    """Columnwise M-estimates of scale, solved for all columns at once.

    `values` is an ``(n, d)`` array; `mask` marks which entries participate
    (all of them when omitted).  Returns a length-``d`` array of scales.
    Columns whose participating entries are all zero get scale 0.0 and a
    :class:`DegenerateScaleWarning`.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ValueError("values must be 2-D (samples in rows)")
    if mask is None:
        mask = np.ones(v.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != v.shape:
            raise ValueError("mask shape must match values shape")
    counts = mask.sum(axis=0)
    if np.any(counts == 0):
        raise ValueError("every column needs at least one participating value")

    av = np.where(mask, np.abs(v), np.nan)
    med = np.nanmedian(av, axis=0)
    sigma = med / 0.6745
    mean_abs = np.nansum(av, axis=0) / counts
    sigma = np.where(sigma > 0, sigma, mean_abs)

    dead = sigma == 0  # all participating entries are zero
    if np.any(dead):
        warnings.warn(
            f"{int(dead.sum())} column(s) with all-zero values: scale set to 0",
            DegenerateScaleWarning,
            stacklevel=2,
        )

    active = ~dead
    sig2 = np.where(active, sigma, 1.0) ** 2
    zeroed = np.where(mask, v, 0.0)
    converged = np.zeros(v.shape[1], dtype=bool)
    converged[dead] = True
    for _ in range(spec.max_iter):
        live = ~converged
        if not live.any():
            break
        s = np.sqrt(sig2[live])
        r = spec.rho.rho(zeroed[:, live] / (spec.a * s))
        r = np.where(mask[:, live], r, 0.0)
        factor = r.sum(axis=0) / (counts[live] * spec.delta)
        sig2_live = sig2[live] * factor
        done = np.abs(factor - 1.0) <= spec.rel_tol
        sig2[live] = sig2_live
        idx = np.flatnonzero(live)
        converged[idx[done]] = True
    else:
        n_left = int((~converged).sum())
        if n_left:
            warnings.warn(
                f"scale fixed point not converged for {n_left} column(s) "
                f"after {spec.max_iter} iterations",
                ScaleConvergenceWarning,
                stacklevel=2,
            )

    out = np.sqrt(sig2)
    out[dead] = 0.0
    return out

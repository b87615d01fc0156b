"""Coefficient models for McKean-Vlasov SDEs, drift taming, and built-in examples.

All evaluations are batched. A state argument ``x`` has shape (M, d); the
measure argument is always an :class:`~mvsde.measure.EmpiricalMeasure`.
Returned derivative arrays put the differentiation axis last:

=============  ===================  =====================================
method         shape                entry
=============  ===================  =====================================
``b``          (M, d)               b^(k)(x_i, mu)
``sigma``      (M, d, m)            sigma^(k,l)(x_i, mu)
``dx_b``       (M, d, d)            d/dx_p b^(k)(x_i, mu)
``dmu_b``      (M, P, d, d)         [d_mu b^(k)(x_i, mu, y_j)]_p
``dx_sigma``   (M, d, m, d)         d/dx_p sigma^(k,l)(x_i, mu)
``dmu_sigma``  (M, P, d, m, d)      [d_mu sigma^(k,l)(x_i, mu, y_j)]_p
=============  ===================  =====================================

Models are expected (not checked) to satisfy the usual hypotheses for the
tamed scheme: one-sided Lipschitz drift with polynomial growth of order
``rho``, globally Lipschitz diffusion, and Lipschitz, bounded space and
measure derivatives.  :func:`taming_growth_check` is a sampling probe for
the growth part only.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np

from .measure import EmpiricalMeasure, mean

__all__ = [
    "CoefficientModel",
    "GinzburgLandauModel",
    "LinearMeanFieldModel",
    "AdditiveNoiseModel",
    "TamingReport",
    "tame_drift",
    "taming_divisor",
    "taming_growth_check",
    "MODELS",
    "build_model",
]


class CoefficientModel(abc.ABC):
    """Interface for user coefficient models.

    Subclasses set ``d``, ``m`` and ``rho`` and implement the six batched
    evaluations.  Evaluations must be pure: the engine calls them from
    several threads on a shared read-only snapshot.
    """

    d: int
    m: int
    rho: float
    # False lets the engine skip the O(N^2) measure-derivative correction.
    measure_dependent_diffusion: bool = True

    @abc.abstractmethod
    def b(self, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray: ...

    @abc.abstractmethod
    def sigma(self, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray: ...

    @abc.abstractmethod
    def dx_b(self, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray: ...

    @abc.abstractmethod
    def dmu_b(self, x: np.ndarray, mu: EmpiricalMeasure, y: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def dx_sigma(self, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray: ...

    @abc.abstractmethod
    def dmu_sigma(self, x: np.ndarray, mu: EmpiricalMeasure, y: np.ndarray) -> np.ndarray: ...


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, d) if d == 1 else x[None, :]
    return x


@dataclass(frozen=True)
class GinzburgLandauModel(CoefficientModel):
    """Mean-field stochastic Ginzburg-Landau equation in one dimension.

    dX = (alpha^2/2 X - X^3 + c E[X]) dt + alpha X dW
    """

    alpha: float = 1.0
    c: float = 0.0
    d: int = field(default=1, init=False)
    m: int = field(default=1, init=False)
    rho: float = field(default=2.0, init=False)
    measure_dependent_diffusion: bool = field(default=False, init=False)

    def b(self, x, mu):
        x = _as_points(x, 1)
        return 0.5 * self.alpha**2 * x - x**3 + self.c * mean(mu)

    def sigma(self, x, mu):
        x = _as_points(x, 1)
        return (self.alpha * x)[:, :, None]

    def dx_b(self, x, mu):
        x = _as_points(x, 1)
        return (0.5 * self.alpha**2 - 3.0 * x**2)[:, :, None]

    def dmu_b(self, x, mu, y):
        x, y = _as_points(x, 1), _as_points(y, 1)
        return np.full((x.shape[0], y.shape[0], 1, 1), float(self.c))

    def dx_sigma(self, x, mu):
        x = _as_points(x, 1)
        return np.full((x.shape[0], 1, 1, 1), float(self.alpha))

    def dmu_sigma(self, x, mu, y):
        x, y = _as_points(x, 1), _as_points(y, 1)
        return np.zeros((x.shape[0], y.shape[0], 1, 1, 1))


@dataclass(frozen=True)
class LinearMeanFieldModel(CoefficientModel):
    """dX = (a X + abar E[X]) dt + (bcoef X + bbar E[X]) dW.

    The mean M(t) = E[X_t] solves M' = (a + abar) M, and bbar != 0 gives a
    diffusion that genuinely depends on the measure.
    """

    a: float = -1.0
    abar: float = 0.5
    bcoef: float = 0.2
    bbar: float = 0.1
    d: int = field(default=1, init=False)
    m: int = field(default=1, init=False)
    rho: float = field(default=0.0, init=False)

    def b(self, x, mu):
        x = _as_points(x, 1)
        return self.a * x + self.abar * mean(mu)

    def sigma(self, x, mu):
        x = _as_points(x, 1)
        return (self.bcoef * x + self.bbar * mean(mu))[:, :, None]

    def dx_b(self, x, mu):
        x = _as_points(x, 1)
        return np.full((x.shape[0], 1, 1), float(self.a))

    def dmu_b(self, x, mu, y):
        x, y = _as_points(x, 1), _as_points(y, 1)
        return np.full((x.shape[0], y.shape[0], 1, 1), float(self.abar))

    def dx_sigma(self, x, mu):
        x = _as_points(x, 1)
        return np.full((x.shape[0], 1, 1, 1), float(self.bcoef))

    def dmu_sigma(self, x, mu, y):
        x, y = _as_points(x, 1), _as_points(y, 1)
        return np.full((x.shape[0], y.shape[0], 1, 1, 1), float(self.bbar))


@dataclass(frozen=True)
class AdditiveNoiseModel(CoefficientModel):
    """Zero drift, constant diffusion ``sigma``; every scheme is exact here."""

    sigma0: float = 1.0
    d: int = field(default=1, init=False)
    m: int = field(default=1, init=False)
    rho: float = field(default=0.0, init=False)
    measure_dependent_diffusion: bool = field(default=False, init=False)

    def b(self, x, mu):
        return np.zeros_like(_as_points(x, 1))

    def sigma(self, x, mu):
        x = _as_points(x, 1)
        return np.full((x.shape[0], 1, 1), float(self.sigma0))

    def dx_b(self, x, mu):
        return np.zeros((_as_points(x, 1).shape[0], 1, 1))

    def dmu_b(self, x, mu, y):
        return np.zeros((_as_points(x, 1).shape[0], _as_points(y, 1).shape[0], 1, 1))

    def dx_sigma(self, x, mu):
        return np.zeros((_as_points(x, 1).shape[0], 1, 1, 1))

    def dmu_sigma(self, x, mu, y):
        return np.zeros((_as_points(x, 1).shape[0], _as_points(y, 1).shape[0], 1, 1, 1))


MODELS = {
    "ginzburg-landau": GinzburgLandauModel,
    "linear-mean-field": LinearMeanFieldModel,
    "additive-noise": AdditiveNoiseModel,
}


def build_model(name: str, params: dict | None = None) -> CoefficientModel:
    """Instantiate a registered model by name with keyword parameters."""
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; known models: {sorted(MODELS)}") from None
    return cls(**(params or {}))


def taming_divisor(model: CoefficientModel, n: int, x: np.ndarray) -> np.ndarray:
    """1 + |x|^(rho+2) / n for each row of ``x``; always >= 1."""
    x = _as_points(x, model.d)
    return 1.0 + np.linalg.norm(x, axis=1) ** (model.rho + 2.0) / n


def tame_drift(model: CoefficientModel, n: int, x, mu: EmpiricalMeasure) -> np.ndarray:
    """Tamed drift b(x, mu) / (1 + |x|^(rho+2) / n).

    Accepts a single point of shape (d,) or a batch (M, d) and returns the
    same shape.
    """
    if n < 1:
        raise ValueError(f"taming level must be >= 1, got {n}")
    x_arr = np.asarray(x, dtype=float)
    pts = _as_points(x_arr, model.d)
    out = model.b(pts, mu) / taming_divisor(model, n, pts)[:, None]
    return out.reshape(x_arr.shape) if x_arr.ndim == 1 else out


@dataclass
class TamingReport:
    radii: np.ndarray
    ratios: np.ndarray
    max_ratio: float
    growth_slope: float
    unbounded: bool


def taming_growth_check(
    model: CoefficientModel,
    n: int,
    samples,
    mu: EmpiricalMeasure | None = None,
    slope_tol: float = 0.25,
) -> TamingReport:
    """Probe |b_n(x)| <= K min{sqrt(n) (1+|x|), (1+|x|)^(rho/2+2)} on samples.

    ``ratios`` holds |b_n| divided by the min-envelope.  Growth is flagged
    when log(ratio) still rises against log(1+|x|) with slope above
    ``slope_tol`` over the outer half of the sweep, i.e. no single constant
    K can cover it.
    """
    x = _as_points(samples, model.d)
    if mu is None:
        mu = EmpiricalMeasure(np.zeros((1, model.d)))
    radii = np.linalg.norm(x, axis=1)
    bn = np.linalg.norm(tame_drift(model, n, x, mu), axis=1)
    envelope = np.minimum(np.sqrt(n) * (1.0 + radii), (1.0 + radii) ** (model.rho / 2.0 + 2.0))
    ratios = bn / envelope

    order = np.argsort(radii)
    radii, ratios = radii[order], ratios[order]
    outer = slice(len(radii) // 2, None)
    slope = 0.0
    keep = ratios[outer] > 0
    if np.count_nonzero(keep) >= 2:
        lr = np.log1p(radii[outer][keep])
        if np.ptp(lr) > 0:
            slope = float(np.polyfit(lr, np.log(ratios[outer][keep]), 1)[0])
    return TamingReport(
        radii=radii,
        ratios=ratios,
        max_ratio=float(ratios.max()),
        growth_slope=slope,
        unbounded=slope > slope_tol,
    )

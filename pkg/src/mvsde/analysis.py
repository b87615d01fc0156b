"""Strong-error studies, derivative validation, moment tracking and chaos studies."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import reduce

import numpy as np

from . import noise
from .measure import EmpiricalMeasure, moment, w2_distance_1d
from .model import CoefficientModel
from .scheme import SimConfig, Trajectory, simulate

__all__ = [
    "ExactScheme",
    "ConvergenceReport",
    "fit_rate",
    "strong_error",
    "DerivativeCheck",
    "DerivativeReport",
    "check_function",
    "validate_derivatives",
    "MomentSeries",
    "moment_track",
    "ChaosReport",
    "chaos_study",
    "w2_quantile_1d",
]

log = logging.getLogger(__name__)

MAX_DIVERGED_FRACTION = 0.01
# rmse below this multiple of the reference scale is round-off, reported as 0
ROUNDOFF_FLOOR = 1e-12


class ExactScheme(ValueError):
    """Raised by :func:`fit_rate` when some level has zero error."""


def fit_rate(levels, rmse, T: float = 1.0) -> float:
    """Least-squares slope of log2(rmse) against log2(h), h = T / n."""
    levels = np.asarray(levels, dtype=float)
    rmse = np.asarray(rmse, dtype=float)
    if levels.size < 2 or levels.size != rmse.size:
        raise ValueError("need at least two levels with one rmse each")
    if np.any(rmse == 0):
        raise ExactScheme("zero error at some level; the scheme is exact here")
    if np.any(rmse < 0) or not np.all(np.isfinite(rmse)):
        raise ValueError("rmse values must be finite and positive")
    x = np.log2(T / levels)
    y = np.log2(rmse)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


@dataclass
class ConvergenceReport:
    """Strong errors of one scheme against a fine reference on shared noise.

    ``rmse`` is measured at the terminal time; ``rmse_sup`` is the maximum
    over the coarse grid of the per-time RMSE.  ``diverged`` counts
    repetitions excluded at each level.
    """

    levels: list[int]
    rmse: list[float]
    rmse_sup: list[float]
    diverged: list[int]
    repetitions: int
    n_ref: int
    T: float = 1.0
    slope: float | None = None
    slope_sup: float | None = None
    exact: bool = False

    @property
    def h(self) -> list[float]:
        return [self.T / n for n in self.levels]

    @property
    def diverged_fraction(self) -> float:
        return max(self.diverged) / self.repetitions if self.diverged else 0.0

    @property
    def failed(self) -> bool:
        return self.diverged_fraction > MAX_DIVERGED_FRACTION

    def to_csv(self) -> str:
        lines = ["n,h,rmse,diverged_count"]
        for n, h, e, dv in zip(self.levels, self.h, self.rmse, self.diverged):
            lines.append(f"{n},{h!r},{e!r},{dv}")
        lines.append(f"# slope={self.slope_label()}")
        return "\n".join(lines) + "\n"

    def slope_label(self) -> str:
        if self.exact:
            return "exact"
        return "nan" if self.slope is None else repr(self.slope)


def _lcm(values) -> int:
    return reduce(lambda a, b: a * b // math.gcd(a, b), values, 1)


def _one_repetition(model, base: SimConfig, levels, n_ref, rep):
    seed = base.seed + rep
    lattice = noise.generate(seed, base.N, model.m, n_ref, base.T)
    X0 = base.initial.sample(seed, base.N, model.d)
    stride = n_ref // _lcm(levels)
    ref_cfg = replace(base, n=n_ref, n_fine=n_ref, stride=stride, seed=seed, lambda2=True)
    ref = simulate(ref_cfg, model, lattice, X0)
    if ref.diverged:
        return None
    out = []
    ref_states = ref.states  # at every multiple of `stride` fine steps
    for n in levels:
        cfg = replace(base, n=n, n_fine=n_ref, stride=1, seed=seed)
        run = simulate(cfg, model, lattice, X0)
        if run.diverged:
            out.append(None)
            continue
        r = n_ref // n // stride
        per_time = [
            np.mean(np.sum((s.X - ref_states[s.k * r].X) ** 2, axis=1)) for s in run.states[1:]
        ]
        out.append((per_time[-1], np.array(per_time), float(np.mean(np.sum(ref.final.X**2, axis=1)))))
    return out


def strong_error(
    model: CoefficientModel,
    base: SimConfig,
    levels,
    n_ref: int,
    repetitions: int,
    workers: int = 1,
) -> ConvergenceReport:
    """Estimate strong errors at each level against a level-``n_ref`` reference.

    Each repetition draws one lattice at resolution ``n_ref`` with seed
    ``base.seed + rep`` and runs the reference and every coarse level on it
    with the same initial positions.  The reference always includes the
    measure-derivative correction, whatever ``base.lambda2`` says.
    """
    levels = [int(n) for n in levels]
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")
    if any(n_ref % n for n in levels):
        raise ValueError(f"every level must divide n_ref={n_ref}")
    if n_ref < 16 * max(levels):
        raise ValueError("n_ref must be at least 16 times the finest level")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")

    def job(rep):
        return _one_repetition(model, base, levels, n_ref, rep)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(repetitions)))
    else:
        results = [job(rep) for rep in range(repetitions)]

    L = len(levels)
    sq = np.zeros(L)
    sq_t = [None] * L
    count = np.zeros(L, dtype=int)
    diverged = [0] * L
    scale = 0.0
    for res in results:
        if res is None:
            diverged = [dv + 1 for dv in diverged]
            continue
        for a, item in enumerate(res):
            if item is None:
                diverged[a] += 1
                continue
            term, per_time, ref_sq = item
            sq[a] += term
            sq_t[a] = per_time if sq_t[a] is None else sq_t[a] + per_time
            count[a] += 1
            scale = max(scale, ref_sq)

    floor = ROUNDOFF_FLOOR * max(1.0, math.sqrt(scale))
    rmse, rmse_sup = [], []
    for a in range(L):
        if count[a] == 0:
            rmse.append(math.nan)
            rmse_sup.append(math.nan)
            continue
        e = math.sqrt(sq[a] / count[a])
        es = float(np.sqrt(np.max(sq_t[a] / count[a])))
        rmse.append(0.0 if e <= floor else e)
        rmse_sup.append(0.0 if es <= floor else es)

    report = ConvergenceReport(
        levels=levels, rmse=rmse, rmse_sup=rmse_sup, diverged=diverged,
        repetitions=repetitions, n_ref=n_ref, T=base.T,
    )
    for attr, values in (("slope", rmse), ("slope_sup", rmse_sup)):
        try:
            setattr(report, attr, fit_rate(levels, values, base.T))
        except ExactScheme:
            report.exact = True
        except ValueError:
            log.warning("could not fit %s: %s", attr, values)
    return report


# ---------------------------------------------------------------------------
# derivative validation


@dataclass
class DerivativeCheck:
    coefficient: str  # dx_b, dmu_b, dx_sigma or dmu_sigma
    k: int
    l: int | None
    j: int | None
    p: int
    finite_difference: float
    analytic: float
    error: float

    def label(self) -> str:
        idx = f"k={self.k + 1}"
        if self.l is not None:
            idx += f", l={self.l + 1}"
        if self.j is not None:
            idx += f", j={self.j + 1}"
        return f"{self.coefficient}({idx}, p={self.p + 1})"


@dataclass
class DerivativeReport:
    rtol: float
    eps: float
    checks: list[DerivativeCheck] = field(default_factory=list)

    @property
    def failures(self) -> list[DerivativeCheck]:
        return [c for c in self.checks if not c.error <= self.rtol]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max((c.error for c in self.checks), default=0.0)


def _error(fd: float, exact: float) -> float:
    diff = abs(fd - exact)
    return diff / abs(exact) if abs(exact) >= 1e-8 else diff


def check_function(f, grad_x, grad_mu, x, atoms, j: int, eps: float = 1e-5):
    """Central differences for a scalar f(x, mu) at an empirical measure.

    ``grad_x(x, mu)`` is the space gradient and ``grad_mu(x, mu, y)`` the
    measure derivative.  Moving atom j by t changes f at rate
    (1/N) grad_mu(x, mu, x_j), so that is what the atom difference
    quotient is compared with.  Returns ``(fd_x, an_x, fd_atom, an_atom)``.
    """
    if not 1e-8 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-8, 1e-3], got {eps}")
    x = np.asarray(x, dtype=float)
    atoms = np.asarray(atoms, dtype=float)
    N, d = atoms.shape
    mu = EmpiricalMeasure(atoms)
    fd_x = np.empty(d)
    fd_atom = np.empty(d)
    for p in range(d):
        e = np.zeros(d)
        e[p] = eps
        fd_x[p] = (f(x + e, mu) - f(x - e, mu)) / (2 * eps)
        up, down = atoms.copy(), atoms.copy()
        up[j, p] += eps
        down[j, p] -= eps
        fd_atom[p] = (f(x, EmpiricalMeasure(up)) - f(x, EmpiricalMeasure(down))) / (2 * eps)
    an_x = np.asarray(grad_x(x, mu), dtype=float)
    an_atom = np.asarray(grad_mu(x, mu, atoms[j]), dtype=float) / N
    return fd_x, an_x, fd_atom, an_atom


def validate_derivatives(
    model: CoefficientModel,
    x,
    mu: EmpiricalMeasure,
    j: int,
    eps: float = 1e-5,
    rtol: float = 1e-4,
) -> DerivativeReport:
    """Compare the model's four derivative evaluations with finite differences."""
    x = np.asarray(x, dtype=float).reshape(model.d)
    report = DerivativeReport(rtol=rtol, eps=eps)

    def add(name, k, l, fd_x, an_x, fd_a, an_a):
        dx_name, dmu_name = name
        for p in range(model.d):
            report.checks.append(DerivativeCheck(dx_name, k, l, None, p, fd_x[p], an_x[p], _error(fd_x[p], an_x[p])))
            report.checks.append(DerivativeCheck(dmu_name, k, l, j, p, fd_a[p], an_a[p], _error(fd_a[p], an_a[p])))

    for k in range(model.d):
        res = check_function(
            lambda z, m_, k=k: model.b(z[None, :], m_)[0, k],
            lambda z, m_, k=k: model.dx_b(z[None, :], m_)[0, k],
            lambda z, m_, y, k=k: model.dmu_b(z[None, :], m_, y[None, :])[0, 0, k],
            x, mu.atoms, j, eps,
        )
        add(("dx_b", "dmu_b"), k, None, *res)
        for l in range(model.m):
            res = check_function(
                lambda z, m_, k=k, l=l: model.sigma(z[None, :], m_)[0, k, l],
                lambda z, m_, k=k, l=l: model.dx_sigma(z[None, :], m_)[0, k, l],
                lambda z, m_, y, k=k, l=l: model.dmu_sigma(z[None, :], m_, y[None, :])[0, 0, k, l],
                x, mu.atoms, j, eps,
            )
            add(("dx_sigma", "dmu_sigma"), k, l, *res)
    return report


# ---------------------------------------------------------------------------
# moments


@dataclass
class MomentSeries:
    t: np.ndarray
    values: np.ndarray
    p: float

    @property
    def max(self) -> float:
        return float(np.max(self.values))

    @property
    def diverged(self) -> bool:
        return not np.all(np.isfinite(self.values))


def moment_track(trajectory: Trajectory, p: float) -> MomentSeries:
    """(1/N) sum_i |X^i|^p at each stored snapshot.

    A diverged trajectory gets a trailing ``inf`` at the divergence time.
    """
    if p < 2:
        raise ValueError(f"moment order must be >= 2, got {p}")
    t = [s.t for s in trajectory.states]
    with np.errstate(over="ignore"):
        v = [moment(EmpiricalMeasure(s.X), p) for s in trajectory.states]
    if trajectory.divergence is not None:
        t.append(trajectory.divergence.t)
        v.append(math.inf)
    return MomentSeries(np.array(t), np.array(v), p)


# ---------------------------------------------------------------------------
# propagation of chaos (qualitative)


def w2_quantile_1d(x, y) -> float:
    """Exact W2 between uniform empirical laws on R with any atom counts.

    Integrates the squared difference of the two piecewise-constant
    quantile functions over the merged breakpoints.
    """
    x = np.sort(np.asarray(x, dtype=float).ravel())
    y = np.sort(np.asarray(y, dtype=float).ravel())
    if x.size == y.size:
        return w2_distance_1d(EmpiricalMeasure(x), EmpiricalMeasure(y))
    nx, ny = x.size, y.size
    # breakpoints k / (nx * ny) on a common integer grid
    cuts = np.union1d(np.arange(nx + 1) * ny, np.arange(ny + 1) * nx)
    left = cuts[:-1]
    width = np.diff(cuts) / (nx * ny)
    qx = x[left // ny]
    qy = y[left // nx]
    return float(np.sqrt(np.sum(width * (qx - qy) ** 2)))


@dataclass
class ChaosReport:
    """Differences of terminal statistics between consecutive particle counts.

    Each difference is a root mean square over repetitions.
    """

    sizes: list[int]
    mean_diff: list[float]
    moment2_diff: list[float]
    w2: list[float]
    repetitions: int

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.sizes, self.sizes[1:]))

    def decreasing(self) -> dict[str, bool]:
        def strict(v):
            return all(b < a for a, b in zip(v, v[1:]))

        return {"mean": strict(self.mean_diff), "moment2": strict(self.moment2_diff), "w2": strict(self.w2)}

    def to_csv(self) -> str:
        lines = ["N_small,N_large,mean_diff,moment2_diff,w2"]
        for (a, b), dm, d2, w in zip(self.pairs, self.mean_diff, self.moment2_diff, self.w2):
            lines.append(f"{a},{b},{dm!r},{d2!r},{w!r}")
        return "\n".join(lines) + "\n"


def chaos_study(
    model: CoefficientModel,
    base: SimConfig,
    sizes,
    repetitions: int = 1,
) -> ChaosReport:
    """Run nested particle systems and compare terminal laws at N and the next N.

    For every repetition one lattice and one set of initial draws is made
    for the largest N; smaller systems use their prefixes.  This is a trend
    diagnostic, not a rate estimate.
    """
    sizes = [int(s) for s in sizes]
    if any(b < a for a, b in zip(sizes, sizes[1:])) or len(sizes) < 2:
        raise ValueError("sizes must be a non-decreasing list of at least two particle counts")
    if model.d != 1:
        raise ValueError("chaos_study compares one-dimensional terminal laws")
    Nmax = sizes[-1]
    acc = np.zeros((3, len(sizes) - 1))
    for rep in range(repetitions):
        seed = base.seed + rep
        lattice = noise.generate(seed, Nmax, model.m, base.fine_level, base.T)
        X0 = base.initial.sample(seed, Nmax, model.d)
        finals = []
        for N in sizes:
            cfg = replace(base, N=N, seed=seed, stride=base.n)
            run = simulate(cfg, model, lattice, X0[:N])
            if run.diverged:
                raise ArithmeticError(f"chaos run diverged at N={N}: {run.divergence}")
            finals.append(run.final.X[:, 0])
        for a in range(len(sizes) - 1):
            u, v = finals[a], finals[a + 1]
            acc[0, a] += (u.mean() - v.mean()) ** 2
            acc[1, a] += (np.mean(u**2) - np.mean(v**2)) ** 2
            acc[2, a] += w2_quantile_1d(u, v) ** 2
    acc = np.sqrt(acc / repetitions)
    return ChaosReport(sizes, acc[0].tolist(), acc[1].tolist(), acc[2].tolist(), repetitions)

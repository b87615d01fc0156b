"""Explicit tamed Euler and tamed Milstein-type stepping for N interacting particles.

One step reads a single snapshot X_k (and its empirical measure) and writes
X_{k+1}.  Per particle i the Milstein update is

    X_{k+1} = X_k + b_n(X_k, mu_k) h + sigma(X_k, mu_k) dW^i
              + sum_l Lambda1[:, l] + sum_l Lambda2[:, l]

with

    Lambda1[k, l] = sum_l1 <d_x sigma^(k,l)(X^i), sigma^(l1)(X^i)> I^{i,i}_(l1,l)
    Lambda2[k, l] = 1/N sum_j sum_l1 <d_mu sigma^(k,l)(X^i, mu, X^j), sigma^(l1)(X^j)> I^{j,i}_(l1,l)

where I^{j,i}_(l1,l) is the iterated integral of dW^(l1),j then dW^(l),i
over the step.  Euler drops both corrections.

Particles are processed in fixed blocks of ``BLOCK`` rows.  The block
layout never depends on the worker count and every reduction inside a
block runs in numpy's own loops, so results are bitwise identical for any
number of workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import noise
from .measure import EmpiricalMeasure
from .model import CoefficientModel, taming_divisor

__all__ = [
    "BLOCK",
    "SCHEMES",
    "InitialLaw",
    "SimConfig",
    "SimState",
    "Trajectory",
    "DivergenceEvent",
    "DivergenceError",
    "lambda1",
    "lambda2",
    "milstein_step",
    "euler_step",
    "step",
    "simulate",
]

log = logging.getLogger(__name__)

BLOCK = 256
SCHEMES = ("euler", "milstein")


@dataclass(frozen=True)
class InitialLaw:
    """I.i.d. initial sampler; particle i always uses its own keyed stream."""

    kind: str = "constant"
    params: dict = field(default_factory=dict)

    def sample(self, seed: int, N: int, d: int) -> np.ndarray:
        p = self.params
        if self.kind == "constant":
            value = np.broadcast_to(np.asarray(p.get("value", 0.0), dtype=float), (d,))
            return np.tile(value, (N, 1))
        if self.kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown initial law {self.kind!r}")
        out = np.empty((N, d))
        for i in range(N):
            gen = noise.initial_stream(seed, i)
            if self.kind == "gaussian":
                out[i] = gen.normal(p.get("mean", 0.0), p.get("std", 1.0), size=d)
            else:
                out[i] = gen.uniform(p.get("low", 0.0), p.get("high", 1.0), size=d)
        return out


@dataclass(frozen=True)
class SimConfig:
    N: int
    n: int
    T: float = 1.0
    scheme: str = "milstein"
    seed: int = 0
    initial: InitialLaw = field(default_factory=InitialLaw)
    n_fine: int | None = None  # default 64 * n
    stride: int = 1
    taming: bool = True
    lambda2: bool = True  # diagnostic switch for the measure-derivative term
    workers: int = 1

    def __post_init__(self):
        if self.N < 1 or self.n < 1:
            raise ValueError(f"N and n must be >= 1, got N={self.N}, n={self.n}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.n_fine is not None and (self.n_fine < self.n or self.n_fine % self.n):
            raise ValueError(f"n={self.n} must divide n_fine={self.n_fine}")
        if self.stride < 1 or self.workers < 1:
            raise ValueError("stride and workers must be >= 1")

    @property
    def h(self) -> float:
        return self.T / self.n

    @property
    def fine_level(self) -> int:
        return self.n_fine if self.n_fine is not None else 64 * self.n


@dataclass(frozen=True)
class SimState:
    t: float
    k: int
    X: np.ndarray  # (N, d)


@dataclass(frozen=True)
class DivergenceEvent:
    step: int
    particle: int
    t: float

    def as_dict(self) -> dict:
        return {"event": "divergence", "step": self.step, "particle": self.particle, "t": self.t}


class DivergenceError(ArithmeticError):
    def __init__(self, event: DivergenceEvent):
        super().__init__(
            f"non-finite state at step {event.step} (t={event.t:g}) for particle {event.particle}"
        )
        self.event = event


@dataclass
class Trajectory:
    states: list[SimState]
    divergence: DivergenceEvent | None = None

    @property
    def final(self) -> SimState:
        return self.states[-1]

    @property
    def diverged(self) -> bool:
        return self.divergence is not None


def _blocks(N: int) -> list[slice]:
    return [slice(s, min(s + BLOCK, N)) for s in range(0, N, BLOCK)]


def _map_blocks(fn, N: int, workers: int) -> list:
    blocks = _blocks(N)
    if workers <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))


class _Snapshot:
    """Coefficient evaluations at one step start, shared read-only by all blocks."""

    def __init__(self, model: CoefficientModel, X: np.ndarray):
        self.model = model
        self.X = X
        self.mu = EmpiricalMeasure(X)
        self.sig = model.sigma(X, self.mu)

    def lambda1_all(self, lattice, n, k) -> np.ndarray:
        dxs = self.model.dx_sigma(self.X, self.mu)
        coef = np.einsum("iklp,ipa->ikla", dxs, self.sig)
        idiag = lattice.diagonal_iterated(n, k)
        return np.einsum("ikla,ial->ikl", coef, idiag)

    def lambda2_rows(self, lattice, n, k, rows: slice) -> np.ndarray:
        X, N = self.X, self.X.shape[0]
        if lattice.ratio(n) == 1:
            # single fine step: only same-particle, same-component terms survive
            xb = X[rows]
            dms = self.model.dmu_sigma(xb, self.mu, xb)
            nb = xb.shape[0]
            dms = dms[np.arange(nb), np.arange(nb)]
            coef = np.einsum("iklp,ipa->ikla", dms, self.sig[rows])
            idiag = lattice.diagonal_iterated(n, k)[rows]
            return np.einsum("ikla,ial->ikl", coef, idiag) / N
        dms = self.model.dmu_sigma(X[rows], self.mu, X)
        coef = np.einsum("ijklp,jpa->ijkla", dms, self.sig)
        cross = lattice.cross_iterated(n, k, rows)
        return np.einsum("ijkla,ijal->ikl", coef, cross) / N


def _check_level(lattice: noise.BrownianLattice, n: int, k: int, N: int) -> None:
    if lattice.N < N:
        raise ValueError(f"lattice has {lattice.N} particles, state has {N}")
    lattice.ratio(n)
    if not 0 <= k < n:
        raise IndexError(f"step {k} outside 0..{n - 1}")


def _lattice_for(lattice: noise.BrownianLattice, N: int) -> noise.BrownianLattice:
    if lattice.N == N:
        return lattice
    return noise.BrownianLattice(
        seed=lattice.seed, N=N, m=lattice.m, n_fine=lattice.n_fine, T=lattice.T,
        increments=lattice.increments[:N],
    )


def lambda1(model: CoefficientModel, state: SimState, lattice, n: int, k: int, i: int | None = None):
    """Space-derivative correction; (N, d, m), or (d, m) for one particle ``i``."""
    X = np.asarray(state.X, dtype=float)
    _check_level(lattice, n, k, X.shape[0])
    out = _Snapshot(model, X).lambda1_all(_lattice_for(lattice, X.shape[0]), n, k)
    return out if i is None else out[i]


def lambda2(model: CoefficientModel, state: SimState, lattice, n: int, k: int, i: int | None = None):
    """Measure-derivative correction; (N, d, m), or (d, m) for one particle ``i``."""
    X = np.asarray(state.X, dtype=float)
    N = X.shape[0]
    _check_level(lattice, n, k, N)
    lat = _lattice_for(lattice, N)
    snap = _Snapshot(model, X)
    if i is not None:
        return snap.lambda2_rows(lat, n, k, slice(i, i + 1))[0]
    return np.concatenate([snap.lambda2_rows(lat, n, k, b) for b in _blocks(N)])


def step(
    model: CoefficientModel,
    state: SimState,
    lattice: noise.BrownianLattice,
    n: int,
    k: int,
    scheme: str = "milstein",
    taming: bool = True,
    use_lambda2: bool = True,
    workers: int = 1,
) -> SimState:
    """Advance ``state`` over coarse step ``k`` of level ``n``.

    Raises :class:`DivergenceError` if any particle becomes non-finite.
    """
    X = np.asarray(state.X, dtype=float)
    N = X.shape[0]
    _check_level(lattice, n, k, N)
    lat = _lattice_for(lattice, N)
    h = lat.T / n
    snap = _Snapshot(model, X)
    dW = lat.coarse_increments(n, k)
    milstein = scheme == "milstein"
    with_l2 = milstein and use_lambda2 and model.measure_dependent_diffusion

    with np.errstate(over="ignore", invalid="ignore"):
        drift = model.b(X, snap.mu)
        if taming:
            drift = drift / taming_divisor(model, n, X)[:, None]
        lam1 = snap.lambda1_all(lat, n, k).sum(axis=2) if milstein else None

        def rows_update(rows: slice) -> np.ndarray:
            inc = drift[rows] * h + np.einsum("ikl,il->ik", snap.sig[rows], dW[rows])
            if milstein:
                inc = inc + lam1[rows]
            if with_l2:
                inc = inc + snap.lambda2_rows(lat, n, k, rows).sum(axis=2)
            return X[rows] + inc

        X_new = np.concatenate(_map_blocks(rows_update, N, workers))

    bad = ~np.all(np.isfinite(X_new), axis=1)
    if bad.any():
        event = DivergenceEvent(step=k, particle=int(np.argmax(bad)), t=(k + 1) * h)
        raise DivergenceError(event)
    return SimState(t=(k + 1) * h, k=k + 1, X=X_new)


def milstein_step(model, state, lattice, n, k, taming=True, use_lambda2=True, workers=1) -> SimState:
    return step(model, state, lattice, n, k, "milstein", taming, use_lambda2, workers)


def euler_step(model, state, lattice, n, k, taming=True, workers=1) -> SimState:
    return step(model, state, lattice, n, k, "euler", taming, False, workers)


def simulate(
    config: SimConfig,
    model: CoefficientModel,
    lattice: noise.BrownianLattice | None = None,
    X0: np.ndarray | None = None,
    keep_all: bool = False,
) -> Trajectory:
    """Run the particle system to time T.

    Snapshots are kept every ``config.stride`` steps plus the final one
    (every step with ``keep_all``).  A divergence stops the run and is
    recorded on the returned trajectory rather than raised.
    """
    if lattice is None:
        lattice = noise.generate(config.seed, config.N, model.m, config.fine_level, config.T)
    if lattice.m != model.m:
        raise ValueError(f"lattice has m={lattice.m}, model needs m={model.m}")
    if abs(lattice.T - config.T) > 1e-12 * config.T:
        raise ValueError(f"lattice horizon {lattice.T} != config horizon {config.T}")
    if X0 is None:
        X0 = config.initial.sample(config.seed, config.N, model.d)
    X0 = np.asarray(X0, dtype=float).reshape(config.N, model.d)

    state = SimState(t=0.0, k=0, X=X0)
    states = [state]
    stride = 1 if keep_all else config.stride
    for k in range(config.n):
        try:
            state = step(
                model, state, lattice, config.n, k,
                scheme=config.scheme, taming=config.taming,
                use_lambda2=config.lambda2, workers=config.workers,
            )
        except DivergenceError as err:
            log.warning("%s", err)
            return Trajectory(states, err.event)
        if state.k % stride == 0 or state.k == config.n:
            states.append(state)
    return Trajectory(states)

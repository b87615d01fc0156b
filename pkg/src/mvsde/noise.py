"""Brownian driving noise on a fine lattice, shared by every coarser level.

Each (particle, component) pair owns an independent Philox stream keyed by
``(seed, i, l)``, so the fine increment ``(i, l, k)`` is a pure function of
``(seed, i, l, k)``.  In particular the first N rows of a lattice built for
N' > N particles equal the lattice built for N particles.

Coarse increments are sums of fine increments, and iterated integrals over
a coarse step are either the exact Ito expression (same particle, same
component) or the left-point Riemann sum over the fine points inside the
step.  Running several levels on one lattice therefore couples them
pathwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["BrownianLattice", "generate", "initial_stream"]

_MASK64 = (1 << 64) - 1


def _stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed & _MASK64, spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def initial_stream(seed: int, i: int) -> np.random.Generator:
    """Generator for particle ``i``'s initial draw; disjoint from noise streams."""
    return _stream(seed, 1, i)


@dataclass(frozen=True)
class BrownianLattice:
    seed: int
    N: int
    m: int
    n_fine: int
    T: float
    increments: np.ndarray  # (N, m, n_fine), each entry ~ N(0, T / n_fine)

    @property
    def h_fine(self) -> float:
        return self.T / self.n_fine

    def ratio(self, n: int) -> int:
        """Number of fine steps per coarse step at level ``n``."""
        if n < 1 or self.n_fine % n:
            raise ValueError(f"level n={n} does not divide n_fine={self.n_fine}")
        return self.n_fine // n

    def _check_step(self, n: int, k: int) -> int:
        r = self.ratio(n)
        if not 0 <= k < n:
            raise IndexError(f"step {k} outside 0..{n - 1}")
        return r

    def fine_block(self, n: int, k: int) -> np.ndarray:
        """Fine increments inside coarse step ``k`` at level ``n``, shape (N, m, r)."""
        r = self._check_step(n, k)
        return self.increments[:, :, k * r : (k + 1) * r]

    def coarse_increments(self, n: int, k: int) -> np.ndarray:
        """Delta W over coarse step ``k`` for all particles, shape (N, m)."""
        return self.fine_block(n, k).sum(axis=2)

    def coarse_increment(self, n: int, i: int, l: int, k: int) -> float:
        return float(self.coarse_increments(n, k)[i, l])

    def iterated_integral(self, n: int, i: int, j: int, l1: int, l: int, k: int) -> float:
        """int int dW^(l1),j dW^(l),i over coarse step ``k`` at level ``n``.

        Exact (dW^2 - h) / 2 when i == j and l1 == l; otherwise the
        left-point sum over the fine grid inside the step.
        """
        block = self.fine_block(n, k)
        if i == j and l1 == l:
            dw = block[i, l].sum()
            return float(0.5 * (dw * dw - self.T / n))
        outer = _left_partial_sums(block[j, l1])
        return float(np.dot(outer, block[i, l]))

    def diagonal_iterated(self, n: int, k: int) -> np.ndarray:
        """Same-particle integrals I^{i,i}_{(l1,l)}, shape (N, m[l1], m[l])."""
        block = self.fine_block(n, k)
        h = self.T / n
        dw = block.sum(axis=2)
        if self.m == 1 or block.shape[2] == 1:
            out = np.zeros((self.N, self.m, self.m))
        else:
            partial = _left_partial_sums(block)
            out = np.einsum("ias,ibs->iab", partial, block)
        idx = np.arange(self.m)
        out[:, idx, idx] = 0.5 * (dw * dw - h)
        return out

    def cross_iterated(self, n: int, k: int, rows: slice | np.ndarray) -> np.ndarray:
        """I^{j,i}_{(l1,l)} for particles ``i`` in ``rows`` and every ``j``.

        Returned with axes ordered (i, j, l1, l).
        """
        block = self.fine_block(n, k)
        r = block.shape[2]
        row_ids = np.arange(self.N)[rows]
        nb, m = len(row_ids), self.m
        if r == 1:
            out = np.zeros((nb, self.N, m, m))
        else:
            # plain einsum (no BLAS) keeps the summation order fixed
            partial = _left_partial_sums(block)
            out = np.einsum("jas,ibs->ijab", partial, block[row_ids])
        dw = block[row_ids].sum(axis=2)
        idx = np.arange(m)
        out[np.arange(nb)[:, None], row_ids[:, None], idx[None, :], idx[None, :]] = 0.5 * (
            dw * dw - self.T / n
        )
        return out


def _left_partial_sums(inc: np.ndarray) -> np.ndarray:
    """W at the left end of each fine step minus W at the coarse step start."""
    out = np.zeros_like(inc)
    np.cumsum(inc[..., :-1], axis=-1, out=out[..., 1:])
    return out


def generate(seed: int, N: int, m: int, n_fine: int, T: float) -> BrownianLattice:
    """Draw the fine Brownian lattice for ``N`` particles and ``m`` components."""
    if N < 1 or m < 1 or n_fine < 1:
        raise ValueError(f"N, m and n_fine must be positive, got N={N}, m={m}, n_fine={n_fine}")
    if not T > 0:
        raise ValueError(f"horizon T must be positive, got {T}")
    scale = np.sqrt(T / n_fine)
    inc = np.empty((N, m, n_fine))
    for i in range(N):
        for l in range(m):
            inc[i, l] = _stream(seed, 0, i, l).standard_normal(n_fine)
    inc *= scale
    inc.setflags(write=False)
    return BrownianLattice(seed=int(seed), N=N, m=m, n_fine=n_fine, T=float(T), increments=inc)

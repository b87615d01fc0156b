"""Uniform empirical measures on R^d and the distances used around them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EmpiricalMeasure",
    "mean",
    "moment",
    "w2_distance_1d",
    "w2_coupling_bound",
]


@dataclass(frozen=True)
class EmpiricalMeasure:
    """The measure (1/N) sum_j delta_{x_j}.

    ``atoms`` has shape (N, d). Row order is particle identity: atom j is
    particle j, which is what makes the identity coupling meaningful.
    """

    atoms: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] < 1 or atoms.shape[1] < 1:
            raise ValueError(f"atoms must be an (N, d) array with N, d >= 1, got shape {atoms.shape}")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        atoms = atoms.copy()
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @property
    def N(self) -> int:
        return self.atoms.shape[0]

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    def __len__(self) -> int:
        return self.N


def mean(mu: EmpiricalMeasure) -> np.ndarray:
    return mu.atoms.mean(axis=0)


def moment(mu: EmpiricalMeasure, p: float) -> float:
    """(1/N) sum_j |x_j|^p with the Euclidean norm."""
    if p < 1:
        raise ValueError(f"moment order must be >= 1, got {p}")
    norms = np.linalg.norm(mu.atoms, axis=1)
    return float(np.mean(norms**p))


def _check_same_shape(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.atoms.shape != nu.atoms.shape:
        raise ValueError(
            f"measures must have equal atom count and dimension, got {mu.atoms.shape} and {nu.atoms.shape}"
        )


def w2_distance_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W2 between two one-dimensional uniform measures with equal N.

    In one dimension the monotone (sorted) pairing is an optimal coupling.
    """
    _check_same_shape(mu, nu)
    if mu.d != 1:
        raise ValueError(f"w2_distance_1d needs d == 1, got d = {mu.d}")
    x = np.sort(mu.atoms[:, 0])
    y = np.sort(nu.atoms[:, 0])
    return float(np.sqrt(np.mean((x - y) ** 2)))


def w2_coupling_bound(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Upper bound on W2 from the identity coupling x_j <-> y_j."""
    _check_same_shape(mu, nu)
    diff = mu.atoms - nu.atoms
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))

"""Effective conductance matrix of a periodic environment via cell correctors.

In lattice units (unit spacing, bond conductances ``a_k(x)``) the corrector
``chi_i`` minimizes ``sum_x sum_k a_k(x) (delta_ik + chi_i(x+e_k) - chi_i(x))^2``
over periodic functions, i.e. it solves

    L chi_i(x) = -(a_i(x) - a_i(x - e_i)),

and ``A_ij = mean_x sum_k a_k(x) (delta_ik + D_k chi_i(x)) (delta_jk + D_k chi_j(x))``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .environment import Environment
from .errors import ConfigurationError, UsageError
from .resolvent import conjugate_gradient


@dataclass(frozen=True)
class HomogenizedMatrix:
    A: np.ndarray
    epsilon0: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise UsageError("homogenized matrix must be square")
        if not np.all(np.isfinite(A)):
            raise UsageError("homogenized matrix has non-finite entries")
        A = 0.5 * (A + A.T)
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    def ellipticity_holds(self, n_random: int = 64, seed: int = 0) -> bool:
        """``eps |xi|^2 <= xi.A xi <= |xi|^2 / eps`` on canonical and random directions."""
        rng = np.random.default_rng(seed)
        xi = np.vstack([np.eye(self.d), rng.standard_normal((n_random, self.d))])
        q = np.einsum("pi,ij,pj->p", xi, self.A, xi)
        n2 = np.sum(xi * xi, axis=1)
        eps = self.epsilon0
        return bool(np.all(q >= eps * n2 * (1 - 1e-12)) and np.all(q <= n2 / eps * (1 + 1e-12)))

    def lambda_max(self) -> float:
        return float(np.linalg.eigvalsh(self.A).max())

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "epsilon0": self.epsilon0, **self.provenance}

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "HomogenizedMatrix":
        prov = {k: v for k, v in data.items() if k not in ("A", "epsilon0")}
        return cls(np.array(data["A"], dtype=float), float(data["epsilon0"]), prov)

    @classmethod
    def isotropic(cls, c: float, d: int, epsilon0: float | None = None) -> "HomogenizedMatrix":
        eps = epsilon0 if epsilon0 is not None else min(c, 1.0 / c)
        return cls(c * np.eye(d), eps, {"method": "given"})


def _unit_laplacian(a: np.ndarray, nbr: np.ndarray, v: np.ndarray) -> np.ndarray:
    d = a.shape[1]
    out = np.zeros_like(v)
    for k in range(d):
        fwd, back = nbr[:, 2 * k], nbr[:, 2 * k + 1]
        out += a[:, k] * (v[fwd] - v) + a[back, k] * (v[back] - v)
    return out


def effective_matrix(env: Environment, tol: float = 1e-11, max_iter: int | None = None) -> HomogenizedMatrix:
    grid = env.grid
    a = env.conductances
    nbr = grid.neighbor_table
    n, d = grid.n_sites, grid.d
    scale = 1.0 / np.sqrt(n)

    def matvec(v):
        return -_unit_laplacian(a, nbr, v)

    cap = max_iter if max_iter is not None else 40 * n + 1000
    grads = []
    iters = []
    for i in range(d):
        b = a[:, i] - a[nbr[:, 2 * i + 1], i]
        if np.max(np.abs(b)) == 0.0:
            chi = np.zeros(n)
            iters.append(0)
        else:
            chi, _, it = conjugate_gradient(matvec, b, tol, scale, cap)
            chi -= chi.mean()
            iters.append(it)
        grad = np.stack([chi[nbr[:, 2 * k]] - chi for k in range(d)], axis=1)
        grad[:, i] += 1.0
        grads.append(grad)
    A = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            A[i, j] = float(np.mean(np.sum(a * grads[i] * grads[j], axis=1)))
    prov = {"method": "periodic-corrector", "N": grid.N, "seeds": [int(env.seed)], "iterations": iters}
    return HomogenizedMatrix(A, env.epsilon0, prov)


def averaged_effective_matrix(envs, tol: float = 1e-11) -> HomogenizedMatrix:
    """Mean of the corrector matrices of several realizations on one grid."""
    mats = [effective_matrix(e, tol) for e in envs]
    if not mats:
        raise ConfigurationError("need at least one environment")
    A = np.mean([m.A for m in mats], axis=0)
    prov = {"method": "periodic-corrector", "N": envs[0].grid.N, "seeds": [int(e.seed) for e in envs]}
    return HomogenizedMatrix(A, min(m.epsilon0 for m in mats), prov)


def harmonic_mean_oracle_1d(env: Environment) -> float:
    """Effective conductance of the ring: the harmonic mean of the bond conductances."""
    if env.grid.d != 1:
        raise UsageError("the harmonic-mean oracle only applies in dimension 1")
    a = env.conductances[:, 0]
    return float(1.0 / np.mean(1.0 / a))

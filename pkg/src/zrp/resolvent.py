"""The random walk operator ``L_N`` and resolvent solves ``(lam - L_N) u = rhs``.

``L_N u(x) = sum_y p_N(x, y) [u(y) - u(x)]`` is a symmetric weighted graph
Laplacian, so ``lam - L_N`` is symmetric positive definite for ``lam > 0``
and the solve is done by conjugate gradients. Residuals are measured in the
``||.||_{0,N}`` norm.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .environment import Environment
from .errors import ConvergenceError, UsageError
from .functions import FourierFunction
from .lattice import GridFunction, discrete_norms, sup_norm


def _laplacian(rates: np.ndarray, nbr: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("xj,xj->x", rates, v[nbr] - v[:, None])


def apply_LN(env: Environment, u: GridFunction) -> GridFunction:
    if u.grid != env.grid:
        raise UsageError("grid function and environment live on different grids")
    return GridFunction(env.grid, _laplacian(env.rate_table, env.grid.neighbor_table, u.values))


def dirichlet_sum(env: Environment, u: GridFunction) -> float:
    """``N^-d sum_{x,y} p_N(x,y) [u(y) - u(x)]^2`` over ordered neighbor pairs."""
    v = u.values
    diffs = v[env.grid.neighbor_table] - v[:, None]
    return float(np.sum(env.rate_table * diffs * diffs)) / env.grid.N**env.grid.d


def conjugate_gradient(matvec, b: np.ndarray, tol: float, scale: float, max_iter: int,
                       diag: np.ndarray | None = None, x0: np.ndarray | None = None, max_restarts: int = 5):
    """Plain (optionally Jacobi preconditioned) CG stopping on ``||r|| * scale <= tol``.

    When the recursive residual meets the tolerance but the true one does
    not, CG restarts from the current iterate. Returns ``(x, residual,
    iterations)``; raises ConvergenceError at the iteration cap or when
    restarts stop making progress (tolerance below rounding level).
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    it = 0
    best = np.inf
    for _ in range(max_restarts + 1):
        r = b - matvec(x)
        res = float(np.linalg.norm(r)) * scale
        if res <= tol:
            return x, res, it
        if res > 0.5 * best:
            raise ConvergenceError(f"CG stagnated at residual {res:.3e} > {tol:.3e}", residual=res, iterations=it)
        best = res
        z = r / diag if diag is not None else r
        p = z.copy()
        rz = float(np.dot(r, z))
        while res > tol:
            if it >= max_iter:
                raise ConvergenceError(f"CG stopped after {it} iterations with residual {res:.3e} > {tol:.3e}",
                                       residual=res, iterations=it)
            Ap = matvec(p)
            pAp = float(np.dot(p, Ap))
            if not pAp > 0:
                raise ConvergenceError("operator is not positive definite on the search direction",
                                       residual=res, iterations=it)
            step = rz / pAp
            x += step * p
            r -= step * Ap
            z = r / diag if diag is not None else r
            rz_new = float(np.dot(r, z))
            p = z + (rz_new / rz) * p
            rz = rz_new
            it += 1
            res = float(np.linalg.norm(r)) * scale
    r = b - matvec(x)
    res = float(np.linalg.norm(r)) * scale
    if res > tol:
        raise ConvergenceError(f"CG restarts exhausted at residual {res:.3e} > {tol:.3e}", residual=res, iterations=it)
    return x, res, it


@dataclass(frozen=True)
class Certificate:
    l2_estimate: bool
    energy_estimate: bool
    sup_estimate: bool
    max_principle: bool
    norm0: float
    energy: float
    sup: float
    l2_bound: float
    energy_bound: float
    sup_bound: float

    @property
    def ok(self) -> bool:
        return self.l2_estimate and self.energy_estimate and self.sup_estimate and self.max_principle


@dataclass(frozen=True)
class ResolventSolution:
    u: GridFunction
    lam: float
    rhs: GridFunction
    residual_norm0: float
    iterations: int
    tol: float

    def certify(self, env: Environment, slack: float = 1e-9) -> Certificate:
        """Post-hoc a-priori estimates; ``slack`` absorbs the solver residual."""
        lam = self.lam
        res = self.residual_norm0 + slack
        rhs_norm0, _ = discrete_norms(self.rhs)
        norm0, _ = discrete_norms(self.u)
        energy = dirichlet_sum(env, self.u)
        sup = sup_norm(self.u)
        # u solves the perturbed problem with rhs + residual exactly
        res_sup = res * np.sqrt(float(self.u.grid.N) ** self.u.grid.d)
        lo = (float(self.rhs.values.min()) - res_sup) / lam
        hi = (float(self.rhs.values.max()) + res_sup) / lam
        return Certificate(
            l2_estimate=norm0 <= (rhs_norm0 + res) / lam,
            energy_estimate=energy <= (rhs_norm0 + res) ** 2 / lam,
            sup_estimate=sup <= (sup_norm(self.rhs) + res_sup) / lam,
            max_principle=bool(np.all(self.u.values >= lo) and np.all(self.u.values <= hi)),
            norm0=norm0, energy=energy, sup=sup, l2_bound=rhs_norm0 / lam,
            energy_bound=rhs_norm0**2 / lam, sup_bound=sup_norm(self.rhs) / lam,
        )

    def metadata(self) -> dict:
        g = self.u.grid
        return {"d": g.d, "N": g.N, "lambda": self.lam, "tol": self.tol,
                "iterations": self.iterations, "residual_norm0": self.residual_norm0}

    def write_metadata(self, path) -> None:
        Path(path).write_text(json.dumps(self.metadata(), sort_keys=True, indent=2) + "\n")


def solve_resolvent(env: Environment, lam: float, rhs: GridFunction, tol: float = 1e-10,
                    jacobi: bool = False, max_iter: int | None = None) -> ResolventSolution:
    if not lam > 0:
        raise UsageError(f"lambda must be positive, got {lam}")
    if not tol > 0:
        raise UsageError(f"tolerance must be positive, got {tol}")
    if rhs.grid != env.grid:
        raise UsageError("right-hand side and environment live on different grids")
    grid = env.grid
    rates, nbr = env.rate_table, grid.neighbor_table
    scale = 1.0 / np.sqrt(float(grid.N) ** grid.d)

    def matvec(v):
        return lam * v - _laplacian(rates, nbr, v)

    diag = lam + env.site_rate_sum if jacobi else None
    cap = max_iter if max_iter is not None else 20 * grid.n_sites + 1000
    u, res, it = conjugate_gradient(matvec, np.array(rhs.values, dtype=float), tol, scale, cap, diag)
    res = float(np.linalg.norm(matvec(u) - rhs.values)) * scale
    return ResolventSolution(GridFunction(grid, u), float(lam), rhs, res, it, float(tol))


def resolvent_rhs(G: FourierFunction, lam: float, grid, A) -> GridFunction:
    """``lam G - div(A grad G)`` at the sites, from analytic derivatives."""
    if not isinstance(G, FourierFunction):
        raise UsageError("test functions need analytic derivatives (FourierFunction)")
    pts = grid.coordinates()
    return GridFunction(grid, lam * G(pts) - G.div_A_grad(pts, _matrix(A, grid.d)))


def corrected_test_function(G: FourierFunction, lam: float, env: Environment, A,
                            tol: float = 1e-10) -> ResolventSolution:
    """The corrected test function solving ``(lam - L_N) u = lam G - div(A grad G)``."""
    return solve_resolvent(env, lam, resolvent_rhs(G, lam, env.grid, A), tol)


def _matrix(A, d: int) -> np.ndarray:
    M = getattr(A, "A", A)
    return np.asarray(M, dtype=float).reshape(d, d)

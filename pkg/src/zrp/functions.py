"""Smooth periodic test functions on U^d with analytic derivatives.

A :class:`FourierFunction` is a finite trigonometric sum

    c + sum_m [a_m cos(pi k_m . u) + b_m sin(pi k_m . u)],   k_m in Z^d,

which is periodic on ``[-1, 1]^d`` and carries exact gradients and Hessians.
These serve as test functions G, initial profiles and semigroup inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class FourierMode:
    k: tuple[int, ...]
    cos: float = 0.0
    sin: float = 0.0


def _points(u, d):
    u = np.asarray(u, dtype=float)
    if d == 1 and (u.ndim == 0 or u.shape[-1] != 1):
        u = u[..., None]
    if u.shape[-1] != d:
        raise UsageError(f"points must have trailing dimension {d}")
    return u


@dataclass(frozen=True)
class FourierFunction:
    d: int
    constant: float = 0.0
    modes: tuple[FourierMode, ...] = ()

    def __post_init__(self):
        modes = tuple(
            m if isinstance(m, FourierMode) else FourierMode(tuple(m[0]), float(m[1]), float(m[2]))
            for m in self.modes
        )
        for m in modes:
            if len(m.k) != self.d:
                raise UsageError(f"mode {m.k} does not match dimension {self.d}")
        object.__setattr__(self, "modes", modes)

    @classmethod
    def from_dict(cls, data: dict, d: int) -> "FourierFunction":
        modes = []
        for term in data.get("terms", []):
            k = term["k"]
            k = (int(k),) if np.isscalar(k) else tuple(int(v) for v in k)
            modes.append(FourierMode(k, float(term.get("cos", 0.0)), float(term.get("sin", 0.0))))
        return cls(d, float(data.get("const", 0.0)), tuple(modes))

    def to_dict(self) -> dict:
        return {
            "const": self.constant,
            "terms": [{"k": list(m.k), "cos": m.cos, "sin": m.sin} for m in self.modes],
        }

    def _phases(self, u):
        u = _points(u, self.d)
        if not self.modes:
            return u, np.zeros((0, self.d)), np.zeros(u.shape[:-1] + (0,))
        K = np.pi * np.array([m.k for m in self.modes], dtype=float)
        return u, K, u @ K.T

    def __call__(self, u) -> np.ndarray:
        u, K, ph = self._phases(u)
        a = np.array([m.cos for m in self.modes])
        b = np.array([m.sin for m in self.modes])
        out = np.full(u.shape[:-1], self.constant, dtype=float)
        if self.modes:
            out = out + np.cos(ph) @ a + np.sin(ph) @ b
        return out

    def gradient(self, u) -> np.ndarray:
        u, K, ph = self._phases(u)
        if not self.modes:
            return np.zeros(u.shape)
        a = np.array([m.cos for m in self.modes])
        b = np.array([m.sin for m in self.modes])
        coef = -np.sin(ph) * a + np.cos(ph) * b
        return coef @ K

    def hessian(self, u) -> np.ndarray:
        u, K, ph = self._phases(u)
        if not self.modes:
            return np.zeros(u.shape + (self.d,))
        a = np.array([m.cos for m in self.modes])
        b = np.array([m.sin for m in self.modes])
        coef = -(np.cos(ph) * a + np.sin(ph) * b)
        return np.einsum("...m,mi,mj->...ij", coef, K, K)

    def div_A_grad(self, u, A) -> np.ndarray:
        """``div(A grad G)`` for a constant matrix ``A``."""
        A = np.asarray(A, dtype=float).reshape(self.d, self.d)
        return np.einsum("...ij,ij->...", self.hessian(u), A)

    def dirichlet_energy(self, A) -> float:
        """Exact ``int_{U^d} grad G . A grad G du``."""
        A = np.asarray(A, dtype=float).reshape(self.d, self.d)
        # midpoint rule with n > 2 kmax points is exact for these products
        kmax = max((max(abs(v) for v in m.k) for m in self.modes), default=0)
        n = 4 * kmax + 4
        axes = [-1.0 + (np.arange(n) + 0.5) * 2.0 / n] * self.d
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        grad = self.gradient(pts)
        return float(np.mean(np.einsum("pi,ij,pj->p", grad, A, grad)) * 2.0**self.d)

    def inner(self, other: "FourierFunction") -> float:
        """Exact ``int_{U^d} G H du``."""
        kmax = max((max(abs(v) for v in m.k) for m in self.modes + other.modes), default=0)
        n = 4 * kmax + 4
        axes = [-1.0 + (np.arange(n) + 0.5) * 2.0 / n] * self.d
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        return float(np.mean(self(pts) * other(pts)) * 2.0**self.d)

    def scaled_modes(self, factors: Sequence[float]) -> "FourierFunction":
        modes = tuple(FourierMode(m.k, m.cos * f, m.sin * f) for m, f in zip(self.modes, factors))
        return FourierFunction(self.d, self.constant, modes)


def cosine(d: int = 1, k=1, amplitude: float = 1.0, constant: float = 0.0) -> FourierFunction:
    k = (k,) + (0,) * (d - 1) if np.isscalar(k) else tuple(k)
    return FourierFunction(d, constant, (FourierMode(k, cos=amplitude),))


def sine(d: int = 1, k=1, amplitude: float = 1.0, constant: float = 0.0) -> FourierFunction:
    k = (k,) + (0,) * (d - 1) if np.isscalar(k) else tuple(k)
    return FourierFunction(d, constant, (FourierMode(k, sin=amplitude),))

"""Equilibrium manifold, conjugate variables z = eta_v(u, v), equation of state."""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import CdfModel, ConfigurationError, EvaluationError, newton_solve

NEWTON_TOL = 1e-12


def _solve_v(model: CdfModel, u, target, guess, tol, max_iter):
    """Solve eta_v(u, v) = target for v, batched over leading axes of u."""
    u = np.asarray(u, dtype=float)
    lead = u.shape[:-1]
    uf = u.reshape(-1, model.n)
    tf = np.broadcast_to(np.asarray(target, dtype=float), lead + (model.r,)).reshape(-1, model.r)
    if guess is None:
        gf = np.zeros((len(uf), model.r))
    else:
        gf = np.broadcast_to(np.asarray(guess, dtype=float), lead + (model.r,)).reshape(-1, model.r).copy()
    n = model.n

    def residual(V):
        return model.eta_v(model.join(uf, V)) - tf

    def jacobian(V):
        return model.hess_entropy(model.join(uf, V))[..., n:, n:]

    v = newton_solve(residual, gf, tol=tol, max_iter=max_iter, jacobian=jacobian)
    return v.reshape(lead + (model.r,))


def solve_equilibrium(model: CdfModel, u, guess=None, tol: float = NEWTON_TOL,
                      max_iter: int = 50) -> np.ndarray:
    """Dissipative vector v_bar(u) with eta_v(u, v_bar) = 0."""
    return _solve_v(model, u, 0.0, guess, tol, max_iter)


class EquilibriumMap:
    """v_bar(u) with Newton warm starts cached by u rounded to 12 digits.

    Safe for concurrent use: the cache is guarded by a lock.
    """

    def __init__(self, model: CdfModel, tol: float = NEWTON_TOL, max_iter: int = 50):
        self.model = model
        self.tol = tol
        self.max_iter = max_iter
        self._cache: dict = {}
        self._lock = threading.Lock()

    @staticmethod
    def _key(row):
        return tuple(float(f"{x:.12g}") for x in row)

    def __call__(self, u, guess=None) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        lead = u.shape[:-1]
        uf = u.reshape(-1, self.model.n)
        cached = guess is None
        if cached:
            with self._lock:
                rows = [self._cache.get(self._key(row)) for row in uf]
            guess = np.array([g if g is not None else np.zeros(self.model.r) for g in rows])
        else:
            guess = np.broadcast_to(np.asarray(guess, dtype=float), lead + (self.model.r,)).reshape(-1, self.model.r)
        v = solve_equilibrium(self.model, uf, guess, self.tol, self.max_iter)
        # explicit warm starts come from solvers that track v_bar themselves
        if cached and len(uf) <= 4096:
            with self._lock:
                for row, val in zip(uf, v):
                    self._cache[self._key(row)] = val
        return v.reshape(lead + (self.model.r,))


@dataclass(frozen=True)
class ConjugatePair:
    u: np.ndarray
    z: np.ndarray


def to_conjugate(model: CdfModel, U) -> ConjugatePair:
    u, _ = model.split(U)
    return ConjugatePair(np.array(u), model.eta_v(U))


def from_conjugate(model: CdfModel, pair: ConjugatePair, guess=None,
                   tol: float = NEWTON_TOL, max_iter: int = 50) -> np.ndarray:
    """Invert z = eta_v(u, v) for v and return the full state (u, v)."""
    v = _solve_v(model, pair.u, pair.z, guess, tol, max_iter)
    return model.join(pair.u, v)


def equilibrium_state(model: CdfModel, u, emap: Optional[EquilibriumMap] = None, guess=None):
    v = emap(u, guess) if emap is not None else solve_equilibrium(model, u, guess)
    return model.join(u, v)


def equilibrium_flux(model: CdfModel, u, emap: Optional[EquilibriumMap] = None) -> np.ndarray:
    """f_j(u, v_bar(u)) stacked along axis -2 (one row per direction)."""
    U = equilibrium_state(model, u, emap)
    return np.stack([model.flux_f(U, j) for j in range(model.dims.n_space)], axis=-2)


def reduced_flux_jacobian(model: CdfModel, U, j: int = 0) -> np.ndarray:
    """d/du f_j(u, v(u, z)) at fixed z: f_u - f_v eta_vv^{-1} eta_vu."""
    n = model.n
    H = model.hess_entropy(U)
    J = model.jac_flux(U, j)
    f_u, f_v = J[..., :n, :n], J[..., :n, n:]
    return f_u - f_v @ np.linalg.solve(H[..., n:, n:], H[..., n:, :n])


def equation_of_state(model: CdfModel, nu, e) -> np.ndarray:
    """Pressure pi = s_nu / s_e at the equilibrium values of (w, C).

    Uses the entropy gradient of a fluid-family model at rest: with
    U = (rho, 0, rho e, ...) and eta_v = 0 one has s_e = eta_{rho E} and
    s_nu = (s - e s_e - eta_rho) / nu.
    """
    if model.params.get("family") != "fluid" or model.n != 3:
        raise ConfigurationError("equation_of_state needs a fluid-family model")
    nu, e = np.broadcast_arrays(np.asarray(nu, dtype=float), np.asarray(e, dtype=float))
    rho = 1.0 / nu
    u = np.stack([rho, np.zeros_like(rho), rho * e], axis=-1)
    U = equilibrium_state(model, u)
    grad = model.grad_entropy(U)
    s = model.entropy(U) / rho
    s_e = grad[..., 2]
    if np.any(~(s_e > 0)):
        raise EvaluationError("non-positive temperature: s_e <= 0", U)
    s_nu = (s - e * s_e - grad[..., 0]) / nu
    return s_nu / s_e

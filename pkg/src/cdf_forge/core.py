"""Model abstraction and the small numerical kernel everything else uses.

All model callables are expected to broadcast over leading axes: a state
array of shape ``(..., n + r)`` maps to an entropy of shape ``(...)``, a
flux of shape ``(..., n)`` and so on.  This lets the verifiers and the
1D solvers evaluate whole batches of states at once.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

EPS = np.finfo(float).eps
FD_STEP = EPS ** (1.0 / 3.0)
FD_STEP_2ND = EPS ** (1.0 / 4.0)


class CdfError(Exception):
    """Base class for errors raised by cdf_forge."""


class EvaluationError(CdfError, ValueError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = None if state is None else np.array(state, dtype=float)


class NonConvergenceError(CdfError, RuntimeError):
    def __init__(self, message, iterate=None, residual_norm=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual_norm = residual_norm


class SingularMatrixError(CdfError, ArithmeticError):
    pass


class ConfigurationError(CdfError, ValueError):
    pass


class SolverError(CdfError, RuntimeError):
    def __init__(self, message, cell_index=None):
        super().__init__(message)
        self.cell_index = cell_index


@dataclass(frozen=True)
class ModelDims:
    n_conserved: int
    n_dissipative: int
    n_space: int = 1

    def __post_init__(self):
        if self.n_conserved < 1 or self.n_dissipative < 1:
            raise ConfigurationError("need at least one conserved and one dissipative variable")
        if not 1 <= self.n_space <= 3:
            raise ConfigurationError(f"n_space must be 1, 2 or 3, got {self.n_space}")

    @property
    def total(self) -> int:
        return self.n_conserved + self.n_dissipative


def _check_finite(values, state, what):
    if not np.all(np.isfinite(values)):
        bad = np.asarray(state, dtype=float)
        raise EvaluationError(f"non-finite {what} at state {np.array2string(bad, precision=17)}", bad)


def _steps(x, base):
    h = base * np.maximum(1.0, np.abs(x))
    # make x + h exactly representable so the divided difference uses the true step
    return (x + h) - x


def fd_gradient(f: Callable, at, h: Optional[float] = None) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    ``at`` may carry leading batch axes; ``f`` must then broadcast.
    """
    x = np.asarray(at, dtype=float)
    steps = _steps(x, FD_STEP) if h is None else np.broadcast_to(float(h), x.shape).copy()
    grad = np.empty_like(x)
    for i in range(x.shape[-1]):
        xp = x.copy()
        xm = x.copy()
        xp[..., i] += steps[..., i]
        xm[..., i] -= steps[..., i]
        fp = np.asarray(f(xp), dtype=float)
        _check_finite(fp, xp, "function value")
        fm = np.asarray(f(xm), dtype=float)
        _check_finite(fm, xm, "function value")
        grad[..., i] = (fp - fm) / (2.0 * steps[..., i])
    return grad


def fd_jacobian(f: Callable, at, h: Optional[float] = None) -> np.ndarray:
    """Central-difference Jacobian; row ``i`` holds the gradient of ``f_i``."""
    x = np.asarray(at, dtype=float)
    steps = _steps(x, FD_STEP) if h is None else np.broadcast_to(float(h), x.shape).copy()
    cols = []
    for i in range(x.shape[-1]):
        xp = x.copy()
        xm = x.copy()
        xp[..., i] += steps[..., i]
        xm[..., i] -= steps[..., i]
        fp = np.asarray(f(xp), dtype=float)
        _check_finite(fp, xp, "function value")
        fm = np.asarray(f(xm), dtype=float)
        _check_finite(fm, xm, "function value")
        cols.append((fp - fm) / (2.0 * steps[..., i, None]))
    return np.stack(cols, axis=-1)


def fd_hessian(f: Callable, at, h: Optional[float] = None) -> np.ndarray:
    """Second-order central-difference Hessian, symmetrized as (H + H^T)/2.

    The default step is eps**(1/4) (scaled per component), the balance point
    for second differences.
    """
    x = np.asarray(at, dtype=float)
    d = x.shape[-1]
    steps = _steps(x, FD_STEP_2ND) if h is None else np.broadcast_to(float(h), x.shape).copy()

    def ev(y):
        val = np.asarray(f(y), dtype=float)
        _check_finite(val, y, "function value")
        return val

    f0 = ev(x)
    H = np.empty(x.shape + (d,))
    for i in range(d):
        hi = steps[..., i]
        xp = x.copy()
        xm = x.copy()
        xp[..., i] += hi
        xm[..., i] -= hi
        H[..., i, i] = (ev(xp) - 2.0 * f0 + ev(xm)) / (hi * hi)
        for j in range(i + 1, d):
            hj = steps[..., j]
            corners = []
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                y = x.copy()
                y[..., i] += si * hi
                y[..., j] += sj * hj
                corners.append(ev(y))
            val = (corners[0] - corners[1] - corners[2] + corners[3]) / (4.0 * hi * hj)
            H[..., i, j] = val
            H[..., j, i] = val
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def sym_part(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def min_eig_sym(A) -> np.ndarray:
    """Smallest eigenvalue of the symmetric part of ``A`` (batched)."""
    A = np.asarray(A, dtype=float)
    if A.shape[-1] != A.shape[-2]:
        raise ValueError(f"square matrix required, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise EvaluationError("matrix has non-finite entries")
    return np.linalg.eigvalsh(sym_part(A))[..., 0]


def max_eig_sym(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise EvaluationError("matrix has non-finite entries")
    return np.linalg.eigvalsh(sym_part(A))[..., -1]


def spectral_norm(A) -> np.ndarray:
    """Matrix 2-norm from the largest eigenvalue of A^T A."""
    A = np.asarray(A, dtype=float)
    AtA = np.swapaxes(A, -1, -2) @ A
    return np.sqrt(np.maximum(np.linalg.eigvalsh(AtA)[..., -1], 0.0))


def spectral_radius(A) -> np.ndarray:
    return np.max(np.abs(np.linalg.eigvals(np.asarray(A, dtype=float))), axis=-1)


def newton_solve(residual: Callable, guess, tol: float = 1e-12, max_iter: int = 50,
                 jacobian: Optional[Callable] = None, max_halvings: int = 30):
    """Damped Newton iteration for ``residual(x) = 0``.

    ``guess`` may be a scalar, a vector of length k, or a batch of shape
    ``(B, k)``; in the batched case every row is an independent problem and
    ``residual``/``jacobian`` must broadcast over the leading axis.  A full
    step that does not reduce ``|residual|_inf`` is halved up to
    ``max_halvings`` times.
    """
    x0 = np.array(guess, dtype=float)
    shape = x0.shape
    if x0.ndim == 0:
        X = x0.reshape(1, 1)
    elif x0.ndim == 1:
        X = x0.reshape(1, -1)
    elif x0.ndim == 2:
        X = x0.copy()
    else:
        raise ValueError("guess must be a scalar, a vector, or a 2D batch")
    batch, k = X.shape

    def R(Y):
        r = np.asarray(residual(Y.reshape(shape) if x0.ndim < 2 else Y), dtype=float)
        return r.reshape(batch, k)

    def J(Y):
        if jacobian is not None:
            jac = np.asarray(jacobian(Y.reshape(shape) if x0.ndim < 2 else Y), dtype=float)
        else:
            jac = fd_jacobian(lambda Z: R(Z), Y)
        return jac.reshape(batch, k, k)

    r = R(X)
    if not np.all(np.isfinite(r)):
        raise EvaluationError("non-finite residual at initial guess", X.reshape(shape))
    norm = np.max(np.abs(r), axis=1)
    for _ in range(max_iter):
        active = norm > tol
        if not np.any(active):
            return X.reshape(shape)
        jac = J(X)
        with np.errstate(all="ignore"):
            conds = np.linalg.cond(jac[active])
        if not np.all(np.isfinite(conds)) or np.any(conds > 1e15):
            raise SingularMatrixError("singular Jacobian in Newton iteration")
        step = np.zeros_like(X)
        step[active] = -np.linalg.solve(jac[active], r[active][..., None])[..., 0]
        lam = np.ones(batch)
        pending = active.copy()
        X_new, r_new, norm_new = X.copy(), r.copy(), norm.copy()
        for _h in range(max_halvings + 1):
            trial = X.copy()
            trial[pending] = X[pending] + lam[pending, None] * step[pending]
            with np.errstate(all="ignore"):
                r_trial = R(trial)
            n_trial = np.max(np.abs(r_trial), axis=1)
            n_trial = np.where(np.isfinite(n_trial), n_trial, np.inf)
            better = pending & (n_trial < norm)
            X_new[better] = trial[better]
            r_new[better] = r_trial[better]
            norm_new[better] = n_trial[better]
            pending &= ~better
            if not np.any(pending):
                break
            lam[pending] *= 0.5
        X, r, norm = X_new, r_new, norm_new
        if np.any(pending & (norm > tol)):
            # no descent along the Newton direction: stagnation
            worst = float(np.max(norm))
            raise NonConvergenceError(
                f"Newton stagnated with residual norm {worst:.3e}", X.reshape(shape), worst)
    if np.any(norm > tol):
        worst = float(np.max(norm))
        raise NonConvergenceError(
            f"Newton did not converge in {max_iter} iterations (residual {worst:.3e})",
            X.reshape(shape), worst)
    return X.reshape(shape)


@dataclass(frozen=True)
class CdfModel:
    """A balance-law model of conservation-dissipation type.

    Fluxes take ``(U, j)`` with ``j`` the spatial direction (0-based).  The
    source is never stored; :meth:`source` always returns ``M(U) eta_v(U)``
    so the dissipative structure holds by construction.  Analytic derivative
    callables are optional; finite differences fill in when absent.
    """

    name: str
    dims: ModelDims
    flux_f: Callable
    flux_g: Callable
    entropy: Callable
    dissipation: Callable
    admissible: Callable
    entropy_grad: Optional[Callable] = None
    entropy_hess: Optional[Callable] = None
    flux_jac: Optional[Callable] = None
    relax_exact: Optional[Callable] = None
    params: Mapping = field(default_factory=dict)
    state_box: Optional[tuple] = None
    conserved_box: Optional[tuple] = None
    warnings: tuple = ()

    @property
    def n(self) -> int:
        return self.dims.n_conserved

    @property
    def r(self) -> int:
        return self.dims.n_dissipative

    @property
    def has_analytic(self) -> bool:
        return self.entropy_grad is not None and self.entropy_hess is not None and self.flux_jac is not None

    def split(self, U):
        U = np.asarray(U, dtype=float)
        return U[..., : self.n], U[..., self.n:]

    def join(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        lead = np.broadcast_shapes(u.shape[:-1], v.shape[:-1])
        return np.concatenate([np.broadcast_to(u, lead + u.shape[-1:]),
                               np.broadcast_to(v, lead + v.shape[-1:])], axis=-1)

    def flux(self, U, j: int = 0) -> np.ndarray:
        return np.concatenate([self.flux_f(U, j), self.flux_g(U, j)], axis=-1)

    def grad_entropy(self, U) -> np.ndarray:
        if self.entropy_grad is not None:
            return np.asarray(self.entropy_grad(U), dtype=float)
        return fd_gradient(self.entropy, U)

    def hess_entropy(self, U) -> np.ndarray:
        if self.entropy_hess is not None:
            return np.asarray(self.entropy_hess(U), dtype=float)
        if self.entropy_grad is not None:
            return sym_part(fd_jacobian(self.entropy_grad, U))
        return fd_hessian(self.entropy, U)

    def jac_flux(self, U, j: int = 0) -> np.ndarray:
        if self.flux_jac is not None:
            return np.asarray(self.flux_jac(U, j), dtype=float)
        return fd_jacobian(lambda V: self.flux(V, j), U)

    def eta_v(self, U) -> np.ndarray:
        return self.grad_entropy(U)[..., self.n:]

    def q(self, U) -> np.ndarray:
        M = np.asarray(self.dissipation(U), dtype=float)
        return (M @ self.eta_v(U)[..., None])[..., 0]

    def source(self, U) -> np.ndarray:
        """Full source ``Q(U) = (0, M eta_v)``."""
        q = self.q(U)
        return np.concatenate([np.zeros(q.shape[:-1] + (self.n,)), q], axis=-1)

    def entropy_production(self, U) -> np.ndarray:
        ev = self.eta_v(U)
        M = np.asarray(self.dissipation(U), dtype=float)
        return np.einsum("...i,...ij,...j->...", ev, M, ev)

    def is_admissible(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        ok = np.asarray(self.admissible(U), dtype=bool) & np.all(np.isfinite(U), axis=-1)
        return ok

    def without_analytic(self) -> "CdfModel":
        """Copy whose derivatives all come from finite differences."""
        return dataclasses.replace(self, entropy_grad=None, entropy_hess=None, flux_jac=None)

    def replace(self, **changes) -> "CdfModel":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class QuasilinearSystem:
    """``U_t + sum_j A_j(U) U_{x_j} = S(U)`` with a candidate entropy."""

    name: str
    dims: ModelDims
    coeff_A: Callable
    entropy: Callable
    admissible: Callable
    source: Optional[Callable] = None
    entropy_grad: Optional[Callable] = None
    entropy_hess: Optional[Callable] = None
    params: Mapping = field(default_factory=dict)
    state_box: Optional[tuple] = None

    def grad_entropy(self, U):
        if self.entropy_grad is not None:
            return np.asarray(self.entropy_grad(U), dtype=float)
        return fd_gradient(self.entropy, U)

    def hess_entropy(self, U):
        if self.entropy_hess is not None:
            return np.asarray(self.entropy_hess(U), dtype=float)
        return fd_hessian(self.entropy, U)

    def is_admissible(self, U):
        U = np.asarray(U, dtype=float)
        return np.asarray(self.admissible(U), dtype=bool) & np.all(np.isfinite(U), axis=-1)

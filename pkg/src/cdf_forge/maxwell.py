"""Second-order (Maxwell iteration) coefficients and their structural checks.

Derivatives with respect to u are taken at fixed conjugate variable z, i.e.
through v = v(u, z), and evaluated on the equilibrium manifold z = 0.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (CdfError, CdfModel, SingularMatrixError, fd_hessian, max_eig_sym,
                   sym_part)
from .equilibrium import EquilibriumMap, equilibrium_state
from .verify import CheckResult, StateSampler, rel_asymmetry


class StrongDissipativenessError(CdfError, AssertionError):
    def __init__(self, message, witness=None, c0=None):
        super().__init__(message)
        self.witness = witness
        self.c0 = c0


def _inv(A, what):
    A = np.asarray(A, dtype=float)
    with np.errstate(all="ignore"):
        try:
            Ainv = np.linalg.inv(A)
        except np.linalg.LinAlgError:
            raise SingularMatrixError(f"{what} is singular") from None
        # infinity-norm condition number, cheap next to an SVD
        cond = np.max(np.sum(np.abs(A), -1), -1) * np.max(np.sum(np.abs(Ainv), -1), -1)
    if not np.all(np.isfinite(cond)) or np.any(cond > 1e14):
        raise SingularMatrixError(f"{what} is singular")
    return Ainv


def _mnorm(A):
    return np.max(np.abs(A), axis=(-2, -1))


@dataclass
class ChainRuleContext:
    """Jacobians and entropy Hessian blocks at (u, v_bar(u)), batched over u."""

    u: np.ndarray
    v_bar: np.ndarray
    eta_uu: np.ndarray
    eta_uv: np.ndarray
    eta_vu: np.ndarray
    eta_vv: np.ndarray
    eta_vv_inv: np.ndarray
    M_bar: np.ndarray
    M_bar_inv: np.ndarray
    f_u: list
    f_v: list
    g_u: list
    g_v: list
    f_z: list = field(default_factory=list)
    f_u0: list = field(default_factory=list)
    g_u0: list = field(default_factory=list)

    @property
    def eta_hat_uu(self):
        return self.eta_uu - self.eta_uv @ self.eta_vv_inv @ self.eta_vu

    @property
    def n_space(self):
        return len(self.f_u)


def build_context(model: CdfModel, u, emap: Optional[EquilibriumMap] = None,
                  guess=None) -> ChainRuleContext:
    u = np.asarray(u, dtype=float)
    n = model.n
    U = equilibrium_state(model, u, emap, guess)
    H = model.hess_entropy(U)
    eta_vv = H[..., n:, n:]
    eta_vv_inv = _inv(eta_vv, "eta_vv (entropy not strictly concave here)")
    M = np.asarray(model.dissipation(U), dtype=float)
    M_inv = _inv(M, "dissipation matrix")
    ctx = ChainRuleContext(
        u=u, v_bar=U[..., n:], eta_uu=H[..., :n, :n], eta_uv=H[..., :n, n:],
        eta_vu=H[..., n:, :n], eta_vv=eta_vv, eta_vv_inv=eta_vv_inv, M_bar=M, M_bar_inv=M_inv,
        f_u=[], f_v=[], g_u=[], g_v=[])
    dv_du = -eta_vv_inv @ ctx.eta_vu
    for j in range(model.dims.n_space):
        J = model.jac_flux(U, j)
        f_u, f_v = J[..., :n, :n], J[..., :n, n:]
        g_u, g_v = J[..., n:, :n], J[..., n:, n:]
        ctx.f_u.append(f_u)
        ctx.f_v.append(f_v)
        ctx.g_u.append(g_u)
        ctx.g_v.append(g_v)
        ctx.f_z.append(f_v @ eta_vv_inv)
        ctx.f_u0.append(f_u + f_v @ dv_du)
        ctx.g_u0.append(g_u + g_v @ dv_du)
    return ctx


def _B(ctx, j, k):
    inner = ctx.eta_vu @ ctx.f_u0[k] + ctx.eta_vv @ ctx.g_u0[k]
    return -ctx.f_z[j] @ ctx.M_bar_inv @ ctx.eta_vv_inv @ inner


def _B_tilde(ctx, j, k):
    return ctx.f_z[j] @ ctx.M_bar_inv @ np.swapaxes(ctx.f_z[k], -1, -2)


def derive_B(model: CdfModel, u, j: int = 0, k: int = 0, emap=None) -> np.ndarray:
    """Diffusion coefficient of u_t + f_j(u,0)_x = eps (B^{jk} u_{x_k})_{x_j}."""
    return _B(build_context(model, u, emap), j, k)


def derive_B_tilde(model: CdfModel, u, j: int = 0, k: int = 0, emap=None) -> np.ndarray:
    """Gradient-form coefficient f_jz M^{-1} f_kz^T."""
    return _B_tilde(build_context(model, u, emap), j, k)


def reduced_entropy(model: CdfModel, u, emap=None) -> np.ndarray:
    return model.entropy(equilibrium_state(model, u, emap))


def eta_hat_uu(model: CdfModel, u, emap=None) -> np.ndarray:
    """Hessian of the reduced entropy (Schur complement of eta_vv)."""
    return build_context(model, u, emap).eta_hat_uu


def eta_hat_uu_fd(model: CdfModel, u) -> np.ndarray:
    """Finite-difference Hessian of u -> eta(u, v_bar(u)); independent route."""
    return fd_hessian(lambda x: reduced_entropy(model, x), np.asarray(u, dtype=float))


@dataclass
class DiffusionTensors:
    model: CdfModel
    emap: EquilibriumMap

    @classmethod
    def for_model(cls, model: CdfModel):
        return cls(model, EquilibriumMap(model))

    def context(self, u, guess=None):
        return build_context(self.model, u, self.emap, guess)

    def B(self, u, j=0, k=0):
        return _B(self.context(u), j, k)

    def B_tilde(self, u, j=0, k=0):
        return _B_tilde(self.context(u), j, k)

    def eta_hat_uu(self, u):
        return self.context(u).eta_hat_uu


def onsager_block_matrix(model: CdfModel, u, emap=None) -> np.ndarray:
    """Block matrix [B_tilde^{jk}] of size (n d) x (n d) at a single u."""
    ctx = build_context(model, np.asarray(u, dtype=float), emap)
    d = ctx.n_space
    return np.block([[_B_tilde(ctx, j, k) for k in range(d)] for j in range(d)])


def _scaled(diff, scale):
    num = _mnorm(diff)
    return np.where(scale > 0, num / np.where(scale > 0, scale, 1.0), 0.0)


def check_gradient_identity(model: CdfModel, sampler: StateSampler, count: int,
                            tolerance: Optional[float] = None, eta_hat: str = "schur") -> CheckResult:
    """B = -B_tilde eta_hat_uu, the eta_hat_zz relation, symmetry of eta_hat_uu f_u(u,0),
    and negative definiteness of eta_hat_uu, at sampled conserved states.

    ``eta_hat="fd"`` takes eta_hat_uu from finite differences of the reduced
    entropy instead of the Schur complement.
    """
    if tolerance is None:
        tolerance = 1e-9 if model.has_analytic else 1e-5
    u = sampler.sample(count)
    ctx = build_context(model, u)
    ehat = ctx.eta_hat_uu if eta_hat == "schur" else eta_hat_uu_fd(model, u)
    d = ctx.n_space
    res_a = np.zeros(len(u))
    res_b = np.zeros(len(u))
    res_c = np.zeros(len(u))
    for j in range(d):
        for k in range(d):
            B = _B(ctx, j, k)
            Bt = _B_tilde(ctx, j, k)
            scale = np.maximum(_mnorm(B), _mnorm(Bt) * _mnorm(ehat))
            res_a = np.maximum(res_a, _scaled(B + Bt @ ehat, scale))
        lhs = ctx.eta_vv_inv @ (ctx.eta_vu @ ctx.f_u0[j] + ctx.eta_vv @ ctx.g_u0[j])
        rhs = np.swapaxes(ehat @ ctx.f_z[j], -1, -2)
        res_b = np.maximum(res_b, _scaled(lhs - rhs, np.maximum(_mnorm(lhs), _mnorm(rhs))))
        res_c = np.maximum(res_c, rel_asymmetry(ehat @ ctx.f_u0[j]))
    lam = max_eig_sym(ehat)
    res_d = np.where(lam < 0, 0.0, 1.0 + lam / np.maximum(_mnorm(ehat), 1e-300))
    viol = np.maximum.reduce([res_a, res_b, res_c, res_d])
    i = int(np.argmax(viol))
    details = {"gradient_form": float(res_a.max()), "eta_hat_zz_relation": float(res_b.max()),
               "reduced_symmetry": float(res_c.max()), "max_eig_eta_hat_uu": float(lam.max())}
    return CheckResult("gradient_identity", bool(viol[i] <= tolerance), float(viol[i]),
                       np.array(u[i]), float(tolerance), details)


def check_onsager_symmetry(model: CdfModel, sampler: StateSampler, count: int,
                           tolerance: float = 1e-9) -> CheckResult:
    """Block symmetry B_tilde^{jk} = (B_tilde^{kj})^T (expected when M is symmetric)."""
    u = sampler.sample(count)
    ctx = build_context(model, u)
    d = ctx.n_space
    blocks = np.concatenate([np.concatenate([_B_tilde(ctx, j, k) for k in range(d)], axis=-1)
                             for j in range(d)], axis=-2)
    viol = rel_asymmetry(blocks)
    i = int(np.argmax(viol))
    return CheckResult("onsager_symmetry", bool(viol[i] <= tolerance), float(viol[i]),
                       np.array(u[i]), tolerance)


def strong_dissipativeness_constant(model: CdfModel, u, emap=None) -> float:
    """Certified c0 = delta1 / delta2 at a single conserved state.

    delta1 is the smallest eigenvalue of sym(M^{-1}) on the range of the
    stacked f_kz^T; delta2 the largest eigenvalue of the Gram operator of the
    stacked f_jz M^{-1} on the same range.  Returns inf when the range is
    trivial (the derived system has no diffusion).
    """
    ctx = build_context(model, np.asarray(u, dtype=float)[None], emap)
    Fz = np.concatenate([np.swapaxes(fz[0], -1, -2) for fz in ctx.f_z], axis=-1)  # r x (n d)
    Us, s, _ = np.linalg.svd(Fz)
    rank = int(np.sum(s > 1e-12 * max(1.0, s.max(initial=0.0))))
    if rank == 0:
        return float("inf")
    P = Us[:, :rank]
    Minv = ctx.M_bar_inv[0]
    delta1 = np.linalg.eigvalsh(P.T @ sym_part(Minv) @ P)[0]
    K = np.concatenate([fz[0] @ Minv for fz in ctx.f_z], axis=0)
    delta2 = np.linalg.eigvalsh(P.T @ K.T @ K @ P)[-1]
    return float(delta1 / delta2)


def check_strong_dissipativeness(model: CdfModel, u, trial_count: int = 10_000, seed: int = 0,
                                 rtol: float = 1e-10) -> float:
    """Return a certified c0(u) after validating the inequality on random xi.

    Raises StrongDissipativenessError with the offending xi otherwise.
    """
    u = np.asarray(u, dtype=float)
    c0 = strong_dissipativeness_constant(model, u)
    ctx = build_context(model, u[None])
    d, n = ctx.n_space, model.n
    Bt = np.empty((d, d, n, n))
    for j in range(d):
        for k in range(d):
            Bt[j, k] = _B_tilde(ctx, j, k)[0]
    if not c0 > 0:
        raise StrongDissipativenessError(f"non-positive constant c0 = {c0}", None, c0)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((trial_count, d, n))
    xi[0] = 0.0
    lhs = np.einsum("tja,jkab,tkb->t", xi, Bt, xi)
    flux = np.einsum("jkab,tkb->tja", Bt, xi)
    rhs = np.sum(flux ** 2, axis=(1, 2))
    c_eff = 0.0 if np.isinf(c0) else c0
    slack = lhs - c_eff * rhs
    bad = slack < -rtol * (np.abs(lhs) + c_eff * rhs)
    if np.any(bad):
        t = int(np.argmax(bad))
        raise StrongDissipativenessError(
            f"inequality violated with c0 = {c0:.6g} (slack {slack[t]:.3e})", xi[t], c0)
    return c0


def export_tensors_csv(model: CdfModel, u_points, path) -> None:
    """Write B and B_tilde at each u (one row per direction pair)."""
    u_points = np.atleast_2d(np.asarray(u_points, dtype=float))
    tensors = DiffusionTensors.for_model(model)
    ctx = tensors.context(u_points)
    n, d = model.n, ctx.n_space
    header = [f"u{i}" for i in range(n)] + ["j", "k"]
    header += [f"B_{a}{b}" for a in range(n) for b in range(n)]
    header += [f"Btilde_{a}{b}" for a in range(n) for b in range(n)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for j in range(d):
            for k in range(d):
                B = _B(ctx, j, k)
                Bt = _B_tilde(ctx, j, k)
                for i, u in enumerate(u_points):
                    row = [repr(float(x)) for x in u] + [j, k]
                    row += [repr(float(x)) for x in B[i].ravel()]
                    row += [repr(float(x)) for x in Bt[i].ravel()]
                    w.writerow(row)

"""Builtin model catalog.

Specific entropies are written as ``eta(U) = rho * S(x)`` with the specific
coordinates ``x = (1/rho, U[1:]/rho)``; :func:`perspective_derivatives`
turns the derivatives of ``S`` into the gradient and Hessian of ``eta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .core import CdfModel, ConfigurationError, ModelDims, QuasilinearSystem


def perspective_derivatives(rho, x, S, Sx, Sxx):
    """Gradient and Hessian of ``eta = rho * S(x)``, ``x = (1, U_1..U_k)/rho``.

    ``x[..., 0]`` is the specific volume.  The Hessian is
    ``T^T S_xx T / rho`` with ``T`` the (unscaled) Jacobian of ``x``.
    """
    k = x.shape[-1]
    grad = np.empty(x.shape)
    grad[..., 0] = S - np.sum(x * Sx, axis=-1)
    grad[..., 1:] = Sx[..., 1:]
    T = np.zeros(x.shape + (k,))
    T[..., :, 0] = -x
    idx = np.arange(1, k)
    T[..., idx, idx] = 1.0
    hess = np.swapaxes(T, -1, -2) @ Sxx @ T / rho[..., None, None]
    return grad, hess


def _positive(**kw):
    for key, val in kw.items():
        if not np.isfinite(val) or val <= 0:
            raise ConfigurationError(f"parameter {key} must be positive, got {val}")


# ---------------------------------------------------------------- telegraph

def make_telegraph(a: float = 1.0, n_space: int = 1) -> CdfModel:
    """Linear relaxation baseline: u_t + div v = 0, v_t + a^2 grad u = -v/eps."""
    _positive(a=a)
    a2 = a * a
    d = n_space

    def flux_f(U, j):
        return U[..., 1 + j: 2 + j]

    def flux_g(U, j):
        out = np.zeros(U.shape[:-1] + (d,))
        out[..., j] = a2 * U[..., 0]
        return out

    def entropy(U):
        return -0.5 * U[..., 0] ** 2 - 0.5 * np.sum(U[..., 1:] ** 2, axis=-1) / a2

    def entropy_grad(U):
        g = np.empty(U.shape)
        g[..., 0] = -U[..., 0]
        g[..., 1:] = -U[..., 1:] / a2
        return g

    def entropy_hess(U):
        diag = np.full(d + 1, -1.0 / a2)
        diag[0] = -1.0
        return np.broadcast_to(np.diag(diag), U.shape[:-1] + (d + 1, d + 1)).copy()

    def flux_jac(U, j):
        J = np.zeros((d + 1, d + 1))
        J[0, 1 + j] = 1.0
        J[1 + j, 0] = a2
        return np.broadcast_to(J, U.shape[:-1] + (d + 1, d + 1)).copy()

    def dissipation(U):
        return np.broadcast_to(a2 * np.eye(d), U.shape[:-1] + (d, d)).copy()

    def admissible(U):
        return np.ones(U.shape[:-1], dtype=bool)

    def relax_exact(U, tau):
        out = np.array(U, dtype=float)
        out[..., 1:] *= np.exp(-tau)
        return out

    lo = np.full(d + 1, -2.0)
    hi = np.full(d + 1, 2.0)
    return CdfModel(
        name="telegraph", dims=ModelDims(1, d, d), flux_f=flux_f, flux_g=flux_g,
        entropy=entropy, dissipation=dissipation, admissible=admissible,
        entropy_grad=entropy_grad, entropy_hess=entropy_hess, flux_jac=flux_jac,
        relax_exact=relax_exact, params={"a": a, "n_space": n_space, "family": "telegraph"},
        state_box=(lo, hi), conserved_box=(np.array([0.5]), np.array([2.0])))


# ---------------------------------------------------------- porous family

def _s0_funcs(s0):
    """Return (s0, s0', s0'') for a named or user-supplied equilibrium entropy."""
    if s0 == "inverse":
        return (lambda nu: -1.0 / nu, lambda nu: 1.0 / nu ** 2, lambda nu: -2.0 / nu ** 3)
    if s0 == "log":
        return (np.log, lambda nu: 1.0 / nu, lambda nu: -1.0 / nu ** 2)
    if callable(s0):
        def d1(nu):
            h = 1e-6 * np.maximum(1.0, np.abs(nu))
            return (s0(nu + h) - s0(nu - h)) / (2 * h)

        def d2(nu):
            h = 1e-4 * np.maximum(1.0, np.abs(nu))
            return (s0(nu + h) - 2 * s0(nu) + s0(nu - h)) / (h * h)

        return s0, d1, d2
    raise ConfigurationError(f"unknown s0 selector {s0!r}")


def _porous_family(name, alpha, w0, s0, mobility, mobility_exact, params):
    s0_fn, s0_d1, s0_d2 = _s0_funcs(s0)
    nu_probe = np.geomspace(0.1, 10.0, 401)
    if np.any(~(s0_d2(nu_probe) < 0)):
        raise ConfigurationError(f"{name}: s0 must be strictly concave in the specific volume")

    def prim(U):
        rho = U[..., 0]
        return rho, 1.0 / rho, U[..., 1] / rho

    def S_parts(U):
        rho, nu, w = prim(U)
        S = s0_fn(nu) - (w - w0) ** 2 / (2 * alpha)
        Sx = np.stack([s0_d1(nu), -(w - w0) / alpha], axis=-1)
        Sxx = np.zeros(U.shape[:-1] + (2, 2))
        Sxx[..., 0, 0] = s0_d2(nu)
        Sxx[..., 1, 1] = -1.0 / alpha
        x = np.stack([nu, w], axis=-1)
        return rho, x, S, Sx, Sxx

    def entropy(U):
        rho, nu, w = prim(U)
        return rho * (s0_fn(nu) - (w - w0) ** 2 / (2 * alpha))

    def entropy_grad(U):
        return perspective_derivatives(*S_parts(U))[0]

    def entropy_hess(U):
        return perspective_derivatives(*S_parts(U))[1]

    def flux_f(U, j=0):
        return ((U[..., 1] - U[..., 0] * w0) / alpha)[..., None]

    def flux_g(U, j=0):
        rho, nu, w = prim(U)
        return ((U[..., 1] - rho * w0) * w / alpha + s0_d1(nu))[..., None]

    def flux_jac(U, j=0):
        rho, nu, w = prim(U)
        J = np.empty(U.shape[:-1] + (2, 2))
        J[..., 0, 0] = -w0 / alpha
        J[..., 0, 1] = 1.0 / alpha
        J[..., 1, 0] = -w * w / alpha - s0_d2(nu) / rho ** 2
        J[..., 1, 1] = (2 * w - w0) / alpha
        return J

    def dissipation(U):
        return np.asarray(mobility(U[..., 0]), dtype=float)[..., None, None] * np.ones((1, 1))

    def admissible(U):
        return U[..., 0] > 0

    def relax_exact(U, tau):
        out = np.array(U, dtype=float)
        rho = out[..., 0]
        rate = mobility_exact(rho) / (alpha * rho)
        m_eq = rho * w0
        out[..., 1] = m_eq + (out[..., 1] - m_eq) * np.exp(-rate * tau)
        return out

    def to_state(P):
        P = np.asarray(P, dtype=float)
        return np.stack([P[..., 0], P[..., 0] * P[..., 1]], axis=-1)

    return CdfModel(
        name=name, dims=ModelDims(1, 1, 1), flux_f=flux_f, flux_g=flux_g,
        entropy=entropy, dissipation=dissipation, admissible=admissible,
        entropy_grad=entropy_grad, entropy_hess=entropy_hess, flux_jac=flux_jac,
        relax_exact=relax_exact, params={**params, "family": "porous"},
        state_box=(np.array([0.5, w0 - 1.0]), np.array([2.0, w0 + 1.0]), to_state),
        conserved_box=(np.array([0.5]), np.array([2.0])))


def make_porous_media(alpha: float = 1.0, lambda_p: float = 1.0, eps: float = 1.0,
                      s0="inverse", w0: float = 0.0) -> CdfModel:
    """Porous-media flow with s = s0(nu) - (w - w0)^2/(2 alpha), M = alpha/(lambda eps)."""
    _positive(alpha=alpha, lambda_p=lambda_p, eps=eps)
    mu = alpha / (lambda_p * eps)

    def mobility(rho):
        return np.full(np.shape(rho), mu)

    return _porous_family(
        "porous_media", alpha, w0, s0, mobility, mobility,
        {"alpha": alpha, "lambda_p": lambda_p, "eps": eps, "s0": s0 if isinstance(s0, str) else "custom",
         "w0": w0})


def make_damped_euler(alpha: float = 1.0, lambda_p: float = 1.0, eps: float = 1.0) -> CdfModel:
    model = make_porous_media(alpha=alpha, lambda_p=lambda_p, eps=eps)
    return model.replace(name="damped_euler")


def make_pme(m: float = 0.0, h: str = "quadratic", w0: float = 0.3) -> CdfModel:
    """Porous-medium freedoms M = 2 rho^(2-m), s = -1/nu + h(w)."""
    if h == "quadratic":
        shift = 0.0
    elif h == "shifted":
        shift = w0
    else:
        raise ConfigurationError(f"unknown h selector {h!r}")

    def mobility(rho):
        return 2.0 * np.asarray(rho, dtype=float) ** (2.0 - m)

    return _porous_family("pme", 1.0, shift, "inverse", mobility, mobility,
                          {"m": m, "h": h, "w0": shift, "alpha": 1.0})


def damped_momentum_form(model: CdfModel, U):
    """Flux and source of the classical damped momentum equation for rho*v.

    Written directly from rho v^2 + pi/alpha and -v/(lambda eps) so it can be
    compared against the CDF form of the porous-media model.
    """
    p = model.params
    alpha, lam, eps = p["alpha"], p["lambda_p"], p["eps"]
    U = np.asarray(U, dtype=float)
    rho = U[..., 0]
    vel = conjugate_velocity(model, U)
    s0 = p.get("s0", "inverse")
    if s0 not in ("inverse", "log"):
        raise ConfigurationError("closed-form pressure only for the builtin s0 choices")
    pi = rho ** 2 if s0 == "inverse" else rho
    return rho * vel ** 2 + pi / alpha, -vel / (lam * eps)


def conjugate_velocity(model: CdfModel, U):
    """Fluid velocity v = -s_w conjugate to the non-equilibrium variable."""
    p = model.params
    U = np.asarray(U, dtype=float)
    w = U[..., 1] / U[..., 0]
    return (w - p.get("w0", 0.0)) / p["alpha"]


# ------------------------------------------------------------------ fluid1d

def make_fluid1d(s0: str = "ideal", a: float = 1.0, b: float = 1.0, cv: float = 1.0,
                 R: float = 1.0, mu1: float = 1.0, mu2: float = 1.0) -> CdfModel:
    """One-component fluid in 1D with state (rho, rho v, rho E, rho w, rho C).

    s = cv ln e + R ln nu - w^2/(2a) - C^2/(2b); heat flux q = s_w, viscous
    stress tau = theta s_C, P = pi + tau, and M = diag(mu1, mu2).
    """
    if s0 != "ideal":
        raise ConfigurationError(f"unknown s0 selector {s0!r}")
    _positive(a=a, b=b, cv=cv, R=R, mu1=mu1, mu2=mu2)

    def prim(U):
        rho = U[..., 0]
        v = U[..., 1] / rho
        E = U[..., 2] / rho
        w = U[..., 3] / rho
        C = U[..., 4] / rho
        return rho, v, E, w, C, E - 0.5 * v * v

    def entropy(U):
        rho, v, E, w, C, e = prim(U)
        return rho * (cv * np.log(e) - R * np.log(rho) - w * w / (2 * a) - C * C / (2 * b))

    def S_parts(U):
        rho, v, E, w, C, e = prim(U)
        nu = 1.0 / rho
        S = cv * np.log(e) + R * np.log(nu) - w * w / (2 * a) - C * C / (2 * b)
        s_e = cv / e
        s_ee = -cv / e ** 2
        Sx = np.stack([R / nu, -v * s_e, s_e, -w / a, -C / b], axis=-1)
        Sxx = np.zeros(U.shape[:-1] + (5, 5))
        Sxx[..., 0, 0] = -R / nu ** 2
        Sxx[..., 1, 1] = -s_e + v * v * s_ee
        Sxx[..., 1, 2] = Sxx[..., 2, 1] = -v * s_ee
        Sxx[..., 2, 2] = s_ee
        Sxx[..., 3, 3] = -1.0 / a
        Sxx[..., 4, 4] = -1.0 / b
        x = np.stack([nu, v, E, w, C], axis=-1)
        return rho, x, S, Sx, Sxx

    def entropy_grad(U):
        return perspective_derivatives(*S_parts(U))[0]

    def entropy_hess(U):
        return perspective_derivatives(*S_parts(U))[1]

    def stress(rho, e, C):
        return (e / cv) * (R * rho - C / b)

    def flux_f(U, j=0):
        rho, v, E, w, C, e = prim(U)
        P = stress(rho, e, C)
        return np.stack([rho * v, rho * v * v + P, rho * v * E + P * v - w / a], axis=-1)

    def flux_g(U, j=0):
        rho, v, E, w, C, e = prim(U)
        return np.stack([rho * v * w + cv / e, rho * v * C - v], axis=-1)

    def flux_jac(U, j=0):
        rho, v, E, w, C, e = prim(U)
        z = np.zeros_like(rho)
        one = np.ones_like(rho)
        P = stress(rho, e, C)
        e_p = np.stack([z, -v, one, z, z], axis=-1)
        P_p = (e_p * ((R * rho - C / b) / cv)[..., None]
               + (e / cv)[..., None] * np.stack([R * one, z, z, z, -one / b], axis=-1))
        F1 = np.stack([v, rho, z, z, z], axis=-1)
        F2 = np.stack([v * v, 2 * rho * v, z, z, z], axis=-1) + P_p
        F3 = (np.stack([v * E, rho * E + P, rho * v, -one / a, z], axis=-1)
              + v[..., None] * P_p)
        F4 = np.stack([v * w, rho * w, z, rho * v, z], axis=-1) - (cv / e ** 2)[..., None] * e_p
        F5 = np.stack([v * C, rho * C - 1.0, z, z, rho * v], axis=-1)
        Fp = np.stack([F1, F2, F3, F4, F5], axis=-2)
        pU = np.zeros(U.shape[:-1] + (5, 5))
        pU[..., 0, 0] = 1.0
        prims = (v, E, w, C)
        for k, val in enumerate(prims, start=1):
            pU[..., k, 0] = -val / rho
            pU[..., k, k] = 1.0 / rho
        return Fp @ pU

    def dissipation(U):
        return np.broadcast_to(np.diag([mu1, mu2]), U.shape[:-1] + (2, 2)).copy()

    def admissible(U):
        rho = U[..., 0]
        with np.errstate(all="ignore"):
            e = U[..., 2] / rho - 0.5 * (U[..., 1] / rho) ** 2
        return (rho > 0) & (e > 0)

    def relax_exact(U, tau):
        out = np.array(U, dtype=float)
        rho = out[..., 0]
        out[..., 3] *= np.exp(-mu1 * tau / (a * rho))
        out[..., 4] *= np.exp(-mu2 * tau / (b * rho))
        return out

    def to_state(P):
        P = np.asarray(P, dtype=float)
        rho, v, e, w, C = (P[..., i] for i in range(5))
        return np.stack([rho, rho * v, rho * (e + 0.5 * v * v), rho * w, rho * C], axis=-1)

    def to_conserved(P):
        P = np.asarray(P, dtype=float)
        rho, v, e = P[..., 0], P[..., 1], P[..., 2]
        return np.stack([rho, rho * v, rho * (e + 0.5 * v * v)], axis=-1)

    return CdfModel(
        name="fluid1d", dims=ModelDims(3, 2, 1), flux_f=flux_f, flux_g=flux_g,
        entropy=entropy, dissipation=dissipation, admissible=admissible,
        entropy_grad=entropy_grad, entropy_hess=entropy_hess, flux_jac=flux_jac,
        relax_exact=relax_exact,
        params={"s0": s0, "a": a, "b": b, "cv": cv, "R": R, "mu1": mu1, "mu2": mu2,
                "family": "fluid"},
        state_box=(np.array([0.5, -1.0, 0.5, -0.5, -0.5]), np.array([2.0, 1.0, 2.0, 0.5, 0.5]),
                   to_state),
        conserved_box=(np.array([0.5, -1.0, 0.5]), np.array([2.0, 1.0, 2.0]), to_conserved))


# ---------------------------------------------------------------- generic1d

def _pressure_funcs(p, kappa, gamma):
    """(p, p_rho, int^rho p(z)/z^2 dz) for the GENERIC pressure law."""
    if p == "linear":
        return (lambda r: kappa * r, lambda r: kappa * np.ones_like(r), lambda r: kappa * np.log(r))
    if p == "power":
        if gamma <= 1:
            raise ConfigurationError("power pressure law needs gamma > 1")
        return (lambda r: kappa * r ** gamma, lambda r: kappa * gamma * r ** (gamma - 1),
                lambda r: kappa * r ** (gamma - 1) / (gamma - 1))
    if callable(p):
        from scipy.integrate import quad

        def integral(r):
            r = np.asarray(r, dtype=float)
            flat = [quad(lambda z: p(z) / z ** 2, 1.0, ri)[0] for ri in r.ravel()]
            return np.array(flat).reshape(r.shape)

        def dp(r):
            h = 1e-6 * np.maximum(1.0, np.abs(r))
            return (p(r + h) - p(r - h)) / (2 * h)

        return p, dp, integral
    raise ConfigurationError(f"unknown pressure selector {p!r}")


def make_generic1d(tau: float = 1.0, p="linear", kappa: float = 1.0, gamma: float = 2.0) -> QuasilinearSystem:
    """Scalar-c reduction of the isothermal GENERIC complex-fluid model.

    State (rho, rho v, c).  In 1D the stress is pi = 1.5 c^2 - 2c and the
    Oldroyd terms reduce to (2c - 2) v_x.
    """
    _positive(tau=tau)
    p_fn, dp_fn, P_int = _pressure_funcs(p, kappa, gamma)
    probe = np.linspace(0.5, 2.0, 301)
    if np.any(dp_fn(probe) < 0):
        raise ConfigurationError("pressure law must satisfy p_rho >= 0")

    def coeff_A(U, j=0):
        rho, m, c = U[..., 0], U[..., 1], U[..., 2]
        v = m / rho
        A = np.zeros(U.shape[:-1] + (3, 3))
        A[..., 0, 1] = 1.0
        A[..., 1, 0] = -v * v + dp_fn(rho)
        A[..., 1, 1] = 2 * v
        A[..., 1, 2] = 3 * c - 2
        A[..., 2, 0] = -(2 * c - 2) * v / rho
        A[..., 2, 1] = (2 * c - 2) / rho
        A[..., 2, 2] = v
        return A

    def entropy(U):
        rho, m, c = U[..., 0], U[..., 1], U[..., 2]
        return -rho * P_int(rho) - m * m / (2 * rho) - 0.5 * c * c

    def entropy_grad(U):
        rho, m, c = U[..., 0], U[..., 1], U[..., 2]
        return np.stack([-P_int(rho) - p_fn(rho) / rho + m * m / (2 * rho * rho), -m / rho, -c], axis=-1)

    def entropy_hess(U):
        rho, m, c = U[..., 0], U[..., 1], U[..., 2]
        H = np.zeros(U.shape[:-1] + (3, 3))
        H[..., 0, 0] = -dp_fn(rho) / rho - m * m / rho ** 3
        H[..., 0, 1] = H[..., 1, 0] = m / rho ** 2
        H[..., 1, 1] = -1.0 / rho
        H[..., 2, 2] = -1.0
        return H

    def source(U):
        out = np.zeros(np.shape(U))
        out[..., 2] = -U[..., 2] / tau
        return out

    def admissible(U):
        return U[..., 0] > 0

    def to_state(P):
        P = np.asarray(P, dtype=float)
        return np.stack([P[..., 0], P[..., 0] * P[..., 1], P[..., 2]], axis=-1)

    return QuasilinearSystem(
        name="generic1d", dims=ModelDims(2, 1, 1), coeff_A=coeff_A, entropy=entropy,
        admissible=admissible, source=source, entropy_grad=entropy_grad,
        entropy_hess=entropy_hess,
        params={"tau": tau, "p": p if isinstance(p, str) else "custom", "kappa": kappa, "gamma": gamma},
        state_box=(np.array([0.5, -1.0, -0.5]), np.array([2.0, 1.0, 0.5]), to_state))


# ----------------------------------------------------------------- registry

@dataclass(frozen=True)
class ModelSpec:
    name: str
    parameters: Mapping[str, object]
    factory: Callable
    kind: str = "cdf"
    description: str = ""

    def build(self, **overrides):
        unknown = set(overrides) - set(self.parameters)
        if unknown:
            raise ConfigurationError(
                f"unknown parameter(s) for {self.name}: {', '.join(sorted(unknown))}")
        params = dict(self.parameters)
        for key, val in overrides.items():
            default = params[key]
            if isinstance(default, bool):
                params[key] = val if isinstance(val, bool) else str(val).lower() in ("1", "true", "yes")
            elif isinstance(default, int) and not isinstance(val, str):
                params[key] = int(val)
            elif isinstance(default, (int, float)):
                try:
                    params[key] = type(default)(val)
                except (TypeError, ValueError):
                    raise ConfigurationError(f"parameter {key} expects a number, got {val!r}") from None
            else:
                params[key] = val
        return self.factory(**params)


MODELS: dict[str, ModelSpec] = {
    "telegraph": ModelSpec("telegraph", {"a": 1.0, "n_space": 1}, make_telegraph,
                           description="linear relaxation baseline"),
    "porous_media": ModelSpec("porous_media", {"alpha": 1.0, "lambda_p": 1.0, "eps": 1.0,
                                               "s0": "inverse", "w0": 0.0}, make_porous_media,
                              description="porous-media flow with quadratic non-equilibrium entropy"),
    "damped_euler": ModelSpec("damped_euler", {"alpha": 1.0, "lambda_p": 1.0, "eps": 1.0},
                              make_damped_euler, description="porous-media model with alpha = 1"),
    "pme": ModelSpec("pme", {"m": 0.0, "h": "quadratic", "w0": 0.3}, make_pme,
                     description="freedoms giving the porous medium equation"),
    "fluid1d": ModelSpec("fluid1d", {"s0": "ideal", "a": 1.0, "b": 1.0, "cv": 1.0, "R": 1.0,
                                     "mu1": 1.0, "mu2": 1.0}, make_fluid1d,
                         description="one-component fluid, 1D reduction"),
    "generic1d": ModelSpec("generic1d", {"tau": 1.0, "p": "linear", "kappa": 1.0, "gamma": 2.0},
                           make_generic1d, kind="quasilinear",
                           description="GENERIC complex-fluid counterexample, scalar reduction"),
}

CDF_MODEL_NAMES = tuple(name for name, spec in MODELS.items() if spec.kind == "cdf")


def build_model(name: str, **params):
    try:
        spec = MODELS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown model {name!r}; choose from {', '.join(MODELS)}") from None
    return spec.build(**params)


def initial_conserved(model: CdfModel, kind: str, x, x_min: float, x_max: float) -> np.ndarray:
    """Preset initial data in conserved variables on cell centers ``x``."""
    x = np.asarray(x, dtype=float)
    L = x_max - x_min
    bump = np.sin(2 * np.pi * (x - x_min) / L)
    left = x < x_min + 0.5 * L
    family = model.params.get("family")
    if kind not in ("smooth", "riemann", "constant"):
        raise ConfigurationError(f"unknown initial data kind {kind!r}")
    if family in ("telegraph", "porous"):
        if kind == "smooth":
            u = 1.0 + 0.2 * bump
        elif kind == "riemann":
            u = np.where(left, 1.5, 0.75)
        else:
            u = np.ones_like(x)
        return u[:, None]
    if family == "fluid":
        cv, R = model.params["cv"], model.params["R"]
        if kind == "smooth":
            rho, vel, pres = 1.0 + 0.2 * bump, np.zeros_like(x), np.ones_like(x)
        elif kind == "riemann":
            rho = np.where(left, 1.0, 0.125)
            vel = np.zeros_like(x)
            pres = np.where(left, 1.0, 0.1)
        else:
            rho, vel, pres = np.ones_like(x), np.zeros_like(x), np.ones_like(x)
        e = cv * pres / (R * rho)
        return np.stack([rho, rho * vel, rho * (e + 0.5 * vel * vel)], axis=-1)
    raise ConfigurationError(f"no preset initial data for model {model.name!r}")

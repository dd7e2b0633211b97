"""1D finite-volume solvers: relaxation system, equilibrium system, and the
Maxwell-iteration parabolic system, plus an epsilon-convergence driver.

Transport uses the Rusanov (local Lax-Friedrichs) flux with SSP-RK2 in time.
The relaxation solver wraps transport in a Strang splitting with the stiff
source, which only touches the dissipative variables.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (CdfError, CdfModel, ConfigurationError, EvaluationError,
                   NonConvergenceError, SingularMatrixError, SolverError, newton_solve,
                   spectral_norm, spectral_radius)
from .equilibrium import EquilibriumMap, from_conjugate, ConjugatePair
from .maxwell import DiffusionTensors, _B, build_context

BOUNDARY_CONDITIONS = ("periodic", "copy-out")
SOURCE_TREATMENTS = ("implicit", "exact-when-available")


@dataclass(frozen=True)
class Grid1D:
    cells: int
    x_min: float = 0.0
    x_max: float = 1.0
    bc: str = "periodic"

    def __post_init__(self):
        if self.cells < 4:
            raise ConfigurationError(f"need at least 4 cells, got {self.cells}")
        if not self.x_max > self.x_min:
            raise ConfigurationError("x_max must exceed x_min")
        if self.bc not in BOUNDARY_CONDITIONS:
            raise ConfigurationError(f"unknown boundary condition {self.bc!r}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.cells

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.cells) + 0.5) * self.dx

    def coarsened(self) -> "Grid1D":
        return replace(self, cells=self.cells // 2)


@dataclass
class Field1D:
    grid: Grid1D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.grid.cells:
            raise ConfigurationError("field length does not match the grid")

    def copy(self) -> "Field1D":
        return Field1D(self.grid, self.values.copy(), self.time)

    def to_csv(self, path, names: Optional[Sequence[str]] = None) -> None:
        k = self.values.shape[1]
        names = list(names) if names is not None else [f"U{i}" for i in range(k)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x"] + names)
            for x, row in zip(self.grid.centers, self.values):
                w.writerow([repr(float(x))] + [repr(float(val)) for val in row])


@dataclass(frozen=True)
class SolverConfig:
    cfl: float = 0.5
    epsilon: float = 0.1
    t_end: float = 1.0
    source_treatment: str = "exact-when-available"
    diffusion_number: float = 0.4
    # Global Lax-Friedrichs speed; None means per-interface spectral radii.
    wave_speed: Optional[float] = None
    record_every: int = 1
    max_rejections: int = 10

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise ConfigurationError(f"cfl must lie in (0, 1], got {self.cfl}")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if not self.t_end >= 0:
            raise ConfigurationError("t_end must be non-negative")
        if self.source_treatment not in SOURCE_TREATMENTS:
            raise ConfigurationError(f"unknown source treatment {self.source_treatment!r}")
        if not 0 < self.diffusion_number <= 0.5:
            raise ConfigurationError("diffusion_number must lie in (0, 0.5]")
        if self.wave_speed is not None and not self.wave_speed > 0:
            raise ConfigurationError("wave_speed must be positive")


@dataclass
class Diagnostics:
    times: list = field(default_factory=list)
    total_entropy: list = field(default_factory=list)
    min_sigma: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    mass_scale: Optional[np.ndarray] = None

    def record(self, t, entropy, sigma_min, mass, scale=None):
        if self.mass_scale is None and scale is not None:
            self.mass_scale = np.asarray(scale, dtype=float)
        self.times.append(float(t))
        self.total_entropy.append(float(entropy))
        self.min_sigma.append(float(sigma_min))
        self.masses.append(np.array(mass, dtype=float))

    def mass_drift(self) -> float:
        """Largest change of any conserved total relative to its initial L1 norm."""
        m = np.array(self.masses)
        if not len(m):
            return 0.0
        scale = self.mass_scale if self.mass_scale is not None else np.abs(m[0])
        # a component that starts identically zero borrows the largest norm
        scale = np.where(scale > 0, scale, max(float(np.max(scale)), 1e-300))
        return float(np.max(np.abs(m - m[0]) / scale))

    def entropy_decrease_rate(self) -> float:
        """Largest entropy decrease per unit time between records (0 if none)."""
        s = np.array(self.total_entropy)
        t = np.array(self.times)
        if len(s) < 2:
            return 0.0
        dt = np.diff(t)
        drops = -np.diff(s) / np.where(dt > 0, dt, 1.0)
        return float(max(0.0, drops.max()))

    def to_csv(self, path) -> None:
        k = len(self.masses[0]) if self.masses else 0
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "total_entropy", "min_sigma"] + [f"mass{i}" for i in range(k)])
            for t, s, sg, m in zip(self.times, self.total_entropy, self.min_sigma, self.masses):
                w.writerow([repr(t), repr(s), repr(sg)] + [repr(float(x)) for x in m])


def pad(values: np.ndarray, bc: str) -> np.ndarray:
    if bc == "periodic":
        return np.concatenate([values[-1:], values, values[:1]])
    return np.concatenate([values[:1], values, values[-1:]])


def rusanov_divergence(ext: np.ndarray, flux: np.ndarray, speeds, dx: float) -> np.ndarray:
    """-(F_{i+1/2} - F_{i-1/2})/dx from padded states, fluxes and speeds.

    ``speeds`` is a scalar (global) or one value per padded cell.
    """
    speeds = np.asarray(speeds, dtype=float)
    a = speeds if speeds.ndim == 0 else np.maximum(speeds[:-1], speeds[1:])[:, None]
    face = 0.5 * (flux[:-1] + flux[1:]) - 0.5 * a * (ext[1:] - ext[:-1])
    return -(face[1:] - face[:-1]) / dx


def ssp_rk2(U, dt, rhs):
    U1 = U + dt * rhs(U)
    return 0.5 * U + 0.5 * (U1 + dt * rhs(U1))


def _check_admissible(model, states, what):
    ok = model.is_admissible(states)
    if not np.all(ok):
        bad = int(np.argmin(ok))
        raise SolverError(f"{what}: inadmissible state in cell {bad}", cell_index=bad)


# ------------------------------------------------------------ relaxation

def relaxation_speeds(model: CdfModel, U) -> np.ndarray:
    return spectral_radius(model.jac_flux(U, 0))


def _transport_rhs(model, grid, wave_speed):
    def rhs(U):
        ext = pad(U, grid.bc)
        speeds = wave_speed if wave_speed is not None else relaxation_speeds(model, ext)
        return rusanov_divergence(ext, model.flux(ext, 0), speeds, grid.dx)
    return rhs


def _source_step(model: CdfModel, U, tau: float, treatment: str):
    """Integrate dv/dt = q(u, v) over a stretched time tau = dt/eps."""
    if treatment == "exact-when-available" and model.relax_exact is not None:
        return model.relax_exact(U, tau)
    u, v0 = model.split(U)

    def residual(V):
        return V - v0 - tau * model.q(model.join(u, V))

    v = newton_solve(residual, v0.copy(), tol=1e-12 * max(1.0, float(np.max(np.abs(v0)))))
    return model.join(u, v)


def relaxation_dt(model: CdfModel, field_: Field1D, config: SolverConfig) -> float:
    speed = config.wave_speed
    if speed is None:
        speed = float(np.max(relaxation_speeds(model, field_.values)))
    if speed <= 0:
        return config.t_end - field_.time
    return config.cfl * field_.grid.dx / speed


def step_relaxation(model: CdfModel, field_: Field1D, config: SolverConfig,
                    dt: Optional[float] = None) -> Field1D:
    """One Strang step: half source, SSP-RK2 Rusanov transport, half source.

    A Newton failure in the implicit source halves dt (up to
    ``config.max_rejections`` times).
    """
    if dt is None:
        dt = relaxation_dt(model, field_, config)
    rhs = _transport_rhs(model, field_.grid, config.wave_speed)
    eps = config.epsilon
    for _ in range(config.max_rejections + 1):
        try:
            U = _source_step(model, field_.values, 0.5 * dt / eps, config.source_treatment)
            U = ssp_rk2(U, dt, rhs)
            _check_admissible(model, U, "relaxation transport")
            U = _source_step(model, U, 0.5 * dt / eps, config.source_treatment)
        except (NonConvergenceError, SingularMatrixError, EvaluationError):
            dt *= 0.5
            continue
        return Field1D(field_.grid, U, field_.time + dt)
    raise SolverError(f"step rejected {config.max_rejections} times at t = {field_.time}")


def _relaxation_diag(model, field_, diag):
    U = field_.values
    dx = field_.grid.dx
    diag.record(field_.time, np.sum(model.entropy(U)) * dx,
                np.min(model.entropy_production(U)), np.sum(U[:, :model.n], axis=0) * dx,
                np.sum(np.abs(U[:, :model.n]), axis=0) * dx)


def run_relaxation(model: CdfModel, initial: Field1D, config: SolverConfig):
    """Advance the relaxation system to ``config.t_end``."""
    _check_admissible(model, initial.values, "initial data")
    f = initial.copy()
    diag = Diagnostics()
    _relaxation_diag(model, f, diag)
    steps = 0
    try:
        while f.time < config.t_end * (1 - 1e-14):
            dt = min(relaxation_dt(model, f, config), config.t_end - f.time)
            f = step_relaxation(model, f, config, dt)
            if not np.all(np.isfinite(f.values)):
                raise SolverError(f"non-finite values at t = {f.time}")
            steps += 1
            if steps % config.record_every == 0:
                _relaxation_diag(model, f, diag)
    except SolverError as exc:
        exc.diagnostics = diag
        raise
    if diag.times[-1] != f.time:
        _relaxation_diag(model, f, diag)
    return f, diag


# ----------------------------------------------------------- equilibrium

class _ReducedState:
    """Warm-started equilibrium evaluations for the conserved-only solvers."""

    def __init__(self, model: CdfModel, emap: Optional[EquilibriumMap] = None):
        self.model = model
        self.emap = emap or EquilibriumMap(model)
        self.guess = None

    def context(self, ext):
        guess = self.guess if self.guess is not None and len(self.guess) == len(ext) else None
        # ext carries one ghost cell per side; interior index i is ext index i + 1
        try:
            with np.errstate(invalid="ignore", divide="ignore"):
                ctx = build_context(self.model, ext, self.emap, guess=guess)
        except (NonConvergenceError, SingularMatrixError, EvaluationError) as exc:
            ok = self.model.is_admissible(self.model.join(ext, np.zeros((len(ext), self.model.r))))
            bad = int(np.argmin(ok[1:-1])) if not np.all(ok) else None
            raise SolverError(f"equilibrium evaluation failed: {exc}", cell_index=bad) from exc
        with np.errstate(invalid="ignore"):
            ok = self.model.is_admissible(self.model.join(ext, ctx.v_bar))
        ok = ok & np.all(np.isfinite(ext), axis=-1) & np.all(np.isfinite(ctx.v_bar), axis=-1)
        if not np.all(ok[1:-1]):
            bad = int(np.argmin(ok[1:-1]))
            raise SolverError(f"inadmissible state in cell {bad}", cell_index=bad)
        self.guess = ctx.v_bar
        return ctx

    def entropy(self, u):
        guess = self.guess[1:-1] if self.guess is not None and len(self.guess) == len(u) + 2 else None
        U = self.model.join(u, self.emap(u, guess))
        return self.model.entropy(U)


def _reduced_diag(red, field_, diag):
    u = field_.values
    dx = field_.grid.dx
    diag.record(field_.time, np.sum(red.entropy(u)) * dx, 0.0, np.sum(u, axis=0) * dx,
                np.sum(np.abs(u), axis=0) * dx)


def run_equilibrium(model: CdfModel, initial: Field1D, config: SolverConfig):
    """Rusanov/SSP-RK2 evolution of u_t + f(u, v_bar(u))_x = 0."""
    grid = initial.grid
    red = _ReducedState(model)

    def rhs_and_speed(u):
        ext = pad(u, grid.bc)
        ctx = red.context(ext)
        F = model.flux_f(model.join(ext, ctx.v_bar), 0)
        speeds = config.wave_speed if config.wave_speed is not None else spectral_radius(ctx.f_u0[0])
        return rusanov_divergence(ext, F, speeds, grid.dx), np.max(speeds)

    f = initial.copy()
    diag = Diagnostics()
    steps = 0
    try:
        red.context(pad(f.values, grid.bc))
        _reduced_diag(red, f, diag)
        while f.time < config.t_end * (1 - 1e-14):
            _, smax = rhs_and_speed(f.values)
            dt = config.t_end - f.time if smax <= 0 else min(config.cfl * grid.dx / smax, config.t_end - f.time)
            u = ssp_rk2(f.values, dt, lambda x: rhs_and_speed(x)[0])
            f = Field1D(grid, u, f.time + dt)
            steps += 1
            if steps % config.record_every == 0:
                _reduced_diag(red, f, diag)
    except SolverError as exc:
        exc.diagnostics = diag
        raise
    if diag.times[-1] != f.time:
        _reduced_diag(red, f, diag)
    return f, diag


# ------------------------------------------------------------- parabolic

def run_parabolic(model: CdfModel, initial: Field1D, config: SolverConfig,
                  tensors: Optional[DiffusionTensors] = None):
    """Explicit solver for u_t + f(u,0)_x = eps (B(u) u_x)_x.

    Rusanov for the first-order part, central differences with face-averaged
    B for the diffusion, SSP-RK2 in time.  dt obeys both the CFL and the
    diffusion-number limit.
    """
    grid = initial.grid
    eps = config.epsilon
    tensors = tensors or DiffusionTensors.for_model(model)
    red = _ReducedState(model, tensors.emap)

    def evaluate(u):
        ext = pad(u, grid.bc)
        ctx = red.context(ext)
        F = model.flux_f(model.join(ext, ctx.v_bar), 0)
        speeds = config.wave_speed if config.wave_speed is not None else spectral_radius(ctx.f_u0[0])
        B = _B(ctx, 0, 0)
        B_face = 0.5 * (B[:-1] + B[1:])
        grad = (ext[1:] - ext[:-1]) / grid.dx
        D = eps * (B_face @ grad[..., None])[..., 0]
        out = rusanov_divergence(ext, F, speeds, grid.dx) + (D[1:] - D[:-1]) / grid.dx
        return out, float(np.max(speeds)), float(np.max(spectral_norm(B)))

    f = initial.copy()
    diag = Diagnostics()
    steps = 0
    try:
        red.context(pad(f.values, grid.bc))
        _reduced_diag(red, f, diag)
        while f.time < config.t_end * (1 - 1e-14):
            _, smax, bmax = evaluate(f.values)
            limits = [math.inf]
            if smax > 0:
                limits.append(config.cfl * grid.dx / smax)
            if bmax > 0:
                limits.append(config.diffusion_number * grid.dx ** 2 / (eps * bmax))
            dt = min(limits)
            if dt < 1e-14:
                raise SolverError(f"time step underflow (dt = {dt:.3e}) at t = {f.time}")
            dt = min(dt, config.t_end - f.time)
            u = ssp_rk2(f.values, dt, lambda x: evaluate(x)[0])
            f = Field1D(grid, u, f.time + dt)
            steps += 1
            if steps % config.record_every == 0:
                _reduced_diag(red, f, diag)
    except SolverError as exc:
        exc.diagnostics = diag
        raise
    if diag.times[-1] != f.time:
        _reduced_diag(red, f, diag)
    return f, diag


# ----------------------------------------------------------- convergence

def prepare_relaxation_field(model: CdfModel, u_field: Field1D, epsilon: float = 0.0,
                             order: int = 0) -> Field1D:
    """Well-prepared relaxation data from conserved data.

    ``order=0`` puts v on the equilibrium manifold; ``order=1`` adds the
    first Maxwell-iteration correction z = eps M^-1 eta_vv^-1 (...) u_x.
    """
    u = u_field.values
    grid = u_field.grid
    ctx = build_context(model, u)
    if order == 0:
        return Field1D(grid, model.join(u, ctx.v_bar), u_field.time)
    if order != 1:
        raise ConfigurationError("order must be 0 or 1")
    ext = pad(u, grid.bc)
    ux = (ext[2:] - ext[:-2]) / (2 * grid.dx)
    inner = ctx.eta_vu @ ctx.f_u0[0] + ctx.eta_vv @ ctx.g_u0[0]
    z = epsilon * (ctx.M_bar_inv @ ctx.eta_vv_inv @ inner @ ux[..., None])[..., 0]
    U = from_conjugate(model, ConjugatePair(u, z), guess=ctx.v_bar)
    return Field1D(grid, U, u_field.time)


@dataclass
class ConvergenceResult:
    eps: np.ndarray
    err_equilibrium: np.ndarray
    err_parabolic: np.ndarray
    cells: int
    inconclusive: bool = False
    spatial_share: float = float("nan")
    notes: list = field(default_factory=list)
    coarse: Optional["ConvergenceResult"] = None

    @staticmethod
    def _rates(eps, err):
        return np.log(err[:-1] / err[1:]) / np.log(eps[:-1] / eps[1:])

    @property
    def rate_equilibrium(self) -> np.ndarray:
        return self._rates(self.eps, self.err_equilibrium)

    @property
    def rate_parabolic(self) -> np.ndarray:
        return self._rates(self.eps, self.err_parabolic)

    def passed(self, window_eq=(0.7, 1.3), window_par=(1.6, 2.4)) -> bool:
        re, rp = self.rate_equilibrium, self.rate_parabolic
        return bool(np.all((re >= window_eq[0]) & (re <= window_eq[1]))
                    and np.all((rp >= window_par[0]) & (rp <= window_par[1])))

    def to_csv(self, path) -> None:
        re = np.concatenate([[np.nan], self.rate_equilibrium])
        rp = np.concatenate([[np.nan], self.rate_parabolic])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eps", "err_equilibrium", "rate_equilibrium", "err_parabolic", "rate_parabolic"])
            for row in zip(self.eps, self.err_equilibrium, re, self.err_parabolic, rp):
                w.writerow(["" if math.isnan(x) else repr(float(x)) for x in row])


def _study_once(model, u0: Field1D, eps_list, t_end, cfl, diffusion_number, order, workers):
    prepared = [prepare_relaxation_field(model, u0, e, order) for e in eps_list]
    speed = 1.1 * max(float(np.max(relaxation_speeds(model, p.values))) for p in prepared)
    base = SolverConfig(cfl=cfl, t_end=t_end, diffusion_number=diffusion_number,
                        wave_speed=speed, record_every=10 ** 9)
    u_eq, _ = run_equilibrium(model, u0, base)
    tensors = DiffusionTensors.for_model(model)

    def one(args):
        e, U0 = args
        cfg = replace(base, epsilon=e)
        fh, _ = run_relaxation(model, U0, cfg)
        fp, _ = run_parabolic(model, u0, cfg, tensors)
        uh = fh.values[:, :model.n]
        return (float(np.max(np.abs(uh - u_eq.values))), float(np.max(np.abs(uh - fp.values))))

    jobs = list(zip(eps_list, prepared))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, jobs))
    else:
        out = [one(j) for j in jobs]
    return np.array([o[0] for o in out]), np.array([o[1] for o in out])


def convergence_study(model: CdfModel, initial, eps_list: Sequence[float], grid: Grid1D,
                      t_end: float, cfl: float = 0.05, diffusion_number: float = 0.4,
                      order: int = 0, refine_check: bool = True, spatial_share_limit: float = 0.2,
                      workers: int = 1) -> ConvergenceResult:
    """Errors of the relaxation solution against the equilibrium and parabolic
    solutions for a decreasing list of epsilons, all on the same grid.

    The three solvers share one global Lax-Friedrichs speed (the relaxation
    system's, with 10% headroom) so their numerical viscosities match and
    cancel in the differences.  ``initial`` is either a callable x -> u or a
    conserved Field1D.

    With ``refine_check`` the study is repeated with half the cells.  Taking
    the leftover discretization error as second order, its share of the
    fine-grid error is |e_N - e_N/2| / (3 e_N); above ``spatial_share_limit``
    the result is flagged inconclusive.
    """
    eps = np.asarray(eps_list, dtype=float)
    if eps.size < 3:
        raise ConfigurationError("need at least three epsilon values for a rate")
    if np.any(np.diff(eps) >= 0) or np.any(eps <= 0):
        raise ConfigurationError("epsilon list must be positive and strictly decreasing")

    def field_on(g):
        if callable(initial):
            return Field1D(g, np.asarray(initial(g.centers), dtype=float))
        if g.cells == initial.grid.cells:
            return initial.copy()
        vals = initial.values
        return Field1D(g, 0.5 * (vals[0::2] + vals[1::2]))

    u0 = field_on(grid)
    e_eq, e_par = _study_once(model, u0, eps, t_end, cfl, diffusion_number, order, workers)
    result = ConvergenceResult(eps, e_eq, e_par, grid.cells)
    if refine_check:
        coarse_grid = grid.coarsened()
        c_eq, c_par = _study_once(model, field_on(coarse_grid), eps, t_end, cfl,
                                  diffusion_number, order, workers)
        coarse = ConvergenceResult(eps, c_eq, c_par, coarse_grid.cells)
        result.coarse = coarse
        shares = np.concatenate([np.abs(c_eq - e_eq) / (3 * e_eq), np.abs(c_par - e_par) / (3 * e_par)])
        result.spatial_share = float(shares.max())
        if result.spatial_share > spatial_share_limit:
            result.inconclusive = True
            result.notes.append(f"spatial error share {result.spatial_share:.3f} exceeds "
                                f"{spatial_share_limit} ({coarse_grid.cells} vs {grid.cells} cells)")
    return result

"""Sampling-based checks of the conservation-dissipation conditions."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (CdfModel, ConfigurationError, QuasilinearSystem, max_eig_sym,
                   min_eig_sym, spectral_norm)

CONCAVITY_MARGIN = 1e-10
PD_MARGIN = 1e-12
SYMMETRY_TOL_FD = 1e-5
SYMMETRY_TOL_ANALYTIC = 1e-10


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst_violation: float
    witness: Optional[np.ndarray]
    tolerance: float
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "worst_violation": float(self.worst_violation),
            "witness": None if self.witness is None else [float(x) for x in self.witness],
            "tolerance": float(self.tolerance),
        }


def _result(name, violations, states, tolerance, details=None):
    """Reduce per-sample violations (larger is worse) to a CheckResult."""
    violations = np.asarray(violations, dtype=float)
    i = int(np.argmax(violations))
    worst = float(violations[i])
    return CheckResult(name, worst <= tolerance, worst, np.array(states[i], dtype=float),
                       float(tolerance), details or {})


@dataclass
class VerificationReport:
    model_name: str
    sample_count: int
    seed: int
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"model": self.model_name, "seed": self.seed, "samples": self.sample_count,
                "passed": bool(self.passed),
                "checks": [c.to_dict() for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


class StateSampler:
    """Uniform rejection sampler over a box.

    The box may live in other coordinates (e.g. primitive variables) with
    ``transform`` mapping samples to model states.  ``accept`` filters the
    transformed states; by default nothing is rejected.
    """

    def __init__(self, lo, hi, seed: int = 0, transform: Optional[Callable] = None,
                 accept: Optional[Callable] = None, max_batches: int = 200):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if self.lo.shape != self.hi.shape or np.any(self.hi < self.lo):
            raise ConfigurationError("sampling box needs matching lower <= upper bounds")
        self.seed = int(seed)
        self.transform = transform
        self.accept = accept
        self.max_batches = max_batches

    @classmethod
    def for_model(cls, model, seed: int = 0, conserved: bool = False, box=None):
        box = box if box is not None else (model.conserved_box if conserved else model.state_box)
        if box is None:
            raise ConfigurationError(f"model {model.name} declares no sampling box")
        lo, hi, *rest = box
        transform = rest[0] if rest else None
        if conserved:
            return cls(lo, hi, seed, transform, accept=None)
        return cls(lo, hi, seed, transform, accept=model.is_admissible)

    def sample(self, count: int) -> np.ndarray:
        if count < 1:
            raise ConfigurationError(f"sample count must be >= 1, got {count}")
        rng = np.random.default_rng(self.seed)
        got = []
        total = 0
        for _ in range(self.max_batches):
            raw = self.lo + (self.hi - self.lo) * rng.random((count, self.lo.size))
            states = self.transform(raw) if self.transform is not None else raw
            if self.accept is not None:
                states = states[np.asarray(self.accept(states), dtype=bool)]
            got.append(states)
            total += len(states)
            if total >= count:
                return np.concatenate(got)[:count]
        raise ConfigurationError(
            f"sampler exhausted: only {total} admissible states after {self.max_batches} batches")


def _states(sampler, count, extra_states):
    S = sampler.sample(count)
    if extra_states is not None:
        S = np.concatenate([S, np.atleast_2d(np.asarray(extra_states, dtype=float))])
    return S


def rel_asymmetry(S) -> np.ndarray:
    """max|S - S^T| / max|S| per matrix (0 for the zero matrix)."""
    S = np.asarray(S, dtype=float)
    num = np.max(np.abs(S - np.swapaxes(S, -1, -2)), axis=(-2, -1))
    den = np.max(np.abs(S), axis=(-2, -1))
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def check_entropy_concavity(model, sampler: StateSampler, count: int,
                            margin: float = CONCAVITY_MARGIN, extra_states=None) -> CheckResult:
    """Largest Hessian eigenvalue must stay below ``-margin``."""
    U = _states(sampler, count, extra_states)
    lam = max_eig_sym(model.hess_entropy(U))
    return _result("entropy_concavity", lam, U, -margin)


def check_flux_symmetry(model: CdfModel, sampler: StateSampler, count: int,
                        tolerance: Optional[float] = None, extra_states=None) -> CheckResult:
    if tolerance is None:
        tolerance = SYMMETRY_TOL_ANALYTIC if model.has_analytic else SYMMETRY_TOL_FD
    U = _states(sampler, count, extra_states)
    H = model.hess_entropy(U)
    viol = np.zeros(len(U))
    for j in range(model.dims.n_space):
        viol = np.maximum(viol, rel_asymmetry(H @ model.jac_flux(U, j)))
    return _result("flux_symmetry", viol, U, tolerance)


def check_dissipation_pd(model: CdfModel, sampler: StateSampler, count: int,
                         margin: float = PD_MARGIN, extra_states=None) -> CheckResult:
    U = _states(sampler, count, extra_states)
    lam = min_eig_sym(model.dissipation(U))
    return _result("dissipation_pd", -lam, U, -margin, {"min_eigenvalue": float(np.min(lam))})


def check_entropy_production(model: CdfModel, sampler: StateSampler, count: int,
                             tolerance: float = 1e-8, extra_states=None) -> CheckResult:
    """Chain sigma = eta_U.Q = eta_v.M eta_v >= lam|eta_v|^2 >= lam/|M|^2 |Q|^2.

    Slacks are scaled by max(1, sigma); the violation is the most negative
    scaled slack, plus any mismatch between the two forms of sigma.
    """
    U = _states(sampler, count, extra_states)
    grad = model.grad_entropy(U)
    ev = grad[..., model.n:]
    M = np.asarray(model.dissipation(U), dtype=float)
    Q = model.source(U)
    sigma_full = np.einsum("...i,...i->...", grad, Q)
    sigma = np.einsum("...i,...ij,...j->...", ev, M, ev)
    lam = min_eig_sym(M)
    normM = spectral_norm(M)
    q = Q[..., model.n:]
    mid = lam * np.sum(ev * ev, axis=-1)
    low = lam / normM ** 2 * np.sum(q * q, axis=-1)
    scale = np.maximum(1.0, np.abs(sigma))
    viol = np.maximum.reduce([
        (mid - sigma) / scale,
        (low - mid) / scale,
        np.abs(sigma_full - sigma) / scale,
    ])
    return _result("entropy_production", viol, U, tolerance,
                   {"min_sigma": float(np.min(sigma))})


def check_symmetrizer(system: QuasilinearSystem, sampler: StateSampler, count: int,
                      tolerance: float = SYMMETRY_TOL_FD, extra_states=None) -> CheckResult:
    """Does -eta_UU symmetrize every A_j?"""
    U = _states(sampler, count, extra_states)
    H = system.hess_entropy(U)
    viol = np.zeros(len(U))
    for j in range(system.dims.n_space):
        S = H @ system.coeff_A(U, j)
        viol = np.maximum(viol, rel_asymmetry(S))
    res = _result("symmetrizer", viol, U, tolerance)
    S_w = H[np.argmax(viol)] @ system.coeff_A(res.witness, 0)
    D = np.abs(S_w - S_w.T)
    worst_entry = tuple(int(i) for i in np.unravel_index(np.argmax(D), D.shape))
    res.details["worst_entry"] = worst_entry
    return res


def check_source_dissipation(system, sampler: StateSampler, count: int,
                             extra_states=None) -> CheckResult:
    """Entropy production eta_U . S(U) must be non-negative."""
    U = _states(sampler, count, extra_states)
    sigma = np.einsum("...i,...i->...", system.grad_entropy(U), system.source(U))
    return _result("source_dissipation", -sigma, U, 0.0, {"min_sigma": float(np.min(sigma))})


def verify_model(model, count: int = 1000, seed: int = 0, symmetry_tolerance=None,
                 production_tolerance: float = 1e-8) -> VerificationReport:
    """Run every applicable check on a model's declared box."""
    sampler = StateSampler.for_model(model, seed=seed)
    if isinstance(model, QuasilinearSystem):
        checks = [
            check_entropy_concavity(model, sampler, count),
            check_symmetrizer(model, sampler, count),
        ]
        if model.source is not None:
            checks.append(check_source_dissipation(model, sampler, count))
    else:
        checks = [
            check_entropy_concavity(model, sampler, count),
            check_flux_symmetry(model, sampler, count, tolerance=symmetry_tolerance),
            check_dissipation_pd(model, sampler, count),
            check_entropy_production(model, sampler, count, tolerance=production_tolerance),
        ]
    return VerificationReport(model.name, count, seed, checks)

import numpy as np
import pytest

from cdf_forge.core import CdfModel, ModelDims
from cdf_forge.models import make_porous_media, make_telegraph


def custom_model(entropy, flux_f, flux_g, dissipation, n=1, r=1, name="custom",
                 admissible=None, box=None):
    """Plain CdfModel from callables; derivatives come from finite differences."""
    return CdfModel(
        name=name, dims=ModelDims(n, r, 1), flux_f=lambda U, j=0: flux_f(U),
        flux_g=lambda U, j=0: flux_g(U), entropy=entropy, dissipation=dissipation,
        admissible=admissible or (lambda U: np.ones(np.shape(U)[:-1], dtype=bool)),
        state_box=box)


def constant_matrix(M):
    M = np.asarray(M, dtype=float)
    return lambda U: np.broadcast_to(M, np.shape(U)[:-1] + M.shape).copy()


def convexified(model):
    """Mutation: flip the sign of the entropy (and its derivatives)."""
    return model.replace(
        name=model.name + "+convex", entropy=lambda U: -model.entropy(U),
        entropy_grad=lambda U: -model.grad_entropy(U),
        entropy_hess=lambda U: -model.hess_entropy(U))


def indefinite_m(model):
    """Mutation: dissipation with a negative eigenvalue."""
    r = model.r
    D = -np.eye(r)
    return model.replace(name=model.name + "+indefM",
                         dissipation=lambda U: np.broadcast_to(D, np.shape(U)[:-1] + (r, r)).copy())


def perturbed_g(model, scale=0.3):
    """Mutation: add u^3 to the dissipative flux, breaking condition (i)."""
    def flux_g(U, j=0):
        out = np.array(model.flux_g(U, j), dtype=float)
        out[..., 0] += scale * U[..., 0] ** 3
        return out
    return model.replace(name=model.name + "+pertg", flux_g=flux_g, flux_jac=None)


@pytest.fixture
def telegraph():
    return make_telegraph(1.0)


@pytest.fixture
def porous():
    return make_porous_media()

"""Energies, virials and their time derivatives for hierarchy states.

Each functional has a closed form on product mixtures, in one-particle
integrals, and a dense form on truncations used for cross-validation.
"""

import re
from dataclasses import dataclass
from functools import partial

import numpy as np

from gplab.errors import DomainError, InvariantError
from gplab.hierarchy.collision import apply_B_half, apply_Q_half, interaction_trace_mixture
from gplab.hierarchy.norms import (
    hierarchy_hs_quasinorm,
    kernel_hs_norm,
    level_key,
    mixture_hs_norm,
    trace_norm_k,
    trace_quasinorm,
)
from gplab.hierarchy.state import HierarchyTruncation, ProductMixture, apply_axis_symbol
from gplab.nls.engine import check_mu, check_power
from gplab.spectral.grid import (
    Field,
    gradient,
    gradient_symbol,
    kinetic_laplacian,
    kinetic_pairing,
    laplacian_symbol,
    quadrature_inner,
)

KINETIC_TOL = 1e-10

# d^2/dt^2 V_k = 16 kinetic + VIRIAL_COUPLING * n * mu * interaction
VIRIAL_COUPLING = {1: 2.0, 2: 8.0 / 3.0}


@dataclass(frozen=True)
class EnergyReport:
    """E_k = kinetic + mu/(2 sigma + 2) * interaction.

    ``kinetic`` is half the summed gradient pairing over the k particles and
    ``interaction`` the summed diagonal trace of the plus collision terms.
    """

    k: int
    kinetic: float
    interaction: float
    total: float
    form_used: str
    kinetic_laplacian: float

    @property
    def kinetic_defect(self):
        return abs(self.kinetic - self.kinetic_laplacian)


def as_state(state):
    if isinstance(state, Field):
        return ProductMixture.single(state)
    if isinstance(state, (ProductMixture, HierarchyTruncation)):
        return state
    raise DomainError("expected a Field, ProductMixture or HierarchyTruncation, got {}".format(type(state).__name__))


def _level_weights(mix, k):
    """w_r ||phi_r||^{2(k-1)}"""
    return mix.weights * mix.masses() ** (k - 1)


def _check_level(k):
    if k < 1:
        raise DomainError("level must be >= 1, got {}".format(k))


def _dense_kinetic(g):
    """(1/2 sum_j Tr[grad_j . grad'_j g], 1/2 sum_j Tr[-Laplacian_j g])."""
    pairing, laplacian = 0.0, 0.0
    for j in range(g.order):
        d = apply_axis_symbol(g, gradient_symbol(0), j)
        d = apply_axis_symbol(d, gradient_symbol(0), g.order + j)
        pairing += d.trace().real
        laplacian -= apply_axis_symbol(g, laplacian_symbol(), j).trace().real
    return 0.5 * pairing, 0.5 * laplacian


def _dense_interaction(state, k, sigma):
    source_order = k + sigma
    if source_order > state.depth:
        raise DomainError(
            "interaction at level {} needs level {}, truncation has depth {}".format(k, source_order, state.depth)
        )
    half = apply_B_half if sigma == 1 else apply_Q_half
    g = state.level(source_order)
    return sum(half(g, j, "+").trace().real for j in range(1, k + 1))


def kinetic_terms(state, k):
    state = as_state(state)
    _check_level(k)
    if isinstance(state, HierarchyTruncation):
        return _dense_kinetic(state.level(k))
    lw = _level_weights(state, k)
    pairing = np.array([kinetic_pairing(f) for f in state.fields])
    laplacian = np.array([kinetic_laplacian(f) for f in state.fields])
    return 0.5 * k * float(lw @ pairing), 0.5 * k * float(lw @ laplacian)


def interaction_term(state, k, power):
    state = as_state(state)
    sigma = check_power(power)
    if isinstance(state, HierarchyTruncation):
        return _dense_interaction(state, k, sigma)
    return k * interaction_trace_mixture(state, k, power)


def energy(state, k, mu, power):
    """E_k of a mixture (closed form) or of a dense truncation.

    Raises ``InvariantError`` when the gradient-pairing and Laplacian kinetic
    terms disagree.
    """
    state = as_state(state)
    mu = check_mu(mu, allow_zero=True)
    sigma = check_power(power)
    kinetic, kinetic_lap = kinetic_terms(state, k)
    if abs(kinetic - kinetic_lap) > KINETIC_TOL * max(1.0, abs(kinetic)):
        raise InvariantError(
            "kinetic-form-identity",
            "gradient pairing {:.16g} vs Laplacian {:.16g} at level {}".format(kinetic, kinetic_lap, k),
        )
    interaction = interaction_term(state, k, power)
    total = kinetic + mu / (2.0 * sigma + 2.0) * interaction
    return EnergyReport(k, kinetic, interaction, total, "gradient_pairing", kinetic_lap)


def _axis_shape(ndim, axis, size):
    shape = [1] * ndim
    shape[axis] = size
    return shape


def _second_moment(f):
    return float(f.grid.cell_volume * np.sum(f.grid.radius_squared() * np.abs(f.values) ** 2))


def _current_moment(f):
    """4 Im int conj(phi) x . grad phi"""
    coords = f.grid.coords()
    flux = sum(quadrature_inner(f, Field(f.grid, x * d.values)) for x, d in zip(coords, gradient(f)))
    return 4.0 * flux.imag


def virial(state, k):
    """V_k = Tr[|x_k|^2 gamma^(k)]."""
    state = as_state(state)
    _check_level(k)
    if isinstance(state, HierarchyTruncation):
        g = state.level(k)
        x2 = g.grid.axis() ** 2
        weight = sum(x2.reshape(_axis_shape(k, j, x2.size)) for j in range(k))
        return float(g.cell_volume * np.sum(weight * g.diagonal()).real)
    moments = np.array([_second_moment(f) for f in state.fields])
    return k * float(_level_weights(state, k) @ moments)


def virial_dt(state, k):
    """d/dt V_k from the current moment of each particle."""
    state = as_state(state)
    _check_level(k)
    if isinstance(state, HierarchyTruncation):
        g = state.level(k)
        x = g.grid.axis()
        total = 0.0
        for j in range(k):
            d = apply_axis_symbol(g, gradient_symbol(0), j).diagonal()
            total += g.cell_volume * np.sum(x.reshape(_axis_shape(k, j, x.size)) * d)
        return 4.0 * float(np.imag(total))
    moments = np.array([_current_moment(f) for f in state.fields])
    return k * float(_level_weights(state, k) @ moments)


def virial_rhs(state, k, mu, power):
    """d^2/dt^2 V_k: 8 sum_j Tr[-Laplacian_j gamma] + c n mu (interaction), c = 2 or 8/3."""
    state = as_state(state)
    mu = check_mu(mu, allow_zero=True)
    sigma = check_power(power)
    kinetic, _ = kinetic_terms(state, k)
    interaction = interaction_term(state, k, power)
    return 16.0 * kinetic + VIRIAL_COUPLING[sigma] * state.grid.dim * mu * interaction


def virial_excess(state, k, mu, power):
    """virial_rhs - 16 E_k; non-positive for focusing states when the Glassey argument applies."""
    return virial_rhs(state, k, mu, power) - 16.0 * energy(state, k, mu, power).total


def laplacian_trace(state, k):
    """Tr[-Laplacian_{x_1} gamma^(k)]."""
    state = as_state(state)
    _check_level(k)
    if isinstance(state, HierarchyTruncation):
        return -apply_axis_symbol(state.level(k), laplacian_symbol(), 0).trace().real
    kinetic = np.array([kinetic_laplacian(f) for f in state.fields])
    return float(_level_weights(state, k) @ kinetic)


def hardy_product(traj, k):
    """Tr[-Laplacian_{x_1} gamma^(k)(t)] * V_k(t) per sample."""
    if not traj.has_states:
        raise DomainError("hardy_product needs a trajectory with states")
    return np.array([laplacian_trace(s, k) * virial(s, k) for s in traj.states])


def mass(state):
    state = as_state(state)
    if isinstance(state, HierarchyTruncation):
        return state.level(1).trace().real
    return float(state.weights @ state.masses())


def _level_norm(state, k, s):
    state = as_state(state)
    if isinstance(state, HierarchyTruncation):
        return kernel_hs_norm(state.level(k), s)
    return mixture_hs_norm(state, k, s)


def _trace_norm(state, k):
    state = as_state(state)
    if isinstance(state, HierarchyTruncation):
        return trace_norm_k(state.level(k))
    return trace_norm_k(state, k)


def _energy_total(state, k, mu, power):
    return energy(state, k, mu, power).total


def _hs_quasinorm(state, s, levels):
    return hierarchy_hs_quasinorm(as_state(state), s, levels)


def _trace_quasinorm(state, levels):
    return trace_quasinorm(as_state(state), levels)


def _hardy(state, k):
    return laplacian_trace(state, k) * virial(state, k)


_LEVELLED = re.compile(r"^(E|V|Vdot|Vddot|trace_norm|hardy)_(\d+)$")
_HS_NORM = re.compile(r"^norm_H([0-9.]+)$")
_LEVEL_NORM = re.compile(r"^a(\d+)_H([0-9.]+)$")

DIAGNOSTIC_NAMES = (
    "mass",
    "E_<k>",
    "V_<k>",
    "Vdot_<k>",
    "Vddot_<k>",
    "trace_norm_<k>",
    "hardy_<k>",
    "norm_H<s>",
    "a<k>_H<s>",
    "trace_quasinorm",
)


def diagnostic(name, mu, power, levels=None):
    """Picklable callable state -> float for a diagnostic name."""
    if name == "mass":
        return mass
    if name == "trace_quasinorm":
        return partial(_trace_quasinorm, levels=levels)
    match = _LEVELLED.match(name)
    if match:
        kind, k = match.group(1), int(match.group(2))
        if k < 1:
            raise DomainError("diagnostic {} needs a level >= 1".format(name))
        return {
            "E": partial(_energy_total, k=k, mu=mu, power=power),
            "V": partial(virial, k=k),
            "Vdot": partial(virial_dt, k=k),
            "Vddot": partial(virial_rhs, k=k, mu=mu, power=power),
            "trace_norm": partial(_trace_norm, k=k),
            "hardy": partial(_hardy, k=k),
        }[kind]
    match = _HS_NORM.match(name)
    if match:
        return partial(_hs_quasinorm, s=float(match.group(1)), levels=levels)
    match = _LEVEL_NORM.match(name)
    if match:
        k, s = int(match.group(1)), float(match.group(2))
        if level_key(k, s) != name:
            raise DomainError("diagnostic {!r} should be written {!r}".format(name, level_key(k, s)))
        return partial(_level_norm, k=k, s=s)
    raise DomainError("unknown diagnostic {!r}; available: {}".format(name, ", ".join(DIAGNOSTIC_NAMES)))


def diagnostics_for(names, mu, power, levels=None):
    return {name: diagnostic(name, mu, power, levels) for name in names}


def required_level(name, power):
    """Highest hierarchy level diagnostic ``name`` reads; None when it reads every stored level."""
    sigma = check_power(power)
    if name == "mass":
        return 1
    match = _LEVELLED.match(name)
    if match:
        k = int(match.group(2))
        return k + sigma if match.group(1) in ("E", "Vddot") else k
    match = _LEVEL_NORM.match(name)
    if match:
        return int(match.group(1))
    return None

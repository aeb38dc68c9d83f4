"""Hierarchy states: dense marginal kernels and positive product mixtures.

A dense kernel of order k lives on a one-dimensional grid and is stored as a
tensor with axes (x_1, ..., x_k, x'_1, ..., x'_k). A product mixture stands for
every level at once: gamma^(k) = sum_r w_r prod_j phi_r(x_j) conj(phi_r(x'_j)).

Operators on the primed block act through conjugation, the way a one-particle
operator acts on conj(phi(x')).
"""

import itertools
import logging
from dataclasses import dataclass
from functools import reduce
from typing import Optional, Tuple

import numpy as np
import scipy.fft

from gplab.errors import BudgetError, DomainError
from gplab.spectral.grid import (
    FFT_WORKERS,
    Field,
    Grid,
    apply_multiplier,
    evaluate_symbol,
    quadrature_inner,
)

MAX_DENSE_ENTRIES = 2 ** 26

AXIS_LABELS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"


def check_budget(grid, order, what="DenseKernel"):
    if grid.dim != 1:
        raise DomainError("dense kernels are one-dimensional, grid has dim {}".format(grid.dim))
    if order < 1:
        raise DomainError("kernel order must be >= 1, got {}".format(order))
    required = grid.points ** (2 * order)
    if required > MAX_DENSE_ENTRIES:
        raise BudgetError(what, required, MAX_DENSE_ENTRIES)
    return required


@dataclass(frozen=True, eq=False)
class DenseKernel:
    order: int
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        check_budget(self.grid, self.order)
        values = np.array(self.values, dtype=np.complex128)
        shape = (self.grid.points,) * (2 * self.order)
        if values.shape != shape:
            raise DomainError("kernel of order {} needs shape {}, got {}".format(self.order, shape, values.shape))
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def ket_axes(self):
        return tuple(range(self.order))

    @property
    def bra_axes(self):
        return tuple(range(self.order, 2 * self.order))

    @property
    def cell_volume(self):
        return self.grid.spacing ** self.order

    def with_values(self, values):
        return DenseKernel(self.order, self.grid, values)

    def __add__(self, other):
        self._check_compatible(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        self._check_compatible(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar):
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__

    def _check_compatible(self, other):
        self.grid.check_same(other.grid)
        if self.order != other.order:
            raise DomainError("kernel orders differ: {} vs {}".format(self.order, other.order))

    def as_matrix(self):
        size = self.grid.points ** self.order
        return self.values.reshape(size, size)

    def conj_transpose(self):
        """gamma(x; x') -> conj(gamma(x'; x))."""
        axes = self.bra_axes + self.ket_axes
        return self.with_values(np.conj(np.transpose(self.values, axes)))

    def diagonal(self):
        labels = AXIS_LABELS[: self.order]
        return np.einsum("{0}{0}->{0}".format(labels), self.values)

    def trace(self):
        return complex(self.cell_volume * np.sum(self.diagonal()))

    def l2_norm(self):
        return float(np.sqrt(self.cell_volume ** 2 * np.sum(np.abs(self.values) ** 2)))

    def inner(self, other):
        self._check_compatible(other)
        return complex(self.cell_volume ** 2 * np.vdot(self.values, other.values))

    @classmethod
    def zeros(cls, grid, order):
        check_budget(grid, order)
        return cls(order, grid, np.zeros((grid.points,) * (2 * order), dtype=np.complex128))


def _axis_multiplier(values, table, axes):
    spectrum = scipy.fft.fftn(values, axes=axes, workers=FFT_WORKERS)
    for axis in axes:
        shape = [1] * values.ndim
        shape[axis] = table.size
        spectrum = spectrum * table.reshape(shape)
    return scipy.fft.ifftn(spectrum, axes=axes, workers=FFT_WORKERS)


def apply_kernel_symbol(g, symbol, ket=True, bra=True):
    """Apply the one-particle symbol on every ket axis and, by conjugation, every bra axis."""
    table = evaluate_symbol(symbol, g.grid).ravel()
    values = g.values
    if ket:
        values = _axis_multiplier(values, table, g.ket_axes)
    if bra:
        values = np.conj(_axis_multiplier(np.conj(values), table, g.bra_axes))
    return g.with_values(values)


def apply_axis_symbol(g, symbol, axis):
    """Apply a one-particle symbol to a single axis (bra axes via conjugation)."""
    table = evaluate_symbol(symbol, g.grid).ravel()
    if axis < g.order:
        return g.with_values(_axis_multiplier(g.values, table, (axis,)))
    return g.with_values(np.conj(_axis_multiplier(np.conj(g.values), table, (axis,))))


def free_flow(g, t):
    """e^{it Laplacian^(k)} acting on a dense kernel."""
    return apply_kernel_symbol(g, lambda p: np.exp(-1j * t * p[0] ** 2))


def factorized_kernel(phi, k):
    check_budget(phi.grid, k)
    vectors = [phi.values] * k + [np.conj(phi.values)] * k
    return DenseKernel(k, phi.grid, reduce(np.multiply.outer, vectors))


@dataclass(frozen=True, eq=False)
class ProductMixture:
    """Positive combination of factorized states, exact at every level."""

    components: Tuple[Tuple[float, Field], ...]

    def __post_init__(self):
        components = tuple((float(w), f) for w, f in self.components)
        if not components:
            raise DomainError("a product mixture needs at least one component")
        for index, (weight, field) in enumerate(components):
            if not weight > 0:
                raise DomainError("component {} has non-positive weight {}".format(index, weight))
            field.grid.check_same(components[0][1].grid)
        object.__setattr__(self, "components", components)

    @classmethod
    def single(cls, phi, weight=1.0):
        return cls(((weight, phi),))

    @property
    def grid(self):
        return self.components[0][1].grid

    @property
    def weights(self):
        return np.array([w for w, _ in self.components])

    @property
    def fields(self):
        return [f for _, f in self.components]

    def __len__(self):
        return len(self.components)

    def masses(self):
        return np.array([f.mass() for f in self.fields])

    def with_fields(self, fields):
        return ProductMixture(tuple(zip(self.weights, fields)))

    def scaled(self, factors):
        return ProductMixture(tuple((w * c, f) for (w, f), c in zip(self.components, factors)))

    def conj(self):
        return self.with_fields([f.conj() for f in self.fields])

    def gram(self, symbol=None):
        """Matrix of one-particle pairings <S phi_a, S phi_b>."""
        fields = self.fields if symbol is None else [apply_multiplier(f, symbol) for f in self.fields]
        n = len(fields)
        gram = np.empty((n, n), dtype=np.complex128)
        for a in range(n):
            for b in range(n):
                gram[a, b] = quadrature_inner(fields[a], fields[b])
        return gram


def materialize(mix, k, grid=None):
    if grid is not None:
        mix.grid.check_same(grid)
    check_budget(mix.grid, k)
    values = sum(w * factorized_kernel(f, k).values for w, f in mix.components)
    return DenseKernel(k, mix.grid, values)


@dataclass(frozen=True)
class ClosurePolicy:
    """How a truncated hierarchy supplies the levels above its top level."""

    kind: str = "zero"
    reference: Optional[ProductMixture] = None

    def __post_init__(self):
        if self.kind not in ("zero", "mixture_reference"):
            raise DomainError("unknown closure {!r}".format(self.kind))
        if self.kind == "mixture_reference" and self.reference is None:
            raise DomainError("mixture_reference closure needs a reference mixture")


@dataclass(frozen=True, eq=False)
class HierarchyTruncation:
    levels: Tuple[DenseKernel, ...]
    closure: ClosurePolicy = ClosurePolicy()

    def __post_init__(self):
        levels = tuple(self.levels)
        if not levels:
            raise DomainError("a truncation needs K >= 1 levels")
        for k, level in enumerate(levels, start=1):
            if level.order != k:
                raise DomainError("level {} holds a kernel of order {}".format(k, level.order))
            level.grid.check_same(levels[0].grid)
        if self.closure.reference is not None:
            self.closure.reference.grid.check_same(levels[0].grid)
        object.__setattr__(self, "levels", levels)

    @property
    def depth(self):
        return len(self.levels)

    @property
    def grid(self):
        return self.levels[0].grid

    def level(self, k):
        if not 1 <= k <= self.depth:
            raise DomainError("level {} unavailable in a truncation of depth {}".format(k, self.depth))
        return self.levels[k - 1]

    @classmethod
    def from_mixture(cls, mix, depth, closure="mixture_reference"):
        policy = ClosurePolicy(closure, mix if closure == "mixture_reference" else None)
        return cls(tuple(materialize(mix, k) for k in range(1, depth + 1)), policy)


def partial_trace(g):
    """h sum_y gamma(x, y; x', y): integrate out the last particle."""
    if g.order < 2:
        raise DomainError("partial trace needs order >= 2, got {}".format(g.order))
    k = g.order - 1
    ket, bra, y = AXIS_LABELS[:k], AXIS_LABELS[k : 2 * k], AXIS_LABELS[2 * k]
    values = g.grid.spacing * np.einsum("{0}{2}{1}{2}->{0}{1}".format(ket, bra, y), g.values)
    return DenseKernel(k, g.grid, values)


def admissibility_defect(state, k):
    """L^2 distance between the partial trace of level k+1 and level k."""
    if isinstance(state, HierarchyTruncation):
        if k + 1 > state.depth:
            raise DomainError("level {} unavailable in a truncation of depth {}".format(k + 1, state.depth))
        return (partial_trace(state.level(k + 1)) - state.level(k)).l2_norm()
    if k < 1:
        raise DomainError("level must be >= 1, got {}".format(k))
    c = state.weights * (state.masses() - 1.0)
    overlap = np.abs(state.gram()) ** (2 * k)
    return float(np.sqrt(max(c @ overlap @ c, 0.0)))


def _permuted(values, order, perm):
    axes = tuple(perm) + tuple(order + p for p in perm)
    return np.transpose(values, axes)


def symmetry_report(g):
    """(hermitian defect, permutation defect) in max norm."""
    hermitian = float(np.max(np.abs(g.values - g.conj_transpose().values)))
    permutation = 0.0
    for perm in itertools.permutations(range(g.order)):
        permutation = max(permutation, float(np.max(np.abs(g.values - _permuted(g.values, g.order, perm)))))
    return hermitian, permutation


def symmetrize(g):
    perms = list(itertools.permutations(range(g.order)))
    values = sum(_permuted(g.values, g.order, perm) for perm in perms) / len(perms)
    sym = g.with_values(values)
    return g.with_values(0.5 * (sym.values + sym.conj_transpose().values))


def random_kernel(grid, k, rng, positive=False, rank=None):
    """Random symmetric kernel; ``positive`` builds it from a Gram product."""
    check_budget(grid, k)
    size = grid.points ** k
    if positive:
        rank = rank or size
        x = rng.standard_normal((size, rank)) + 1j * rng.standard_normal((size, rank))
        values = (x @ x.conj().T) / rank
    else:
        values = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    g = symmetrize(DenseKernel(k, grid, values.reshape((grid.points,) * (2 * k))))
    logging.debug("[HierarchyState] random kernel order {} on {} points".format(k, grid.points))
    return g

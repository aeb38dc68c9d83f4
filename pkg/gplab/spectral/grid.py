"""Periodic spectral grids, Fourier multipliers and analytic reference fields.

The box is [-L, L)^n sampled with m points per axis. Momentum-space
coefficients are the discrete transform scaled by h^n, so that with the
momentum measure (2L)^-n position and momentum functionals agree without
hidden constants.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

from gplab.errors import DomainError, GridMismatchError, NonFiniteError, BudgetError

FFT_WORKERS = 1
MAX_GRID_POINTS = 2 ** 24
LATTICE_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    dim: int
    points: int
    halfwidth: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise DomainError("grid dimension must be 1, 2 or 3, got {}".format(self.dim))
        if self.points <= 0 or self.points % 2 != 0:
            raise DomainError("points per axis must be positive and even, got {}".format(self.points))
        if not self.halfwidth > 0:
            raise DomainError("halfwidth must be positive, got {}".format(self.halfwidth))
        if self.points ** self.dim > MAX_GRID_POINTS:
            raise BudgetError("Grid", self.points ** self.dim, MAX_GRID_POINTS)

    @property
    def spacing(self):
        return 2.0 * self.halfwidth / self.points

    @property
    def shape(self):
        return (self.points,) * self.dim

    @property
    def cell_volume(self):
        return self.spacing ** self.dim

    @property
    def momentum_measure(self):
        # dp^n / (2 pi)^n on the lattice
        return (2.0 * self.halfwidth) ** (-self.dim)

    @property
    def momentum_step(self):
        return np.pi / self.halfwidth

    def axis(self):
        return -self.halfwidth + self.spacing * np.arange(self.points)

    def momentum_axis(self):
        """Per-axis lattice momenta in FFT order."""
        return 2.0 * np.pi * scipy.fft.fftfreq(self.points, d=self.spacing)

    def coords(self):
        return _mesh(self.axis(), self.dim)

    def momenta(self):
        return _mesh(self.momentum_axis(), self.dim)

    def radius_squared(self):
        return sum(x ** 2 for x in self.coords())

    def momentum_squared(self):
        return sum(p ** 2 for p in self.momenta())

    def check_same(self, other):
        if self != other:
            raise GridMismatchError("grid mismatch: {} vs {}".format(self, other))


def _mesh(axis, dim):
    return np.meshgrid(*([axis] * dim), indexing="ij")


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.complex128)
        if values.shape != self.grid.shape:
            values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("field contains non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __mul__(self, scalar):
        return Field(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __add__(self, other):
        self.grid.check_same(other.grid)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other):
        self.grid.check_same(other.grid)
        return Field(self.grid, self.values - other.values)

    def conj(self):
        return Field(self.grid, np.conj(self.values))

    def mass(self):
        return quadrature_inner(self, self).real

    def norm(self):
        return np.sqrt(self.mass())

    def lp_norm(self, p):
        return (self.grid.cell_volume * np.sum(np.abs(self.values) ** p)) ** (1.0 / p)

    def sobolev_norm(self, s=1.0):
        return np.sqrt(quadrature_inner(self, apply_multiplier(self, sobolev_symbol(2.0 * s))).real)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape, dtype=np.complex128))


def forward(values, grid, axes=None):
    return grid.cell_volume * scipy.fft.fftn(values, axes=axes, workers=FFT_WORKERS)


def inverse(coefficients, grid, axes=None):
    return scipy.fft.ifftn(coefficients, axes=axes, workers=FFT_WORKERS) / grid.cell_volume


def momentum_inner(a, b, grid):
    return grid.momentum_measure * np.vdot(a, b)


def evaluate_symbol(symbol, grid):
    """Sample ``symbol`` on every lattice momentum of ``grid``.

    ``symbol`` is either a callable taking the tuple of per-axis momentum
    arrays, or an array already laid out in FFT order.
    """
    if callable(symbol):
        table = np.asarray(symbol(tuple(grid.momenta())), dtype=np.complex128)
        table = np.broadcast_to(table, grid.shape)
    else:
        table = np.broadcast_to(np.asarray(symbol, dtype=np.complex128), grid.shape)
    bad = ~np.isfinite(table)
    if np.any(bad):
        index = tuple(np.argwhere(bad)[0])
        momentum = [float(p[index]) for p in grid.momenta()]
        raise NonFiniteError("symbol is not finite at momentum {}".format(momentum))
    return table


def apply_multiplier(f, symbol):
    table = evaluate_symbol(symbol, f.grid)
    return Field(f.grid, inverse(table * forward(f.values, f.grid), f.grid))


def quadrature_inner(f, g):
    f.grid.check_same(g.grid)
    return complex(f.grid.cell_volume * np.vdot(f.values, g.values))


def sobolev_symbol(s):
    """(1 + |p|^2)^(s/2)"""
    return lambda p: (1.0 + sum(pi ** 2 for pi in p)) ** (0.5 * s)


def free_symbol(t):
    """Symbol of the free propagator e^{it Laplacian}."""
    return lambda p: np.exp(-1j * t * sum(pi ** 2 for pi in p))


def laplacian_symbol():
    return lambda p: -sum(pi ** 2 for pi in p)


def gradient_symbol(axis):
    return lambda p: 1j * p[axis]


def gradient(f):
    return [apply_multiplier(f, gradient_symbol(axis)) for axis in range(f.grid.dim)]


def kinetic_pairing(f):
    """||grad f||^2 through the gradient pairing."""
    return sum(quadrature_inner(d, d).real for d in gradient(f))


def kinetic_laplacian(f):
    """||grad f||^2 through <f, -Laplacian f>."""
    return -quadrature_inner(f, apply_multiplier(f, laplacian_symbol())).real


def check_on_lattice(momentum, grid):
    momentum = np.atleast_1d(np.asarray(momentum, dtype=float))
    if momentum.shape != (grid.dim,):
        raise DomainError("momentum {} does not match dimension {}".format(momentum, grid.dim))
    modes = momentum / grid.momentum_step
    if np.any(np.abs(modes - np.round(modes)) > LATTICE_TOL):
        raise DomainError(
            "momentum {} is off the lattice (step {:.6g})".format(list(momentum), grid.momentum_step)
        )
    modes = np.round(modes)
    if np.any(modes < -grid.points // 2) or np.any(modes > grid.points // 2 - 1):
        raise DomainError("momentum {} is outside the resolved band".format(list(momentum)))
    return momentum


def _gaussian(grid, center=0.0, width=1.0, amplitude=1.0, chirp=0.0, momentum=0.0):
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    momentum = np.broadcast_to(np.asarray(momentum, dtype=float), (grid.dim,))
    coords = grid.coords()
    r2 = sum((x - c) ** 2 for x, c in zip(coords, center))
    phase = chirp * r2 + sum(k * x for k, x in zip(momentum, coords))
    norm = (2.0 / (np.pi * width ** 2)) ** (grid.dim / 4.0)
    return amplitude * norm * np.exp(-r2 / width ** 2 + 1j * phase)


def _plane_wave(grid, momentum=0.0, amplitude=1.0):
    momentum = check_on_lattice(np.broadcast_to(np.asarray(momentum, dtype=float), (grid.dim,)), grid)
    return amplitude * np.exp(1j * sum(k * x for k, x in zip(momentum, grid.coords())))


def _soliton(grid, a=1.0):
    if grid.dim != 1:
        raise DomainError("soliton reference is one-dimensional")
    x = grid.axis()
    return np.sqrt(2.0) * a / np.cosh(a * x)


_REFERENCE_BUILDERS = {
    "gaussian": _gaussian,
    "plane_wave": _plane_wave,
    "soliton": _soliton,
}


def make_reference(kind, grid, **params):
    if kind not in _REFERENCE_BUILDERS:
        raise DomainError(
            "unknown reference kind {!r}; available: {}".format(kind, sorted(_REFERENCE_BUILDERS))
        )
    return Field(grid, _REFERENCE_BUILDERS[kind](grid, **params))


def random_smooth_field(grid, rng, components=3, max_width=1.5, min_width=0.6):
    """Random superposition of chirped, boosted Gaussians, well inside the box."""
    values = np.zeros(grid.shape, dtype=np.complex128)
    reach = 0.25 * grid.halfwidth
    for _ in range(components):
        values = values + _gaussian(
            grid,
            center=rng.uniform(-reach, reach, grid.dim),
            width=rng.uniform(min_width, max_width),
            amplitude=rng.uniform(0.3, 1.0) * np.exp(2j * np.pi * rng.uniform()),
            chirp=rng.uniform(-0.3, 0.3),
            momentum=rng.uniform(-1.0, 1.0, grid.dim),
        )
    return Field(grid, values)


@lru_cache(maxsize=32)
def free_phase_table(grid, t):
    table = evaluate_symbol(free_symbol(t), grid)
    table.setflags(write=False)
    return table

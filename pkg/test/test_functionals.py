import numpy as np
import pytest

from gplab.datasets.trajectory import TrajectoryRecord
from gplab.errors import DomainError
from gplab.hierarchy.functionals import (
    diagnostic,
    diagnostics_for,
    energy,
    hardy_product,
    interaction_term,
    kinetic_terms,
    laplacian_trace,
    mass,
    required_level,
    virial,
    virial_dt,
    virial_excess,
    virial_rhs,
)
from gplab.hierarchy.dynamics import evolve_mixture
from gplab.hierarchy.norms import kernel_hs_norm
from gplab.hierarchy.state import HierarchyTruncation, ProductMixture, free_flow, random_kernel
from gplab.nls.engine import StepController
from gplab.spectral.grid import Grid, make_reference, random_smooth_field

RNG = np.random.default_rng(0)
GRID = Grid(1, 256, 16.0)
SMALL = Grid(1, 12, 6.0)


@pytest.fixture
def gaussian():
    return make_reference("gaussian", GRID, width=1.0)


def _mixture(count=3):
    fields = [random_smooth_field(SMALL, RNG, min_width=1.0, max_width=2.0) for _ in range(count)]
    return ProductMixture(tuple(zip(RNG.uniform(0.2, 1.0, count), fields)))


def test_gaussian_energy_and_virial(gaussian):
    report = energy(gaussian, 1, 1, "cubic")
    assert report.kinetic == pytest.approx(0.5, rel=1e-10)
    assert report.interaction == pytest.approx(1.0 / np.sqrt(np.pi), rel=1e-10)
    assert report.total == pytest.approx(0.5 + 0.25 / np.sqrt(np.pi), rel=1e-10)
    assert report.kinetic_defect < 1e-12
    assert virial(gaussian, 1) == pytest.approx(0.25, rel=1e-10)
    assert virial_dt(gaussian, 1) == pytest.approx(0.0, abs=1e-12)


def test_chirped_gaussian_current():
    phi = make_reference("gaussian", GRID, width=1.0, chirp=0.3)
    assert virial_dt(phi, 1) == pytest.approx(0.6, rel=1e-10)


def test_quintic_gaussian_energy():
    phi = make_reference("gaussian", GRID, width=1.0, amplitude=2.0)
    e = energy(phi, 1, -1, "quintic").total
    assert e == pytest.approx(2.0 - 64.0 * 2.0 / (np.sqrt(3.0) * np.pi) / 6.0, rel=1e-10)
    assert e == pytest.approx(-1.921, abs=1e-3)


def test_level_scaling_of_factorized_energy():
    phi = make_reference("gaussian", GRID, width=1.0, amplitude=np.sqrt(2.0))
    e1 = energy(phi, 1, -1, "cubic").total
    assert energy(phi, 2, -1, "cubic").total == pytest.approx(2.0 * 2.0 * e1, rel=1e-10)
    assert virial(phi, 3) == pytest.approx(3.0 * 4.0 * virial(phi, 1), rel=1e-10)


@pytest.mark.parametrize("mu", [-1, 1])
def test_virial_excess(gaussian, mu):
    cubic = virial_excess(gaussian, 1, mu, "cubic")
    assert cubic == pytest.approx((2 * 1 - 4) * mu * interaction_term(gaussian, 1, "cubic"), rel=1e-10)
    assert virial_excess(gaussian, 2, mu, "quintic") == pytest.approx(0.0, abs=1e-10)


def test_virial_rhs_of_free_gaussian(gaussian):
    assert virial_rhs(gaussian, 1, 0, "cubic") == pytest.approx(8.0, rel=1e-10)


@pytest.mark.parametrize("power", ["cubic", "quintic"])
def test_dense_and_mixture_functionals_agree(power):
    mix = _mixture()
    dense = HierarchyTruncation.from_mixture(mix, 3)
    for k in (1, 2, 3):
        assert virial(dense, k) == pytest.approx(virial(mix, k), rel=1e-9)
        assert virial_dt(dense, k) == pytest.approx(virial_dt(mix, k), rel=1e-9, abs=1e-12)
        assert laplacian_trace(dense, k) == pytest.approx(laplacian_trace(mix, k), rel=1e-9)
    top = 2 if power == "cubic" else 1
    for k in range(1, top + 1):
        assert energy(dense, k, -1, power).total == pytest.approx(energy(mix, k, -1, power).total, rel=1e-9)
        assert virial_rhs(dense, k, -1, power) == pytest.approx(virial_rhs(mix, k, -1, power), rel=1e-9)
    assert mass(dense) == pytest.approx(mass(mix), rel=1e-12)


def test_dense_kinetic_forms_agree():
    levels = (random_kernel(SMALL, 1, RNG), random_kernel(SMALL, 2, RNG))
    pairing, laplacian = kinetic_terms(HierarchyTruncation(levels), 2)
    assert pairing == pytest.approx(laplacian, rel=1e-10)


def test_dense_interaction_needs_the_source_level():
    dense = HierarchyTruncation.from_mixture(_mixture(), 2)
    with pytest.raises(DomainError):
        energy(dense, 2, -1, "cubic")


def test_hardy_product(gaussian):
    traj = TrajectoryRecord(times=[0.0, 0.1], states=(gaussian, gaussian * 2.0))
    np.testing.assert_allclose(hardy_product(traj, 1), [0.25, 16.0 * 0.25], rtol=1e-10)
    with pytest.raises(DomainError):
        hardy_product(TrajectoryRecord(times=[0.0]), 1)


def test_diagnostic_registry(gaussian):
    fns = diagnostics_for(["mass", "E_1", "V_1", "norm_H1", "a2_H1", "trace_norm_1"], 1, "cubic")
    assert fns["mass"](gaussian) == pytest.approx(1.0, rel=1e-12)
    assert fns["norm_H1"](gaussian) == pytest.approx(4.0, rel=1e-9)
    assert fns["a2_H1"](gaussian) == pytest.approx(4.0, rel=1e-9)
    assert fns["trace_norm_1"](gaussian) == pytest.approx(2.0, rel=1e-10)
    with pytest.raises(DomainError, match="available"):
        diagnostic("entropy", 1, "cubic")
    with pytest.raises(DomainError, match="a1_H1"):
        diagnostic("a1_H1.0", 1, "cubic")
    with pytest.raises(DomainError):
        diagnostic("V_0", 1, "cubic")


def test_required_level():
    assert required_level("E_2", "quintic") == 4
    assert required_level("Vddot_1", "cubic") == 2
    assert required_level("a3_H1", "cubic") == 3
    assert required_level("mass", "cubic") == 1
    assert required_level("norm_H1", "cubic") is None


@pytest.mark.parametrize("k", [1, 2])
def test_virial_dt_matches_finite_difference(k):
    heavy = make_reference("gaussian", GRID, center=-1.0, width=1.0, chirp=0.3, amplitude=1.2)
    light = make_reference("gaussian", GRID, center=1.5, width=1.5, momentum=0.5)
    mix = ProductMixture(((0.6, heavy), (0.4, light)))
    h = 5e-4
    traj = evolve_mixture(mix, -1, "cubic", StepController(dt=1e-4), 2 * h, h, diagnostics=())
    before, middle, after = traj.states
    slope = (virial(after, k) - virial(before, k)) / (2 * h)
    assert virial_dt(middle, k) == pytest.approx(slope, rel=1e-5, abs=1e-6)


@pytest.mark.parametrize("k", [1, 2])
def test_hs_norm_is_invariant_under_free_flow(k):
    g = random_kernel(SMALL, k, RNG)
    for s in (0.0, 1.0, 2.0):
        for t in (0.37, -1.2):
            assert kernel_hs_norm(free_flow(g, t), s) == pytest.approx(kernel_hs_norm(g, s), rel=1e-12)

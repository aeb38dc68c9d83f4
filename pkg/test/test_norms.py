import numpy as np
import pytest
import scipy.integrate
from hypothesis import given, settings, strategies as st

from gplab.datasets.trajectory import TrajectoryRecord
from gplab.errors import DomainError
from gplab.hierarchy.dynamics import evolve_mixture, mixture_source
from gplab.hierarchy.norms import (
    NormSequence,
    c_seq_quasinorm,
    collision_l1t_quasinorm,
    collision_level_norms,
    hierarchy_hs_quasinorm,
    kernel_hs_norm,
    l1t_seq_quasinorm,
    level_integrals,
    level_key,
    mixture_collision_hs_norm,
    mixture_hs_norm,
    seq_quasinorm,
    trace_norm_k,
    trace_quasinorm,
    xi_norm,
)
from gplab.hierarchy.state import DenseKernel, HierarchyTruncation, ProductMixture, materialize, random_kernel
from gplab.nls.engine import StepController
from gplab.spectral.grid import (
    Field,
    Grid,
    apply_multiplier,
    make_reference,
    quadrature_inner,
    random_smooth_field,
    sobolev_symbol,
)

RNG = np.random.default_rng(0)
GRID = Grid(1, 12, 6.0)

levels = st.lists(st.one_of(st.just(0.0), st.floats(min_value=1e-6, max_value=1e3)), min_size=1, max_size=6)


def _mixture(count=3):
    fields = [random_smooth_field(GRID, RNG, min_width=1.0, max_width=2.0) for _ in range(count)]
    return ProductMixture(tuple(zip(RNG.uniform(0.2, 1.0, count), fields)))


def test_zero_sequence():
    assert seq_quasinorm(NormSequence((0.0, 0.0))) == 0.0


def test_single_level():
    assert seq_quasinorm(NormSequence((3.5,))) == pytest.approx(3.5, rel=1e-12)


def test_geometric_sequence():
    c = 1.7
    a = NormSequence.fitted([c, c ** 2, c ** 3])
    assert a.ratio == pytest.approx(c)
    assert seq_quasinorm(a) == pytest.approx(2.0 * c, rel=1e-12)


def test_not_homogeneous():
    a = NormSequence((1.0, 1.0))
    assert seq_quasinorm(a) == pytest.approx((1.0 + np.sqrt(5.0)) / 2.0, rel=1e-12)
    assert seq_quasinorm(a.scaled(2.0)) == pytest.approx(1.0 + np.sqrt(3.0), rel=1e-12)


@given(a=levels, b=levels)
@settings(max_examples=200, deadline=None)
def test_triangle_inequality(a, b):
    depth = min(len(a), len(b))
    x, y = NormSequence(a[:depth]), NormSequence(b[:depth])
    assert seq_quasinorm(x + y) <= (seq_quasinorm(x) + seq_quasinorm(y)) * (1.0 + 1e-12) + 1e-300


@given(a=levels, c=st.floats(min_value=1e-3, max_value=1e3))
@settings(max_examples=200, deadline=None)
def test_scaling_bound(a, c):
    x = NormSequence(a)
    assert seq_quasinorm(x.scaled(c)) <= max(1.0, c) * seq_quasinorm(x) * (1.0 + 1e-12) + 1e-300


def test_tails_must_match_to_add():
    with pytest.raises(DomainError):
        NormSequence((1.0, 2.0), 2.0) + NormSequence((1.0, 3.0), 3.0)


def test_sequence_validation():
    with pytest.raises(DomainError):
        NormSequence(())
    with pytest.raises(DomainError):
        NormSequence((1.0, -1.0))


def test_xi_norm():
    a = NormSequence((1.0, 2.0))
    assert xi_norm(a, 0.5) == pytest.approx(0.5 + 0.5)
    with pytest.raises(DomainError):
        xi_norm(a, 1.0)
    with pytest.raises(DomainError):
        xi_norm(NormSequence((1.0, 4.0), 4.0), 0.5)


@pytest.mark.parametrize("s", [0.0, 1.0, 2.0])
def test_factorized_quasinorm(s):
    phi = random_smooth_field(Grid(1, 128, 16.0), RNG)
    expected = 2.0 * phi.sobolev_norm(s) ** 2
    assert hierarchy_hs_quasinorm(ProductMixture.single(phi), s) == pytest.approx(expected, rel=1e-9)


def test_factorized_trace_quasinorm():
    phi = random_smooth_field(Grid(1, 128, 16.0), RNG)
    expected = 2.0 * phi.sobolev_norm(1.0) ** 2
    assert trace_quasinorm(ProductMixture.single(phi)) == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_dense_and_mixture_norms_agree(k):
    mix = _mixture()
    dense = materialize(mix, k)
    for s in (0.0, 1.0):
        assert kernel_hs_norm(dense, s) == pytest.approx(mixture_hs_norm(mix, k, s), rel=1e-9)
    assert trace_norm_k(dense) == pytest.approx(trace_norm_k(mix, k), rel=1e-9)


def test_trace_norm_needs_hermitian_kernel():
    values = RNG.standard_normal((GRID.points, GRID.points))
    with pytest.raises(DomainError):
        trace_norm_k(DenseKernel(1, GRID, np.triu(values)))
    with pytest.raises(DomainError):
        trace_norm_k(_mixture())
    with pytest.raises(DomainError):
        trace_norm_k(random_kernel(GRID, 1, RNG), k=2)


def _synthetic(times):
    return TrajectoryRecord(
        times=times, diagnostics={level_key(k, 1.0): (1.0 + k) * np.exp(-k * times) for k in (1, 2, 3)}
    )


def test_interval_additivity():
    traj = _synthetic(np.linspace(0.0, 1.0, 41))
    whole = level_integrals(traj, 1.0)
    split = level_integrals(traj.window(0.0, 0.5), 1.0) + level_integrals(traj.window(0.5, 1.0), 1.0)
    np.testing.assert_allclose(whole, split, rtol=1e-14)


@pytest.mark.parametrize("t_end", [0.5, 3.0])
def test_l1t_bounded_by_sup_norm(t_end):
    traj = _synthetic(np.linspace(0.0, t_end, 61))
    assert l1t_seq_quasinorm(traj, 1.0) <= max(1.0, t_end) * c_seq_quasinorm(traj, 1.0) * (1.0 + 1e-12)


def test_level_integrals_need_two_samples():
    with pytest.raises(DomainError):
        level_integrals(_synthetic(np.array([0.0])), 1.0)


@pytest.mark.parametrize("power, k", [("cubic", 1), ("cubic", 2), ("quintic", 1), ("quintic", 2)])
def test_collision_norm_closed_form_matches_dense(power, k):
    mix = _mixture(2)
    source = mixture_source(mix, k, power)
    for s in (0.0, 1.0):
        assert mixture_collision_hs_norm(mix, k, s, power) == pytest.approx(kernel_hs_norm(source, s), rel=1e-9)


def test_collision_norms_of_a_dense_truncation():
    mix = _mixture(2)
    state = HierarchyTruncation.from_mixture(mix, 3)
    dense = collision_level_norms(state, 1.0, "cubic")
    assert len(dense) == 2
    np.testing.assert_allclose(dense, collision_level_norms(mix, 1.0, "cubic", levels=2), rtol=1e-9)
    (quintic,) = collision_level_norms(state, 0.0, "quintic")
    assert quintic == pytest.approx(mixture_collision_hs_norm(mix, 1, 0.0, "quintic"), rel=1e-9)
    with pytest.raises(DomainError):
        collision_level_norms(state, 1.0, "quintic", levels=2)
    with pytest.raises(DomainError):
        collision_level_norms(materialize(mix, 2), 1.0, "cubic")


def _single_collision_norm(phi, k, s, power):
    # one component: 2k A^(2k-2) (A ||S rho phi||^2 - |<S phi, S rho phi>|^2), rho = |phi|^(2 sigma)
    sigma = 1 if power == "cubic" else 2
    a = apply_multiplier(phi, sobolev_symbol(s))
    b = apply_multiplier(Field(phi.grid, np.abs(phi.values) ** (2 * sigma) * phi.values), sobolev_symbol(s))
    norm_a = quadrature_inner(a, a).real
    gap = norm_a * quadrature_inner(b, b).real - abs(quadrature_inner(a, b)) ** 2
    return np.sqrt(2 * k * norm_a ** (2 * k - 2) * max(gap, 0.0))


@pytest.mark.parametrize("power", ["cubic", "quintic"])
def test_single_component_collision_norm(power):
    phi = random_smooth_field(Grid(1, 64, 8.0), RNG)
    for k in (1, 2, 3, 5):
        expected = _single_collision_norm(phi, k, 1.0, power)
        assert mixture_collision_hs_norm(phi, k, 1.0, power) == pytest.approx(expected, rel=1e-9)


def test_plane_wave_has_no_collision_term():
    grid = Grid(1, 16, np.pi)
    wave = make_reference("plane_wave", grid, momentum=2 * grid.momentum_step)
    for power in ("cubic", "quintic"):
        norms = collision_level_norms(wave, 1.0, power, levels=3)
        assert max(norms) < 1e-6 * mixture_hs_norm(ProductMixture.single(wave), 3, 1.0)


def test_collision_quasinorm_on_a_factorized_trajectory():
    phi = make_reference("gaussian", Grid(1, 128, 16.0), width=1.0, amplitude=1.5)
    traj = evolve_mixture(ProductMixture.single(phi), -1, "cubic", StepController(dt=1e-3), 0.2, 0.02, diagnostics=())
    series = np.array([[_single_collision_norm(state.fields[0], k, 1.0, "cubic") for k in (1, 2, 3)] for state in traj.states])
    integrals = np.abs(scipy.integrate.trapezoid(series, traj.times, axis=0))
    expected = seq_quasinorm(NormSequence.fitted(integrals))
    assert collision_l1t_quasinorm(traj, 1.0, "cubic", levels=3) == pytest.approx(expected, rel=1e-9)
    assert collision_l1t_quasinorm(traj, 1.0, "cubic", levels=3, tail="zero") <= expected * (1.0 + 1e-12)


def test_collision_quasinorm_needs_states():
    traj = _synthetic(np.linspace(0.0, 1.0, 5))
    with pytest.raises(DomainError):
        collision_l1t_quasinorm(traj, 1.0, "cubic")

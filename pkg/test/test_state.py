import numpy as np
import pytest

from gplab.errors import BudgetError, DomainError, GridMismatchError
from gplab.hierarchy.state import (
    ClosurePolicy,
    DenseKernel,
    HierarchyTruncation,
    ProductMixture,
    admissibility_defect,
    check_budget,
    factorized_kernel,
    free_flow,
    materialize,
    partial_trace,
    random_kernel,
    symmetrize,
    symmetry_report,
)
from gplab.spectral.grid import Grid, apply_multiplier, free_symbol, make_reference, random_smooth_field

RNG = np.random.default_rng(0)
GRID = Grid(1, 12, 6.0)
ATOL = 1e-12


def _mixture(count=2):
    fields = [random_smooth_field(GRID, RNG, min_width=1.0, max_width=2.0) for _ in range(count)]
    return ProductMixture(tuple(zip(RNG.uniform(0.2, 1.0, count), fields)))


def test_factorized_trace_and_partial_trace():
    phi = random_smooth_field(GRID, RNG)
    g2 = factorized_kernel(phi, 2)
    assert g2.trace().real == pytest.approx(phi.mass() ** 2, rel=1e-12)
    reduced = partial_trace(g2)
    np.testing.assert_allclose(reduced.values, phi.mass() * factorized_kernel(phi, 1).values, atol=ATOL)


def test_normalized_factorized_state_is_admissible():
    phi = make_reference("gaussian", GRID, width=1.5)
    phi = phi * (1.0 / phi.norm())
    mix = ProductMixture.single(phi)
    dense = HierarchyTruncation.from_mixture(mix, 3)
    assert admissibility_defect(dense, 1) < 1e-12
    assert admissibility_defect(dense, 2) < 1e-12
    assert admissibility_defect(mix, 2) < 1e-12


def test_admissibility_defect_closed_form_matches_dense():
    mix = _mixture(3)
    dense = HierarchyTruncation.from_mixture(mix, 3)
    for k in (1, 2):
        assert admissibility_defect(mix, k) == pytest.approx(admissibility_defect(dense, k), rel=1e-9)
    assert admissibility_defect(mix, 1) > 1e-3


def test_materialize_is_the_weighted_sum():
    mix = _mixture(2)
    expected = sum(w * factorized_kernel(f, 2).values for w, f in mix.components)
    np.testing.assert_allclose(materialize(mix, 2).values, expected, atol=ATOL)


def test_free_flow_of_factorized_kernel():
    phi = random_smooth_field(GRID, RNG)
    moved = apply_multiplier(phi, free_symbol(0.4))
    np.testing.assert_allclose(free_flow(factorized_kernel(phi, 2), 0.4).values, factorized_kernel(moved, 2).values, atol=1e-12)


def test_symmetrize_and_report():
    values = RNG.standard_normal((GRID.points,) * 4) + 1j * RNG.standard_normal((GRID.points,) * 4)
    raw = DenseKernel(2, GRID, values)
    assert max(symmetry_report(raw)) > 0.1
    assert max(symmetry_report(symmetrize(raw))) < 1e-14


def test_random_positive_kernel():
    g = random_kernel(GRID, 1, RNG, positive=True, rank=3)
    eigenvalues = np.linalg.eigvalsh(g.as_matrix())
    assert eigenvalues.min() > -1e-12
    assert np.sum(eigenvalues > 1e-10) == 3


def test_budget():
    with pytest.raises(BudgetError):
        check_budget(Grid(1, 128, 1.0), 3)
    with pytest.raises(DomainError):
        check_budget(Grid(2, 8, 1.0), 1)
    with pytest.raises(DomainError):
        DenseKernel(1, GRID, np.zeros((GRID.points, GRID.points + 1)))


def test_mixture_validation():
    phi = make_reference("gaussian", GRID)
    with pytest.raises(DomainError):
        ProductMixture(((0.0, phi),))
    with pytest.raises(DomainError):
        ProductMixture(())
    with pytest.raises(GridMismatchError):
        ProductMixture(((1.0, phi), (1.0, make_reference("gaussian", Grid(1, 32, 6.0)))))


def test_truncation_validation():
    phi = make_reference("gaussian", GRID)
    g1, g2 = factorized_kernel(phi, 1), factorized_kernel(phi, 2)
    with pytest.raises(DomainError):
        HierarchyTruncation((g2, g1))
    with pytest.raises(DomainError):
        HierarchyTruncation((g1,)).level(2)
    with pytest.raises(DomainError):
        ClosurePolicy("mixture_reference")
    with pytest.raises(DomainError):
        ClosurePolicy("moment")


def test_mixture_gram_is_hermitian():
    gram = _mixture(3).gram()
    np.testing.assert_allclose(gram, gram.conj().T, atol=1e-14)


@pytest.mark.parametrize("order", [2, 3])
def test_partial_trace_matches_explicit_sum(order):
    grid = Grid(1, 6, 3.0)
    g = random_kernel(grid, order, RNG)
    k, m = order - 1, grid.points
    expected = np.zeros((m,) * (2 * k), dtype=np.complex128)
    for index in np.ndindex(*expected.shape):
        ket, bra = index[:k], index[k:]
        expected[index] = grid.spacing * sum(g.values[ket + (y,) + bra + (y,)] for y in range(m))
    reduced = partial_trace(g)
    assert reduced.order == k
    np.testing.assert_allclose(reduced.values, expected, atol=1e-13)
    assert reduced.trace() == pytest.approx(g.trace(), rel=1e-12, abs=1e-12)

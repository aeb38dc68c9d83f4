import numpy as np
import pytest

from gplab.errors import DomainError
from gplab.nls import engine
from gplab.nls.engine import (
    NlsProblem,
    StepController,
    h1_norm,
    nls_energy,
    nls_evolve,
    nls_step,
    sample_times,
)
from gplab.spectral.grid import Grid, make_reference, random_smooth_field

RNG = np.random.default_rng(0)
GRID = Grid(1, 256, 16.0)


@pytest.mark.parametrize("power", ["cubic", "quintic"])
def test_step_is_reversible(power):
    phi = random_smooth_field(GRID, RNG)
    there = nls_step(phi, 1e-2, -1, power)
    back = nls_step(there, -1e-2, -1, power)
    np.testing.assert_allclose(back.values, phi.values, atol=1e-12)


@pytest.mark.parametrize("power", ["cubic", "quintic"])
def test_mass_and_energy_conservation(power):
    phi = make_reference("gaussian", GRID, width=1.0, chirp=0.2)
    traj = nls_evolve(NlsProblem(1, power, phi), StepController(dt=1e-3), 0.5, 0.05)
    mass, energy = traj.series("mass"), traj.series("energy")
    np.testing.assert_allclose(mass, mass[0], rtol=1e-12)
    assert np.max(np.abs(energy - energy[0])) / abs(energy[0]) < 1e-6


def test_energy_forms_agree():
    phi = random_smooth_field(GRID, RNG)
    position = nls_energy(phi, -1, "quintic", form="position")
    assert nls_energy(phi, -1, "quintic", form="momentum") == pytest.approx(position, rel=1e-12)
    assert nls_energy(phi, -1, "quintic", form="laplacian") == pytest.approx(position, rel=1e-12)
    with pytest.raises(DomainError):
        nls_energy(phi, -1, "quintic", form="hamiltonian")


def test_gaussian_energy():
    phi = make_reference("gaussian", GRID, width=1.0)
    assert nls_energy(phi, 1, "cubic") == pytest.approx(0.5 + 0.25 / np.sqrt(np.pi), rel=1e-10)


def test_soliton_keeps_its_modulus():
    soliton = make_reference("soliton", GRID, a=1.0)
    traj = nls_evolve(NlsProblem(-1, "cubic", soliton), StepController(dt=1e-3), 0.5, 0.5)
    np.testing.assert_allclose(np.abs(traj.states[-1].values), np.abs(soliton.values), atol=1e-4)


def test_samples_land_on_requested_times():
    phi = make_reference("gaussian", GRID)
    traj = nls_evolve(NlsProblem(1, "cubic", phi), StepController(dt=3e-3), 0.1, 0.02, diagnostics={})
    np.testing.assert_allclose(traj.times, np.linspace(0.0, 0.1, 6), atol=1e-15)
    assert traj.meta["power"] == "cubic"


def test_backward_run_returns_to_start():
    phi = random_smooth_field(GRID, RNG)
    controller = StepController(dt=1e-3)
    forward = nls_evolve(NlsProblem(-1, "cubic", phi), controller, 0.2, 0.1)
    backward = nls_evolve(NlsProblem(-1, "cubic", forward.states[-1]), controller, -0.2, 0.1)
    assert np.all(np.diff(backward.times) < 0)
    np.testing.assert_allclose(backward.states[-1].values, phi.values, atol=1e-9)


def test_halt_on_norm_threshold():
    phi = make_reference("gaussian", Grid(1, 1024, 8.0), amplitude=2.0)
    controller = StepController(dt=5e-5, dt_min=1e-12, halt_norm=8.0)
    traj = nls_evolve(NlsProblem(-1, "quintic", phi), controller, 0.3, 1e-3, keep_states=False)
    assert traj.halted is not None
    assert traj.halted.reason == "norm threshold"
    assert traj.halted.time == traj.times[-1]
    assert traj.series("h1_norm")[-1] > 8.0
    assert traj.halted.time < 0.26


def test_halt_norm_must_exceed_initial_norm():
    phi = make_reference("gaussian", GRID, amplitude=2.0)
    with pytest.raises(DomainError):
        nls_evolve(NlsProblem(-1, "cubic", phi), StepController(dt=1e-3, halt_norm=0.5 * h1_norm(phi)), 0.1, 0.1)


def test_controller_validation():
    with pytest.raises(DomainError):
        StepController(dt=1e-3, dt_min=1e-2)
    with pytest.raises(DomainError):
        StepController(dt=1e-3, safety=1.5)


def test_problem_validation():
    phi = make_reference("gaussian", GRID)
    with pytest.raises(DomainError):
        NlsProblem(0, "cubic", phi)
    with pytest.raises(DomainError):
        NlsProblem(1, "septic", phi)


def test_sample_times_appends_the_endpoint():
    np.testing.assert_allclose(sample_times(0.25, 0.1), [0.1, 0.2, 0.25])
    np.testing.assert_allclose(sample_times(-0.2, 0.1), [0.1, 0.2])


def test_step_size_recovers_after_a_rejection(monkeypatch):
    norms = iter([1.0, 2.0])
    monkeypatch.setattr(engine, "_h1_norm", lambda values, grid, p2: next(norms, 1.0))
    phi = make_reference("gaussian", GRID)
    controller = StepController(dt=1e-2)
    traj = nls_evolve(NlsProblem(1, "cubic", phi), controller, 0.5, 0.1, diagnostics={})
    assert traj.meta["rejected"] == 1
    assert traj.meta["final_dt"] == controller.dt

    norms = iter([1.0, 2.0])
    stuck = nls_evolve(NlsProblem(1, "cubic", phi), StepController(dt=1e-2, recovery=1.0), 0.5, 0.1, diagnostics={})
    assert stuck.meta["final_dt"] == pytest.approx(5e-3)


def test_recovery_factor_validation():
    with pytest.raises(DomainError):
        StepController(dt=1e-3, recovery=0.5)


@pytest.mark.parametrize("power, mu", [("cubic", 1), ("cubic", -1), ("quintic", 1), ("quintic", -1)])
def test_plane_wave_rotates_at_its_dispersion_frequency(power, mu):
    p0, amplitude, t_end = 3 * GRID.momentum_step, 0.8, 1.0
    wave = make_reference("plane_wave", GRID, momentum=p0, amplitude=amplitude)
    sigma = 1 if power == "cubic" else 2
    omega = p0 ** 2 + mu * amplitude ** (2 * sigma)
    traj = nls_evolve(NlsProblem(mu, power, wave), StepController(dt=1e-2), t_end, 0.5)
    np.testing.assert_allclose(traj.states[-1].values, wave.values * np.exp(-1j * omega * t_end), atol=1e-10)


def _energy_drift(dt):
    phi = make_reference("gaussian", GRID, width=1.0, amplitude=1.5, chirp=0.2)
    traj = nls_evolve(NlsProblem(1, "cubic", phi), StepController(dt=dt), 0.5, 0.05)
    energy = traj.series("energy")
    return np.max(np.abs(energy - energy[0])) / abs(energy[0])


def test_energy_drift_is_second_order():
    assert _energy_drift(1e-2) / _energy_drift(5e-3) >= 3.5

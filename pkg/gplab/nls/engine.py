"""Strang split-step integration of the cubic and quintic NLS.

    i d/dt phi = -Laplacian phi + mu |phi|^(2 sigma) phi,   sigma = 1 (cubic), 2 (quintic)

Half-step nonlinear phase, full free step through the lattice multiplier,
half-step nonlinear phase. The nonlinear sub-flow is exact because it leaves
|phi| unchanged.
"""

import logging
from dataclasses import dataclass
from functools import partial

import numpy as np
from tqdm import tqdm

from gplab.datasets.trajectory import Halt, TrajectoryRecord
from gplab.errors import DomainError, NonFiniteError, StepCollapseError
from gplab.spectral.grid import (
    Field,
    forward,
    free_phase_table,
    inverse,
    kinetic_laplacian,
    kinetic_pairing,
    momentum_inner,
)

SIGMA = {"cubic": 1, "quintic": 2}


def check_power(power):
    if power not in SIGMA:
        raise DomainError("power must be one of {}, got {!r}".format(sorted(SIGMA), power))
    return SIGMA[power]


def check_mu(mu, allow_zero=False):
    allowed = (-1, 0, 1) if allow_zero else (-1, 1)
    if mu not in allowed:
        raise DomainError("mu must be one of {}, got {!r}".format(allowed, mu))
    return int(mu)


@dataclass(frozen=True)
class NlsProblem:
    mu: int
    power: str
    initial: Field

    def __post_init__(self):
        check_mu(self.mu)
        check_power(self.power)

    @property
    def sigma(self):
        return SIGMA[self.power]


@dataclass(frozen=True)
class StepController:
    dt: float
    dt_min: float = 1e-9
    halt_norm: float = np.inf
    safety: float = 0.5
    growth_limit: float = 0.1
    recovery: float = 1.25

    def __post_init__(self):
        if not 0 < self.dt_min < self.dt:
            raise DomainError("need 0 < dt_min < dt, got dt_min={} dt={}".format(self.dt_min, self.dt))
        if not 0 < self.safety < 1:
            raise DomainError("safety factor must lie in (0, 1), got {}".format(self.safety))
        if not self.recovery >= 1:
            raise DomainError("recovery factor must be >= 1, got {}".format(self.recovery))


def _nonlinear_phase(values, tau, mu, sigma):
    return values * np.exp(-1j * mu * tau * np.abs(values) ** (2 * sigma))


def _strang(values, grid, dt, mu, sigma):
    values = _nonlinear_phase(values, 0.5 * dt, mu, sigma)
    values = inverse(free_phase_table(grid, dt) * forward(values, grid), grid)
    return _nonlinear_phase(values, 0.5 * dt, mu, sigma)


def _h1_norm(values, grid, p2):
    c = forward(values, grid)
    return np.sqrt(grid.momentum_measure * np.sum((1.0 + p2) * np.abs(c) ** 2))


def nls_step(phi, dt, mu, power):
    """One Strang step; a negative ``dt`` steps backward and undoes a forward step."""
    return Field(phi.grid, _strang(phi.values, phi.grid, dt, check_mu(mu), check_power(power)))


def nls_energy(f, mu, power, form="position"):
    """1/2 ||grad phi||^2 + mu/(2 sigma + 2) ||phi||_{2 sigma + 2}^(2 sigma + 2).

    ``form`` selects how the kinetic term is evaluated: ``position`` pairs the
    spectral gradients by quadrature, ``momentum`` sums |p|^2 |phi(p)|^2.
    """
    sigma = check_power(power)
    mu = check_mu(mu, allow_zero=True)
    if form == "position":
        kinetic = kinetic_pairing(f)
    elif form == "momentum":
        c = forward(f.values, f.grid)
        kinetic = momentum_inner(c, f.grid.momentum_squared() * c, f.grid).real
    elif form == "laplacian":
        kinetic = kinetic_laplacian(f)
    else:
        raise DomainError("unknown energy form {!r}".format(form))
    p = 2 * sigma + 2
    return 0.5 * kinetic + mu / p * f.lp_norm(p) ** p


def h1_norm(f):
    return _h1_norm(f.values, f.grid, f.grid.momentum_squared())


def default_diagnostics(mu, power):
    return {
        "mass": Field.mass,
        "energy": partial(nls_energy, mu=mu, power=power),
        "h1_norm": h1_norm,
    }


def sample_times(t_end, sample_every):
    count = int(np.floor(abs(t_end) / sample_every + 1e-9))
    times = sample_every * np.arange(1, count + 1)
    if times.size == 0 or abs(t_end) - times[-1] > 1e-12 * max(1.0, abs(t_end)):
        times = np.append(times, abs(t_end))
    return times


def nls_evolve(prob, controller, t_end, sample_every, diagnostics=None, keep_states=True, progress=False):
    """Integrate ``prob`` to ``t_end`` (backward when negative), sampling every ``sample_every``.

    Steps are clipped so that every sample time is hit exactly. A step whose
    H^1 norm grows by more than ``controller.growth_limit`` is rejected and the
    step size shrunk by ``controller.safety``; calm accepted steps grow it back
    by ``controller.recovery`` up to ``controller.dt``. The run halts once the
    H^1 norm exceeds ``controller.halt_norm``.
    """
    if t_end == 0:
        raise DomainError("t_end must be nonzero")
    if not sample_every > 0:
        raise DomainError("sample_every must be positive")
    grid = prob.initial.grid
    mu, sigma = prob.mu, prob.sigma
    direction = 1.0 if t_end > 0 else -1.0
    if diagnostics is None:
        diagnostics = default_diagnostics(mu, prob.power)

    p2 = grid.momentum_squared()
    values = np.array(prob.initial.values)
    h1 = _h1_norm(values, grid, p2)
    if not controller.halt_norm > h1:
        raise DomainError(
            "halt_norm {} must exceed the initial H^1 norm {:.6g}".format(controller.halt_norm, h1)
        )

    times, states, series = [], [], {name: [] for name in diagnostics}

    def record(t, vals):
        state = Field(grid, vals)
        times.append(direction * t)
        states.append(state if keep_states else None)
        for name, fn in diagnostics.items():
            value = float(fn(state))
            if not np.isfinite(value):
                raise NonFiniteError("diagnostic {} is not finite at t={:.6g}".format(name, direction * t))
            series[name].append(value)

    record(0.0, values)
    targets = sample_times(t_end, sample_every)
    dt = controller.dt
    t, halted, steps, rejected = 0.0, None, 0, 0
    iterator = iter(targets)
    target = next(iterator)

    if progress:
        bar = tqdm(total=len(targets), desc="nls")
    while True:
        step = min(dt, target - t)
        candidate = _strang(values, grid, direction * step, mu, sigma)
        if not np.all(np.isfinite(candidate)):
            raise NonFiniteError("state became non-finite at t={:.6g}".format(direction * (t + step)))
        h1_new = _h1_norm(candidate, grid, p2)
        if h1_new > (1.0 + controller.growth_limit) * h1:
            dt *= controller.safety
            rejected += 1
            if dt < controller.dt_min:
                raise StepCollapseError(
                    "step collapse at t={:.6g}: dt={:.3g} below dt_min={:.3g} with H^1 norm {:.6g} < halt_norm {}".format(
                        direction * t, dt, controller.dt_min, h1, controller.halt_norm
                    )
                )
            continue
        if dt < controller.dt and h1_new <= (1.0 + 0.5 * controller.growth_limit) * h1:
            dt = min(controller.dt, dt * controller.recovery)
        values, h1, steps = candidate, h1_new, steps + 1
        landed = step >= target - t
        t = target if landed else t + step
        if h1 > controller.halt_norm:
            halted = Halt("norm threshold", direction * t)
            record(t, values)
            logging.info(
                "[NlsEngine] halted at t={:.8g}: H^1 norm {:.6g} > {}".format(direction * t, h1, controller.halt_norm)
            )
            break
        if landed:
            record(t, values)
            if progress:
                bar.update(1)
            target = next(iterator, None)
            if target is None:
                break
    if progress:
        bar.close()

    logging.debug("[NlsEngine] {} steps accepted, {} rejected, final dt={:.3g}".format(steps, rejected, dt))
    return TrajectoryRecord(
        times=np.array(times),
        states=tuple(states) if keep_states else (),
        diagnostics={name: np.array(v) for name, v in series.items()},
        halted=halted,
        meta={"mu": mu, "power": prob.power, "final_dt": dt, "steps": steps, "rejected": rejected},
    )

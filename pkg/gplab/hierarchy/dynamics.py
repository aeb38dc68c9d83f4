"""Time evolution of hierarchy states.

Product mixtures evolve exactly: every component follows its own NLS flow
with fixed weights. Dense truncations are integrated by Strang splitting of
the free flow (exact, through momentum multipliers) and the interaction
source, with time carried by the interaction sub-flow so that a
time-dependent closure stays second order.
"""

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from tqdm import tqdm

from gplab.datasets.trajectory import Halt, TrajectoryRecord
from gplab.errors import DomainError, InvariantError, NonFiniteError
from gplab.hierarchy.collision import apply_collision
from gplab.hierarchy.functionals import diagnostics_for
from gplab.hierarchy.norms import hierarchy_hs_quasinorm
from gplab.hierarchy.state import (
    ClosurePolicy,
    DenseKernel,
    HierarchyTruncation,
    ProductMixture,
    factorized_kernel,
    free_flow,
    materialize,
    symmetry_report,
)
from gplab.nls.engine import NlsProblem, check_mu, check_power, h1_norm, nls_evolve, nls_step, sample_times
from gplab.spectral.grid import Field

__all__ = [
    "ClosurePolicy",
    "evolve_mixture",
    "evolve_truncated",
    "duhamel_residual",
    "time_shift_check",
    "mixture_source",
]

SYMMETRY_TOL = 1e-6


def _evolve_component(prob, controller, t_end, sample_every):
    return nls_evolve(prob, controller, t_end, sample_every, diagnostics={"h1_norm": h1_norm})


def evolve_mixture(
    mix,
    mu,
    power,
    controller,
    t_end,
    sample_every=None,
    diagnostics=("mass",),
    levels=None,
    num_workers=1,
):
    """Advance every component by the NLS flow on a shared sample grid.

    The record halts at the earliest component halt. Its states are the
    product mixtures at the common sample times; the off-grid halt sample is
    kept only for single-component mixtures.
    """
    mu = check_mu(mu)
    check_power(power)
    sample_every = sample_every or controller.dt
    problems = [NlsProblem(mu, power, f) for f in mix.fields]

    if num_workers > 1 and len(problems) > 1:
        runs = [None] * len(problems)
        with ProcessPoolExecutor(max_workers=num_workers) as executor, tqdm(total=len(problems)) as progress:
            futures = []
            for index, prob in enumerate(problems):
                future = executor.submit(_evolve_component, prob, controller, t_end, sample_every)
                future.add_done_callback(lambda p: progress.update())
                futures.append((future, index))
            for future, index in futures:
                runs[index] = future.result()
    else:
        runs = [_evolve_component(prob, controller, t_end, sample_every) for prob in problems]

    halts = [run.halted for run in runs if run.halted is not None]
    halted = min(halts, key=lambda h: abs(h.time)) if halts else None
    if halted is None:
        count = min(len(run) for run in runs)
    elif len(runs) == 1:
        count = len(runs[0])
    else:
        # grid samples only: drop each halted run's off-grid final sample
        grid_counts = [len(run) - (run.halted is not None) for run in runs]
        count = min(grid_counts)
        while count > 0 and abs(runs[0].times[count - 1]) > abs(halted.time):
            count -= 1
    times = runs[0].times[:count]
    states = [mix.with_fields([run.states[i] for run in runs]) for i in range(count)]
    if halted is not None:
        logging.info("[HierarchyDynamics] mixture halted at t={:.8g} ({})".format(halted.time, halted.reason))
    return _assemble(times, states, diagnostics_for(diagnostics, mu, power, levels), halted, {"mu": mu, "power": power})


def _assemble(times, states, diagnostics, halted, meta):
    series = {name: [] for name in diagnostics}
    for t, state in zip(times, states):
        for name, fn in diagnostics.items():
            value = float(fn(state))
            if not np.isfinite(value):
                raise NonFiniteError("diagnostic {} is not finite at t={:.6g}".format(name, t))
            series[name].append(value)
    return TrajectoryRecord(
        times=np.asarray(times),
        states=tuple(states),
        diagnostics={name: np.array(v) for name, v in series.items()},
        halted=halted,
        meta=meta,
    )


def _block_profile(density, k):
    """sum_j density(x_j) - density(x'_j) on the 2k-axis kernel grid."""
    m = density.size
    profile = np.zeros((m,) * (2 * k))
    for j in range(k):
        shape = [1] * (2 * k)
        shape[j] = m
        profile = profile + density.reshape(shape)
        shape[j], shape[k + j] = 1, m
        profile = profile - density.reshape(shape)
    return profile


def mixture_source(mix, k, power):
    """B gamma^(k+1) (cubic) or Q gamma^(k+2) (quintic) for a product mixture, at level k.

    Uses the product form: the restricted extra particles contribute
    |phi_r|^(2 sigma) at x_j minus the same at x'_j.
    """
    sigma = check_power(power)
    values = 0.0
    for w, f in mix.components:
        density = np.abs(f.values) ** (2 * sigma)
        values = values + w * _block_profile(density, k) * factorized_kernel(f, k).values
    return DenseKernel(k, mix.grid, values)


def _source(levels, k, sigma, power, reference):
    """Interaction source at level k from the level k + sigma or the closure."""
    K = len(levels)
    if k + sigma <= K:
        return apply_collision(levels[k + sigma - 1], power).kernel.values
    if reference is None:
        return 0.0
    return mixture_source(reference, k, power).values


def _interaction(levels, mu, sigma, power, tau, ref_old, ref_new):
    """Trapezoid step of d/dt gamma^(k) = -i mu S_k over tau, levels updated top down."""
    old = [_source(levels, k, sigma, power, ref_old) for k in range(1, len(levels) + 1)]
    updated = list(levels)
    for k in range(len(levels), 0, -1):
        new = _source(updated, k, sigma, power, ref_new)
        values = levels[k - 1].values - 1j * mu * 0.5 * tau * (old[k - 1] + new)
        updated[k - 1] = levels[k - 1].with_values(values)
    return updated


def _step_reference(reference, dt, mu, power):
    if reference is None:
        return None
    return reference.with_fields([nls_step(f, dt, mu, power) for f in reference.fields])


def evolve_truncated(init, mu, power, dt, t_end, sample_every=None, diagnostics=("mass",), progress=False):
    """Strang integration of levels 1..K of the hierarchy.

    ``t_end`` may be negative to integrate backward. States are stored every
    ``sample_every`` (a multiple of ``dt``, default every step); any level
    whose symmetry defect exceeds ``SYMMETRY_TOL`` aborts the run.
    """
    mu = check_mu(mu)
    sigma = check_power(power)
    if not dt > 0:
        raise DomainError("dt must be positive, got {}".format(dt))
    if t_end == 0:
        raise DomainError("t_end must be nonzero")
    if init.closure.kind == "mixture_reference" and init.closure.reference is None:
        raise DomainError("closure reference missing")
    direction = 1.0 if t_end > 0 else -1.0
    sample_every = sample_every or dt
    stride = max(1, int(round(sample_every / dt)))
    reference = init.closure.reference if init.closure.kind == "mixture_reference" else None

    # steps of size dt, the last one clipped onto t_end
    edges = sample_times(t_end, dt)
    levels = list(init.levels)
    times, states = [0.0], [init]
    t = 0.0
    iterator = tqdm(enumerate(edges, start=1), total=len(edges), desc="hierarchy") if progress else enumerate(edges, start=1)
    for count, edge in iterator:
        step = direction * (edge - t)
        ref_mid = _step_reference(reference, 0.5 * step, mu, power)
        levels = _interaction(levels, mu, sigma, power, 0.5 * step, reference, ref_mid)
        levels = [free_flow(g, step) for g in levels]
        reference = _step_reference(ref_mid, 0.5 * step, mu, power)
        levels = _interaction(levels, mu, sigma, power, 0.5 * step, ref_mid, reference)
        t = edge
        if count % stride == 0 or count == len(edges):
            _check_symmetry(levels, direction * t)
            closure = ClosurePolicy(init.closure.kind, reference)
            times.append(direction * t)
            states.append(HierarchyTruncation(tuple(levels), closure))

    logging.info("[TruncatedHierarchy] K={} {} steps to t={:.6g}".format(len(levels), len(edges), direction * t))
    return _assemble(times, states, diagnostics_for(diagnostics, mu, power), None, {"mu": mu, "power": power, "dt": dt})


def _check_symmetry(levels, t):
    for g in levels:
        scale = max(1.0, float(np.max(np.abs(g.values))))
        hermitian, permutation = symmetry_report(g)
        if max(hermitian, permutation) > SYMMETRY_TOL * scale:
            raise InvariantError(
                "kernel-symmetry",
                "level {} at t={:.6g}: hermitian {:.3g}, permutation {:.3g}".format(g.order, t, hermitian, permutation),
            )


def kernel_at(state, k):
    if isinstance(state, HierarchyTruncation):
        return state.level(k)
    if isinstance(state, Field):
        state = ProductMixture.single(state)
    return materialize(state, k)


def _collision_at(state, k, power):
    sigma = check_power(power)
    if isinstance(state, HierarchyTruncation):
        return apply_collision(state.level(k + sigma), power).kernel
    if isinstance(state, Field):
        state = ProductMixture.single(state)
    return mixture_source(state, k, power)


def duhamel_residual(traj, k, mu, power="cubic"):
    """Relative L^2 deviation of gamma_t^(k) from its Duhamel formula at the last sample.

    The time integral is the trapezoid rule over the recorded samples;
    ``mu = 0`` checks the free flow alone.
    """
    mu = check_mu(mu, allow_zero=True)
    if len(traj) < 3:
        raise DomainError("Duhamel residual needs at least 3 samples, got {}".format(len(traj)))
    if not traj.has_states:
        raise DomainError("Duhamel residual needs a trajectory with states")
    t0, t = traj.times[0], traj.times[-1]
    predicted = free_flow(kernel_at(traj.states[0], k), t - t0)
    if mu != 0:
        integrand = [free_flow(_collision_at(state, k, power), t - s) for s, state in zip(traj.times, traj.states)]
        weights = np.zeros(len(traj))
        spacing = np.diff(traj.times)
        weights[:-1] += 0.5 * spacing
        weights[1:] += 0.5 * spacing
        integral = sum(w * g.values for w, g in zip(weights, integrand))
        predicted = predicted.with_values(predicted.values - 1j * mu * integral)
    actual = kernel_at(traj.states[-1], k)
    deviation = (predicted - actual).l2_norm()
    scale = actual.l2_norm()
    return deviation / scale if scale > 0 else deviation


def interpolate_state(traj, t):
    """Linear interpolation of the stored states at time t."""
    times = traj.times
    lo, hi = min(times[0], times[-1]), max(times[0], times[-1])
    if not lo <= t <= hi:
        raise DomainError("t={} outside the recorded interval [{}, {}]".format(t, lo, hi))
    order = np.argsort(times)
    sorted_times = times[order]
    i = int(np.searchsorted(sorted_times, t))
    if i < len(times) and sorted_times[i] == t:
        return traj.states[order[i]]
    a, b = order[i - 1], order[i]
    theta = (t - times[a]) / (times[b] - times[a])
    return _blend(traj.states[a], traj.states[b], theta)


def _blend(x, y, theta):
    if isinstance(x, Field):
        return Field(x.grid, (1 - theta) * x.values + theta * y.values)
    if isinstance(x, ProductMixture):
        return x.with_fields([_blend(f, g, theta) for f, g in zip(x.fields, y.fields)])
    levels = tuple(a.with_values((1 - theta) * a.values + theta * b.values) for a, b in zip(x.levels, y.levels))
    return HierarchyTruncation(levels, x.closure)


def _quasinorm(state, s, levels):
    if isinstance(state, Field):
        state = ProductMixture.single(state)
    return hierarchy_hs_quasinorm(state, s, levels)


def time_shift_check(traj, t0, s, taus=None, levels=None):
    """max over tau of | ||R_t0 Gamma(tau)|| - ||Gamma(t0 + tau)|| | in the H^s quasi-norm.

    The shifted state is the recorded state interpolated at t0 + tau; the
    comparison value interpolates the recorded norm series.
    """
    if not traj.has_states:
        raise DomainError("time shift needs a trajectory with states")
    times = traj.times
    lo, hi = min(times[0], times[-1]), max(times[0], times[-1])
    if not lo <= t0 <= hi:
        raise DomainError("shift t0={} outside the recorded interval [{}, {}]".format(t0, lo, hi))
    if taus is None:
        # shifts run in the direction the trajectory was recorded
        taus = [tau for tau in times - times[0] if lo <= t0 + tau <= hi]
    taus = np.asarray(taus, dtype=float)
    if np.any(t0 + taus > hi) or np.any(t0 + taus < lo):
        raise DomainError("shifted times t0 + tau leave the recorded interval [{}, {}]".format(lo, hi))

    order = np.argsort(times)
    norms = np.array([_quasinorm(state, s, levels) for state in traj.states])
    expected = np.interp(t0 + taus, times[order], norms[order])
    shifted = np.array([_quasinorm(interpolate_state(traj, t0 + tau), s, levels) for tau in taus])
    return float(np.max(np.abs(shifted - expected)))

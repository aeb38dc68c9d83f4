"""Named numerical checks, each a single invocable acceptance run.

Every check returns a ``CheckResult`` row: measured value, tolerance and a
pass flag. ``verify_suite`` runs a selection (all when empty).
"""

import logging
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from tqdm import tqdm

from gplab.blowup.lab import (
    RATE_BOUNDS,
    detect_blowup,
    fit_rate,
    glassey_bound,
    norm_key,
    virial_second_difference,
)
from gplab.datasets.trajectory import TrajectoryRecord
from gplab.errors import DomainError
from gplab.hierarchy.collision import (
    apply_B,
    apply_B_momentum,
    apply_Q,
    interaction_trace_dense,
    interaction_trace_mixture,
)
from gplab.hierarchy.dynamics import duhamel_residual, evolve_mixture, evolve_truncated
from gplab.hierarchy.functionals import diagnostic, energy, kinetic_terms, virial, virial_dt, virial_rhs
from gplab.hierarchy.norms import (
    NormSequence,
    hierarchy_hs_quasinorm,
    kernel_hs_norm,
    level_integrals,
    level_key,
    mixture_hs_norm,
    seq_quasinorm,
    trace_norm_k,
)
from gplab.hierarchy.state import (
    HierarchyTruncation,
    ProductMixture,
    admissibility_defect,
    materialize,
    random_kernel,
)
from gplab.nls.engine import NlsProblem, StepController, default_diagnostics, h1_norm, nls_evolve
from gplab.spectral.grid import Grid, make_reference, random_smooth_field

SEED = 0


@dataclass(frozen=True)
class CheckResult:
    name: str
    anchor: str
    value: float
    tolerance: float
    passed: bool
    seconds: float = 0.0

    def row(self):
        return "{:<24s} {:<48s} {:>12.4e} {:>10.1e}  {}".format(
            self.name, self.anchor, self.value, self.tolerance, "PASS" if self.passed else "FAIL"
        )


_REGISTRY = {}


def register(name, anchor, tolerance, options=()):
    """Add a check; ``options`` names the keyword arguments ``verify_suite`` may pass it."""

    def wrap(fn):
        _REGISTRY[name] = (anchor, tolerance, fn, tuple(options))
        return fn

    return wrap


def available_checks():
    return sorted(_REGISTRY)


def _verdict(value, tolerance):
    return value, bool(value <= tolerance)


def two_component_mixture(grid):
    """Non-admissible pair: one component of mass 2, one of mass 1."""
    heavy = make_reference("gaussian", grid, center=-2.0, width=2.0, amplitude=np.sqrt(2.0))
    light = make_reference("gaussian", grid, center=2.0, width=2.0, momentum=0.5)
    return ProductMixture(((0.5, heavy), (0.5, light)))


@register("factorized-norm", "factorized state: H^s quasi-norm = 2||phi||^2_{H^s}", 1e-9)
def check_factorized_norm():
    rng = np.random.default_rng(SEED)
    grid = Grid(1, 256, 16.0)
    worst = 0.0
    for _ in range(10):
        phi = random_smooth_field(grid, rng)
        for s in (0.0, 1.0, 2.0):
            expected = 2.0 * phi.sobolev_norm(s) ** 2
            got = hierarchy_hs_quasinorm(ProductMixture.single(phi), s)
            worst = max(worst, abs(got - expected) / expected)
    return _verdict(worst, 1e-9)


@register("kinetic-identity", "gradient pairing = Laplacian kinetic form", 1e-10)
def check_kinetic_identity():
    rng = np.random.default_rng(SEED)
    grid = Grid(1, 32, 8.0)
    worst = 0.0
    for trial in range(20):
        k = 1 + trial % 2
        levels = tuple(random_kernel(grid, j, rng) for j in range(1, k + 1))
        pairing, laplacian = kinetic_terms(HierarchyTruncation(levels), k)
        worst = max(worst, abs(pairing - laplacian) / max(1.0, abs(pairing)))
    return _verdict(worst, 1e-10)


@register("collision-diagonal", "diagonal of B and Q vanishes", 1e-13)
def check_collision_diagonal():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(3):
        worst = max(worst, apply_B(random_kernel(Grid(1, 16, 4.0), 2, rng)).diagonal_defect())
        g3 = random_kernel(Grid(1, 8, 4.0), 3, rng)
        worst = max(worst, apply_B(g3).diagonal_defect(), apply_Q(g3).diagonal_defect())
    return _verdict(worst, 1e-13)


@register("momentum-oracle", "position B vs shifted momentum sum", 1e-10)
def check_momentum_oracle():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for m in (8, 16):
        g = random_kernel(Grid(1, m, 4.0), 2, rng)
        diff = apply_B(g).kernel.values - apply_B_momentum(g).values
        worst = max(worst, float(np.max(np.abs(diff))))
    return _verdict(worst, 1e-10)


def _conservation(power, k=3):
    """Max relative drift of E_1..E_k over the run."""
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise DomainError("conservation level k must be a positive integer, got {!r}".format(k))
    grid = Grid(1, 128, 16.0)
    mix = two_component_mixture(grid)
    names = tuple("E_{}".format(j) for j in range(1, k + 1))
    traj = evolve_mixture(mix, 1, power, StepController(dt=1e-3), t_end=1.0, sample_every=0.05, diagnostics=names)
    drift = 0.0
    for j in range(1, k + 1):
        series = traj.series("E_{}".format(j))
        drift = max(drift, float(np.max(np.abs(series - series[0])) / abs(series[0])))
    return _verdict(drift, 1e-6)


@register("conservation-cubic", "E_k conserved on a non-admissible mixture", 1e-6, options=("k",))
def check_conservation_cubic(k=3):
    return _conservation("cubic", k)


@register("conservation-quintic", "quintic E_k conserved on a non-admissible mixture", 1e-6, options=("k",))
def check_conservation_quintic(k=3):
    return _conservation("quintic", k)


def virial_defect(power, k, dt, t_mid=0.2):
    """Relative gap between the centred second difference of V_k and its closed form."""
    grid = Grid(1, 256, 16.0)
    phi = make_reference("gaussian", grid, width=1.0, chirp=0.3)
    mix = ProductMixture.single(phi)
    steps = int(round(t_mid / dt))
    traj = evolve_mixture(
        mix, -1, power, StepController(dt=dt, dt_min=dt * 1e-3), t_end=(steps + 1) * dt, sample_every=dt, diagnostics=()
    )
    v = [virial(state, k) for state in traj.states[steps - 1 : steps + 2]]
    second = (v[2] - 2.0 * v[1] + v[0]) / dt ** 2
    rhs = virial_rhs(traj.states[steps], k, -1, power)
    return abs(second - rhs) / abs(rhs)


@register("virial-identity", "second difference of V_k = closed form, order 2", 1e-3)
def check_virial_identity():
    worst, ratio = 0.0, np.inf
    for power in ("cubic", "quintic"):
        for k in (1, 2):
            worst = max(worst, virial_defect(power, k, 1e-4))
            ratio = min(ratio, virial_defect(power, k, 2e-2) / virial_defect(power, k, 1e-2))
    logging.info("[Verify] virial: worst relative defect {:.3e}, worst halving ratio {:.3f}".format(worst, ratio))
    return worst, bool(worst <= 1e-3 and ratio >= 3.0)


def truncated_error(dt, t_end=0.2, grid=None, reference_dt=None):
    """L^2 error of level 1 of the K=2 truncated run against a fine mixture run."""
    grid = grid or Grid(1, 32, 8.0)
    phi = make_reference("gaussian", grid, width=2.0)
    mix = ProductMixture.single(phi)
    init = HierarchyTruncation.from_mixture(mix, 2)
    traj = evolve_truncated(init, 1, "cubic", dt, t_end, sample_every=t_end, diagnostics=())
    reference_dt = reference_dt or dt / 16.0
    exact = evolve_mixture(
        mix, 1, "cubic", StepController(dt=reference_dt, dt_min=reference_dt * 1e-3), t_end, sample_every=t_end, diagnostics=()
    )
    return (traj.states[-1].level(1) - materialize(exact.states[-1], 1)).l2_norm()


@register("truncated-convergence", "truncated hierarchy converges at order 2", 3.5)
def check_truncated_convergence():
    ratio = truncated_error(0.02, reference_dt=1e-4) / truncated_error(0.01, reference_dt=1e-4)
    return ratio, bool(ratio >= 3.5)


def duhamel_run(t_end=0.5, samples=400, dt=1e-4):
    grid = Grid(1, 128, 16.0)
    phi = make_reference("gaussian", grid, width=1.0)
    return evolve_mixture(
        ProductMixture.single(phi), -1, "cubic", StepController(dt=dt, dt_min=dt * 1e-3), t_end, t_end / samples, diagnostics=()
    )


@register("duhamel-residual", "mixture trajectories obey the Duhamel formula", 1e-4)
def check_duhamel_residual():
    traj = duhamel_run()
    fine = duhamel_residual(traj.subsample(2), 1, -1)
    coarse = duhamel_residual(traj.subsample(4), 1, -1)
    logging.info("[Verify] Duhamel residual {:.3e} (200 nodes), {:.3e} (100 nodes)".format(fine, coarse))
    return fine, bool(fine <= 1e-4 and coarse / fine >= 3.0)


QUINTIC_AMPLITUDE = 2.0
QUINTIC_HALT = 25.0
RESOLVED_GROWTH = 2.0


@lru_cache(maxsize=2)
def quintic_blowup_run(dt=2e-5):
    """Focusing 1-D quintic collapse of an amplitude-scaled Gaussian with E_1 < 0."""
    grid = Grid(1, 2048, 8.0)
    phi = make_reference("gaussian", grid, width=1.0, amplitude=QUINTIC_AMPLITUDE)
    state = ProductMixture.single(phi)
    bound = glassey_bound(energy(state, 1, -1, "quintic").total, virial(state, 1), virial_dt(state, 1))
    diagnostics = default_diagnostics(-1, "quintic")
    for name in (norm_key(1.0), "V_1"):
        diagnostics[name] = diagnostic(name, -1, "quintic")
    controller = StepController(dt=dt, dt_min=1e-12, halt_norm=QUINTIC_HALT)
    traj = nls_evolve(NlsProblem(-1, "quintic", phi), controller, 0.3, 1e-4, diagnostics, keep_states=False)
    return traj, bound


def resolved_concavity(traj, e0):
    """max over resolved interior samples of (second difference of V_1) - 16 E_1(0)."""
    h1 = traj.series("h1_norm")
    count = int(np.argmax(h1 > RESOLVED_GROWTH * h1[0])) or len(traj)
    _, second = virial_second_difference(traj.window(traj.times[0], traj.times[count - 1]), 1)
    return float(np.max(second - 16.0 * e0))


@register("glassey-quintic-1d", "t* <= 1.05 Glassey bound, V'' <= 16E(0)", 1.05)
def check_glassey_quintic():
    traj, bound = quintic_blowup_run()
    detection = detect_blowup(traj, 1.0)
    if not detection.detected:
        return np.inf, False
    ratio = detection.t_star / bound.t_bound
    excess = resolved_concavity(traj, bound.e0)
    logging.info("[Verify] quintic t*={:.6g} bound={:.6g} concavity excess {:.3e}".format(
        detection.t_star, bound.t_bound, excess))
    return ratio, bool(ratio <= 1.05 and excess <= 1e-3 and detection.confidence >= 0.99)


CUBIC_3D_WIDTH = 1.6
CUBIC_3D_AMPLITUDE = 9.0
CUBIC_3D_HALFWIDTH = 4.0
CUBIC_3D_GROWTH = 3.0
CUBIC_3D_DRIFT = 1e-2


def cubic_3d_collapse_run(points=64, dt=5e-4):
    """Focusing 3-D cubic run of a wide Gaussian with E_1 < 0, halted at resolved H^1 growth.

    The width spans about thirteen grid steps, so the contraction stays
    resolved up to ``CUBIC_3D_GROWTH`` times the initial H^1 norm. The
    Gaussian saturates ||grad phi||^2 V >= (n M / 2)^2, so that growth is
    forced once V_1 falls below V_1(0) / 16, which the Glassey parabola
    reaches before its root.
    """
    grid = Grid(3, points, CUBIC_3D_HALFWIDTH)
    phi = make_reference("gaussian", grid, width=CUBIC_3D_WIDTH, amplitude=CUBIC_3D_AMPLITUDE)
    mix = ProductMixture.single(phi)
    bound = glassey_bound(energy(mix, 1, -1, "cubic").total, virial(mix, 1), virial_dt(mix, 1))
    controller = StepController(dt=dt, dt_min=1e-12, halt_norm=CUBIC_3D_GROWTH * h1_norm(phi))
    traj = evolve_mixture(mix, -1, "cubic", controller, 1.05 * bound.t_bound, sample_every=1e-2, diagnostics=("E_1", "V_1"))
    return traj, bound


@register("glassey-cubic-3d", "3-D cubic resolved collapse before 1.05 Glassey bound", 1.05)
def check_glassey_cubic_3d(points=64):
    traj, bound = cubic_3d_collapse_run(points)
    if traj.halted is None:
        logging.info("[Verify] 3-D cubic: no halt before 1.05 x bound {:.6g}".format(bound.t_bound))
        return np.inf, False
    ratio = traj.halted.time / bound.t_bound
    energy_series = traj.series("E_1")
    drift = float(np.max(np.abs(energy_series - bound.e0)) / abs(bound.e0))
    times = traj.times
    parabola = bound.v0 + bound.vdot0 * times + 8.0 * bound.e0 * times ** 2
    excess = float(np.max(traj.series("V_1") - parabola) / bound.v0)
    logging.info(
        "[Verify] 3-D cubic halt t={:.6g} bound={:.6g} energy drift {:.3e} Glassey excess {:.3e}".format(
            traj.halted.time, bound.t_bound, drift, excess
        )
    )
    return ratio, bool(ratio <= 1.05 and drift <= CUBIC_3D_DRIFT and excess <= CUBIC_3D_DRIFT)


def synthetic_blowup(exponent, t_star=0.5, constant=1.0, samples=2000):
    times = np.linspace(0.0, t_star * 0.999, samples)
    norms = constant / (t_star - times) ** exponent
    return TrajectoryRecord(times=times, diagnostics={norm_key(1.0): norms})


@register("rate-bounds", "fitted exponents respect the lower bounds", 0.01)
def check_rate_bounds():
    worst = 0.0
    for exponent in (1.0, 0.5, 0.25):
        report = fit_rate(synthetic_blowup(exponent), 0.5, 1.0, "quintic_s_gt_nm1_2")
        worst = max(worst, abs(report.fitted_exponent - exponent))
    traj, bound = quintic_blowup_run()
    detection = detect_blowup(traj, 1.0)
    if not detection.detected:
        return worst, False
    passed = worst <= 0.01
    for regime in ("quintic_s_gt_n2", "quintic_s_gt_nm1_2"):
        report = fit_rate(traj, detection.t_star, 1.0, regime, bound.t_bound)
        logging.info("[Verify] {}: fitted {:.4f} >= {} - tol".format(regime, report.fitted_exponent, RATE_BOUNDS[regime]))
        passed = passed and report.verdict
    return worst, bool(passed)


@register("quasinorm-algebra", "triangle inequality, scaling bound, interval additivity", 1e-12)
def check_quasinorm_algebra():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(1000):
        depth = rng.integers(1, 8)
        a = NormSequence(rng.exponential(size=depth) * rng.uniform(0.1, 10.0))
        b = NormSequence(rng.exponential(size=depth) * rng.uniform(0.1, 10.0))
        lhs, rhs = seq_quasinorm(a + b), seq_quasinorm(a) + seq_quasinorm(b)
        worst = max(worst, (lhs - rhs) / rhs)
        c = rng.uniform(0.01, 100.0)
        scaled, base = seq_quasinorm(a.scaled(c)), seq_quasinorm(a)
        worst = max(worst, (scaled - max(1.0, c) * base) / (max(1.0, c) * base))

    times = np.linspace(0.0, 1.0, 41)
    series = {level_key(k, 1.0): np.exp(-k * times) * (1.0 + k) for k in (1, 2, 3)}
    traj = TrajectoryRecord(times=times, diagnostics=series)
    whole = level_integrals(traj, 1.0)
    split = level_integrals(traj.window(0.0, 0.5), 1.0) + level_integrals(traj.window(0.5, 1.0), 1.0)
    worst = max(worst, float(np.max(np.abs(whole - split) / whole)))
    return _verdict(max(worst, 0.0), 1e-12)


@register("dense-mixture-crossval", "closed-form mixture functionals = dense path", 1e-8)
def check_dense_mixture_crossval():
    rng = np.random.default_rng(SEED)
    grid = Grid(1, 12, 6.0)
    fields = [random_smooth_field(grid, rng, components=2, min_width=1.0, max_width=2.0) for _ in range(3)]
    mix = ProductMixture(tuple(zip(rng.uniform(0.2, 1.0, 3), fields)))
    dense = HierarchyTruncation.from_mixture(mix, 3)
    worst = 0.0

    def compare(a, b):
        return abs(a - b) / max(1.0, abs(b))

    for k in (1, 2, 3):
        for s in (0.0, 1.0):
            worst = max(worst, compare(kernel_hs_norm(dense.level(k), s), mixture_hs_norm(mix, k, s)))
        worst = max(worst, compare(trace_norm_k(dense.level(k)), trace_norm_k(mix, k)))
        worst = max(worst, compare(virial(dense, k), virial(mix, k)))
        worst = max(worst, compare(virial_dt(dense, k), virial_dt(mix, k)))
    for k in (1, 2):
        worst = max(worst, compare(energy(dense, k, -1, "cubic").total, energy(mix, k, -1, "cubic").total))
        worst = max(worst, compare(interaction_trace_dense(dense.level(k + 1), "cubic"), interaction_trace_mixture(mix, k, "cubic")))
        worst = max(worst, compare(admissibility_defect(dense, k), admissibility_defect(mix, k)))
    worst = max(worst, compare(energy(dense, 1, -1, "quintic").total, energy(mix, 1, -1, "quintic").total))
    return _verdict(worst, 1e-8)


def verify_suite(selection=None, **options):
    """Run the named checks (all when ``selection`` is empty) and log the summary table.

    ``options`` left as None are ignored; the rest go to every selected check
    that declares them.
    """
    options = {key: value for key, value in options.items() if value is not None}
    selection = list(selection or available_checks())
    unknown = [name for name in selection if name not in _REGISTRY]
    if unknown:
        raise DomainError("unknown check(s) {}; available: {}".format(unknown, ", ".join(available_checks())))
    results = []
    for name in tqdm(selection, desc="verify"):
        anchor, tolerance, fn, accepted = _REGISTRY[name]
        start = time.time()
        value, passed = fn(**{key: options[key] for key in accepted if key in options})
        results.append(CheckResult(name, anchor, float(value), tolerance, passed, time.time() - start))
        logging.info("[Verify] {}".format(results[-1].row()))
    return results

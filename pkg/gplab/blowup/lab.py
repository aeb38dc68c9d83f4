"""Glassey blowup prediction, blowup-time detection and rate fitting."""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.optimize
import scipy.stats
from tqdm import tqdm

from gplab.errors import DomainError
from gplab.hierarchy.functionals import diagnostic, energy, virial, virial_dt
from gplab.hierarchy.state import ProductMixture
from gplab.nls.engine import NlsProblem, check_mu, check_power, default_diagnostics, nls_evolve

# lower-bound exponents p in ||Gamma(t)||_{H^s} >= c / (T* - t)^p
RATE_BOUNDS = {
    "cubic_s_gt_n2": 1.0,
    "cubic_s_gt_nm1_2": 0.5,
    "quintic_s_gt_n2": 0.5,
    "quintic_s_gt_nm1_2": 0.25,
}
RATE_TOL = 0.05
MIN_FIT_SAMPLES = 8
MIN_DETECT_SAMPLES = 10
TRIAL_EXPONENTS = np.arange(5, 41) / 20.0


@dataclass(frozen=True)
class GlasseyBound:
    applicable: bool
    t_bound: Optional[float]
    e0: float
    v0: float
    vdot0: float


@dataclass(frozen=True)
class BlowupDetection:
    t_star: Optional[float]
    confidence: float
    exponent: Optional[float] = None
    samples: int = 0

    @property
    def detected(self):
        return self.t_star is not None


@dataclass(frozen=True)
class BlowupReport:
    t_star: Optional[float]
    t_bound: Optional[float]
    fitted_exponent: Optional[float]
    fitted_constant: Optional[float]
    bound_exponent: float
    verdict: bool
    r_squared: float = float("nan")
    regime: str = ""
    s: float = 1.0
    meta: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "t_star": self.t_star,
            "t_bound": self.t_bound,
            "fitted_exponent": self.fitted_exponent,
            "fitted_constant": self.fitted_constant,
            "bound_exponent": self.bound_exponent,
            "verdict": bool(self.verdict),
            "r_squared": self.r_squared,
            "regime": self.regime,
            "s": self.s,
            **self.meta,
        }


def glassey_bound(e0, v0, vdot0):
    """Positive root of v0 + vdot0 t + 8 e0 t^2, an upper bound on the blowup time."""
    if e0 >= 0:
        return GlasseyBound(False, None, e0, v0, vdot0)
    if not v0 > 0:
        raise DomainError("Glassey bound needs V_k(0) > 0, got {}".format(v0))
    a = 8.0 * e0
    disc = vdot0 ** 2 - 4.0 * a * v0
    t_bound = (-vdot0 - np.sqrt(disc)) / (2.0 * a)
    return GlasseyBound(True, float(t_bound), e0, v0, vdot0)


def norm_key(s):
    return "norm_H{:g}".format(s)


def norm_series(traj, s):
    """||Gamma(t)||_{H^s} per sample, recorded or evaluated on the states."""
    key = norm_key(s)
    if key in traj.diagnostics:
        return traj.series(key)
    if not traj.has_states:
        raise DomainError("trajectory carries neither {} nor states".format(key))
    fn = diagnostic(key, mu=-1, power="cubic")
    return np.array([fn(state) for state in traj.states])


def _final_decade(times, norms):
    top = norms[-1]
    index = len(norms) - 1
    while index > 0 and norms[index - 1] >= top / 10.0:
        index -= 1
    return times[index:], norms[index:]


def _reciprocal_fit(times, norms, p):
    fit = scipy.stats.linregress(times, norms ** (-1.0 / p))
    return fit.rvalue ** 2, fit


def detect_blowup(traj, s=1.0):
    """Extrapolate T* from ||Gamma(t)||^(-1/p) -> 0, p chosen for the best linear fit."""
    times, norms = traj.times, norm_series(traj, s)
    growth = norms[-1] / max(norms[0], np.finfo(float).tiny)
    halted = traj.halted is not None and traj.halted.reason == "norm threshold"
    if not halted and growth < 10.0:
        logging.info("[BlowupLab] no blowup in window: growth x{:.3g}".format(growth))
        return BlowupDetection(None, 0.0)
    t_dec, n_dec = _final_decade(times, norms)
    if len(t_dec) < MIN_DETECT_SAMPLES:
        raise DomainError(
            "{} samples in the final decade of growth, need {}".format(len(t_dec), MIN_DETECT_SAMPLES)
        )

    scores = [_reciprocal_fit(t_dec, n_dec, p)[0] for p in TRIAL_EXPONENTS]
    best = int(np.nanargmax(scores))
    p, r2 = TRIAL_EXPONENTS[best], scores[best]
    lo, hi = TRIAL_EXPONENTS[max(best - 1, 0)], TRIAL_EXPONENTS[min(best + 1, len(TRIAL_EXPONENTS) - 1)]
    if hi > lo:
        refined = scipy.optimize.minimize_scalar(
            lambda q: -_reciprocal_fit(t_dec, n_dec, q)[0], bounds=(lo, hi), method="bounded"
        )
        if -refined.fun > r2:
            p, r2 = float(refined.x), float(-refined.fun)
    _, fit = _reciprocal_fit(t_dec, n_dec, p)
    if not fit.slope < 0:
        return BlowupDetection(None, r2, p, len(t_dec))
    t_star = -fit.intercept / fit.slope
    if not t_star > t_dec[-1]:
        logging.warning("[BlowupLab] extrapolated t*={:.6g} precedes the last sample".format(t_star))
        return BlowupDetection(None, r2, p, len(t_dec))
    logging.info("[BlowupLab] t*={:.8g} p={:.3f} R^2={:.6f}".format(t_star, p, r2))
    return BlowupDetection(float(t_star), float(r2), float(p), len(t_dec))


def fit_rate(traj, t_star, s, regime, t_bound=None):
    """Log-log regression of ||Gamma(t)||_{H^s} against T* - t over the final decade."""
    if regime not in RATE_BOUNDS:
        raise DomainError("unknown regime {!r}; available: {}".format(regime, sorted(RATE_BOUNDS)))
    times, norms = traj.times, norm_series(traj, s)
    usable = times < t_star
    t_dec, n_dec = _final_decade(times[usable], norms[usable])
    if len(t_dec) < MIN_FIT_SAMPLES:
        raise DomainError("{} usable samples for the rate fit, need {}".format(len(t_dec), MIN_FIT_SAMPLES))
    fit = scipy.stats.linregress(np.log(t_star - t_dec), np.log(n_dec))
    exponent = -fit.slope
    bound = RATE_BOUNDS[regime]
    return BlowupReport(
        t_star=float(t_star),
        t_bound=t_bound,
        fitted_exponent=float(exponent),
        fitted_constant=float(np.exp(fit.intercept)),
        bound_exponent=bound,
        verdict=bool(exponent >= bound - RATE_TOL),
        r_squared=float(fit.rvalue ** 2),
        regime=regime,
        s=s,
    )


def virial_second_difference(traj, k=1):
    """(interior times, second divided differences of V_k), nonuniform spacing allowed."""
    v = traj.series("V_{}".format(k))
    t = traj.times
    h1, h2 = np.diff(t)[:-1], np.diff(t)[1:]
    second = 2.0 * ((v[2:] - v[1:-1]) / h2 - (v[1:-1] - v[:-2]) / h1) / (h1 + h2)
    return t[1:-1], second


def energy_threshold(base, k, power, margin=0.0):
    """Amplitude A where E_k(A base) + margin * kinetic_k(A base) changes sign (focusing)."""
    if base.norm() == 0:
        raise DomainError("base field is zero")

    def reduced(a):
        report = energy(ProductMixture.single(base * a), k, -1, power)
        return (report.total + margin * report.kinetic) / a ** (2 * k)

    hi = 1.0
    for _ in range(60):
        if reduced(hi) < 0:
            break
        hi *= 2.0
    else:
        raise DomainError("no negative-energy amplitude found")
    lo = min(1e-3, 0.5 * hi)
    return scipy.optimize.brentq(reduced, lo, hi, xtol=1e-14, rtol=1e-13)


def negative_energy_state(base, k, power, mu=-1, margin=0.1):
    """(amplitude, mixture) with E_k < 0 by at least ``margin`` of the kinetic term."""
    if check_mu(mu) != -1:
        raise DomainError("negative energy needs the focusing sign mu = -1")
    check_power(power)
    amplitude = energy_threshold(base, k, power, margin)
    return amplitude, ProductMixture.single(base * amplitude)


def run_blowup(phi, power, controller, t_end, sample_every, s=1.0, regime=None, k=1):
    """One focusing run: Glassey bound, T* detection and rate fit."""
    regime = regime or "{}_s_gt_n2".format(power)
    state = ProductMixture.single(phi)
    e0 = energy(state, k, -1, power).total
    bound = glassey_bound(e0, virial(state, k), virial_dt(state, k))

    diagnostics = default_diagnostics(-1, power)
    for name in (norm_key(s), "V_{}".format(k), "E_{}".format(k)):
        diagnostics[name] = diagnostic(name, -1, power)
    traj = nls_evolve(NlsProblem(-1, power, phi), controller, t_end, sample_every, diagnostics, keep_states=False)
    detection = detect_blowup(traj, s)
    meta = {"e0": e0, "halt_time": traj.halted.time if traj.halted else None, "confidence": detection.confidence}
    if not detection.detected:
        return BlowupReport(None, bound.t_bound, None, None, RATE_BOUNDS[regime], False, regime=regime, s=s, meta=meta), traj
    report = fit_rate(traj, detection.t_star, s, regime, bound.t_bound)
    return BlowupReport(**{**report.__dict__, "meta": meta}), traj


def _sweep_one(base, amplitude, power, controller, t_end, sample_every, s, regime):
    report, _ = run_blowup(base * amplitude, power, controller, t_end, sample_every, s, regime)
    return BlowupReport(**{**report.__dict__, "meta": {**report.meta, "amplitude": amplitude}})


def sweep_blowup(base, amplitudes, power, controller, t_end, sample_every, s=1.0, regime=None, num_workers=1):
    """One BlowupReport per amplitude, runs in parallel when ``num_workers > 1``."""
    args = [(base, a, power, controller, t_end, sample_every, s, regime) for a in amplitudes]
    if num_workers <= 1:
        return [_sweep_one(*arg) for arg in tqdm(args)]
    with ProcessPoolExecutor(max_workers=num_workers) as executor, tqdm(total=len(args)) as progress:
        futures = []
        for arg in args:
            future = executor.submit(_sweep_one, *arg)
            future.add_done_callback(lambda p: progress.update())
            futures.append(future)
        return [future.result() for future in futures]

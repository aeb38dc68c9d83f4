"""Level norms of hierarchy states and the quasi-norms built from them.

The H^s quasi-norm of a state is inf{lambda > 0 : sum_k lambda^-k a_k <= 1}
where a_k is a norm of level k. Level sequences are finite heads with either a
zero or a geometric tail.
"""

import logging
import re
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.integrate
import scipy.optimize

from gplab.errors import DomainError
from gplab.hierarchy.collision import apply_collision
from gplab.hierarchy.state import (
    DenseKernel,
    HierarchyTruncation,
    ProductMixture,
    apply_kernel_symbol,
    symmetry_report,
)
from gplab.nls.engine import check_power
from gplab.spectral.grid import Field, apply_multiplier, quadrature_inner, sobolev_symbol

HERMITIAN_TOL = 1e-10
DEFAULT_LEVELS = 4


@dataclass(frozen=True)
class NormSequence:
    """a_1..a_K with a_k = a_K rho^(k-K) beyond K, or zero when ``tail_ratio`` is None."""

    head: Tuple[float, ...]
    tail_ratio: Optional[float] = None

    def __post_init__(self):
        head = tuple(float(a) for a in self.head)
        if not head:
            raise DomainError("a norm sequence needs at least one level")
        if any(not np.isfinite(a) or a < 0 for a in head):
            raise DomainError("level norms must be finite and non-negative: {}".format(head))
        if self.tail_ratio is not None and not (np.isfinite(self.tail_ratio) and self.tail_ratio >= 0):
            raise DomainError("geometric tail ratio must be finite and >= 0, got {}".format(self.tail_ratio))
        object.__setattr__(self, "head", head)

    @classmethod
    def fitted(cls, head):
        """Geometric tail through the two highest levels."""
        head = tuple(head)
        if len(head) < 2:
            return cls(head)
        ratio = head[-1] / head[-2] if head[-2] > 0 else 0.0
        return cls(head, ratio)

    @property
    def depth(self):
        return len(self.head)

    @property
    def ratio(self):
        # a zero top level kills the tail whatever its ratio
        if self.tail_ratio is None or self.head[-1] == 0:
            return 0.0
        return self.tail_ratio

    def __add__(self, other):
        if self.depth != other.depth:
            raise DomainError("cannot add sequences of depth {} and {}".format(self.depth, other.depth))
        head = tuple(a + b for a, b in zip(self.head, other.head))
        if self.ratio == 0 and other.ratio == 0:
            return NormSequence(head)
        if self.ratio == 0 and self.head[-1] == 0:
            return NormSequence(head, other.ratio)
        if other.ratio == 0 and other.head[-1] == 0:
            return NormSequence(head, self.ratio)
        if np.isclose(self.ratio, other.ratio, rtol=1e-14, atol=0):
            return NormSequence(head, self.ratio)
        raise DomainError("tails with ratios {} and {} do not add to a geometric tail".format(self.ratio, other.ratio))

    def scaled(self, c):
        return NormSequence(tuple(abs(c) * a for a in self.head), self.tail_ratio)

    def weighted_sum(self, lam):
        """sum_k a_k lam^-k, tail in closed form."""
        k = np.arange(1, self.depth + 1)
        total = float(np.sum(np.array(self.head) * lam ** (-k)))
        rho = self.ratio
        if rho > 0:
            q = rho / lam
            if q >= 1:
                return np.inf
            total += self.head[-1] * lam ** (-self.depth) * q / (1.0 - q)
        return total


def seq_quasinorm(a, rtol=1e-12):
    """The infimum lambda with sum_k a_k lambda^-k <= 1, by bisection."""
    head = np.array(a.head)
    if not np.any(head > 0):
        return 0.0
    k = np.arange(1, a.depth + 1)
    root = float(np.max(head ** (1.0 / k)))
    rho = a.ratio
    lo = max(root, rho * (1.0 + 1e-12))
    hi = 2.0 * max(root, rho) * (1.0 + 1e-9)

    def excess(lam):
        return a.weighted_sum(lam) - 1.0

    if excess(lo) <= 0:
        return lo
    if not excess(hi) < 0:
        raise DomainError("sequence sum does not fall below 1 in [{:.6g}, {:.6g}]".format(lo, hi))
    return scipy.optimize.bisect(excess, lo, hi, xtol=1e-14 * hi, rtol=max(rtol, 1e-15), maxiter=400)


def xi_norm(a, xi):
    """sum_k xi^k a_k for 0 < xi < 1."""
    if not 0 < xi < 1:
        raise DomainError("xi must lie in (0, 1), got {}".format(xi))
    k = np.arange(1, a.depth + 1)
    total = float(np.sum(np.array(a.head) * xi ** k))
    rho = a.ratio
    if rho > 0:
        if xi * rho >= 1:
            raise DomainError("tail ratio {} diverges at xi={}".format(rho, xi))
        total += a.head[-1] * xi ** a.depth * (xi * rho) / (1.0 - xi * rho)
    return total


def kernel_hs_norm(g, s):
    """|| prod_j S_s(x_j) S_s(x'_j) gamma ||_{L^2}."""
    if not np.isfinite(s):
        raise DomainError("s must be finite")
    if s == 0:
        return g.l2_norm()
    return apply_kernel_symbol(g, sobolev_symbol(s)).l2_norm()


def mixture_hs_norm(mix, k, s):
    """Gram evaluation: sum_{a,b} w_a w_b |<phi_a, phi_b>_{H^s}|^{2k}, square-rooted."""
    gram = mix.gram(sobolev_symbol(s) if s != 0 else None)
    w = mix.weights
    return float(np.sqrt(max(w @ (np.abs(gram) ** (2 * k)) @ w, 0.0)))


def trace_norm_k(state, k=None):
    """Tr|S gamma S| with S = (1 - Laplacian)^(1/2) on every particle."""
    if isinstance(state, ProductMixture):
        if k is None:
            raise DomainError("mixture trace norm needs the level k")
        h1 = np.array([f.sobolev_norm(1.0) for f in state.fields])
        return float(np.sum(state.weights * h1 ** (2 * k)))
    if k is not None and k != state.order:
        raise DomainError("kernel has order {}, asked for level {}".format(state.order, k))
    hermitian, _ = symmetry_report(state)
    scale = max(1.0, float(np.max(np.abs(state.values))))
    if hermitian > HERMITIAN_TOL * scale:
        raise DomainError("trace norm needs a hermitian kernel, defect {:.3g}".format(hermitian))
    sandwiched = apply_kernel_symbol(state, sobolev_symbol(1.0))
    matrix = sandwiched.cell_volume * sandwiched.as_matrix()
    return float(np.sum(np.linalg.svd(matrix, compute_uv=False)))


def level_norms(state, s, levels=None, kind="hs"):
    """a_1..a_K of a mixture or a dense truncation, H^s or trace norms."""
    if isinstance(state, HierarchyTruncation):
        kernels = state.levels if levels is None else state.levels[:levels]
        if kind == "hs":
            return [kernel_hs_norm(g, s) for g in kernels]
        return [trace_norm_k(g) for g in kernels]
    if isinstance(state, DenseKernel):
        raise DomainError("level norms need a whole state, not a single kernel")
    levels = levels or DEFAULT_LEVELS
    if kind == "hs":
        return [mixture_hs_norm(state, k, s) for k in range(1, levels + 1)]
    return [trace_norm_k(state, k) for k in range(1, levels + 1)]


def hierarchy_hs_quasinorm(state, s, levels=None, tail="geometric"):
    head = level_norms(state, s, levels)
    a = NormSequence.fitted(head) if tail == "geometric" else NormSequence(head)
    return seq_quasinorm(a)


def trace_quasinorm(state, levels=None, tail="geometric"):
    head = level_norms(state, 1.0, levels, kind="trace")
    a = NormSequence.fitted(head) if tail == "geometric" else NormSequence(head)
    return seq_quasinorm(a)


def level_key(k, s):
    return "a{}_H{:g}".format(k, s)


_LEVEL_KEY = re.compile(r"^a(\d+)_H(.+)$")


def level_series(traj, s, levels=None):
    """Per-sample level norms, shape (samples, K).

    Taken from recorded ``a{k}_H{s}`` diagnostics when present, otherwise
    evaluated on the stored states.
    """
    recorded = sorted(
        int(match.group(1))
        for match in map(_LEVEL_KEY.match, traj.diagnostics)
        if match and float(match.group(2)) == float(s)
    )
    if recorded and (levels is None or levels <= len(recorded)):
        depth = levels or len(recorded)
        return np.column_stack([traj.series(level_key(k, s)) for k in range(1, depth + 1)])
    if not traj.has_states:
        raise DomainError("trajectory carries neither level norms for s={} nor states".format(s))
    return np.array([level_norms(state, s, levels) for state in traj.states])


def level_integrals(traj, s, levels=None):
    if len(traj) < 2:
        raise DomainError("time integrals need at least 2 samples, got {}".format(len(traj)))
    series = level_series(traj, s, levels)
    return np.abs(scipy.integrate.trapezoid(series, traj.times, axis=0))


def l1t_seq_quasinorm(traj, s, levels=None, tail="geometric"):
    """Quasi-norm of the time-integrated level norms over the recorded interval."""
    integrals = level_integrals(traj, s, levels)
    a = NormSequence.fitted(integrals) if tail == "geometric" else NormSequence(integrals)
    value = seq_quasinorm(a)
    logging.debug("[Norms] L1 quasi-norm over {} samples: {:.12g}".format(len(traj), value))
    return value


def c_seq_quasinorm(traj, s, levels=None, tail="geometric"):
    """Supremum over samples of the pointwise quasi-norm."""
    series = level_series(traj, s, levels)
    build = NormSequence.fitted if tail == "geometric" else NormSequence
    return max(seq_quasinorm(build(row)) for row in series)


def _pairings(left, right):
    return np.array([[quadrature_inner(f, g) for g in right] for f in left])


def mixture_collision_hs_norm(mix, k, s, power):
    """|| B gamma^(k+1) ||_{H^s} (cubic) or || Q gamma^(k+2) ||_{H^s} (quintic) of a mixture.

    The collision term of a product mixture is a sum of rank-one tensors whose
    one-particle factors are S phi_r and S(|phi_r|^(2 sigma) phi_r), so its
    norm follows from the pairings of those factors without a dense kernel.
    """
    sigma = check_power(power)
    if isinstance(mix, Field):
        mix = ProductMixture.single(mix)
    plain = mix.fields
    weighted = [Field(f.grid, np.abs(f.values) ** (2 * sigma) * f.values) for f in plain]
    if s != 0:
        plain = [apply_multiplier(f, sobolev_symbol(s)) for f in plain]
        weighted = [apply_multiplier(f, sobolev_symbol(s)) for f in weighted]
    a = _pairings(plain, plain)
    ab = _pairings(plain, weighted)
    ba = _pairings(weighted, plain)
    bb = _pairings(weighted, weighted)
    ac = a.conj()

    # ket-ket and bra-bra terms on the same particle, then the ket-bra cross terms
    terms = k * (bb * a ** (k - 1) * ac ** k + a ** k * bb.conj() * ac ** (k - 1))
    terms = terms - k ** 2 * (ba * ab.conj() + ab * ba.conj()) * (a * ac) ** (k - 1)
    if k > 1:
        mixed = ba * ab
        terms = terms + k * (k - 1) * (mixed * a ** (k - 2) * ac ** k + a ** k * mixed.conj() * ac ** (k - 2))
    w = mix.weights
    return float(np.sqrt(max((w @ terms @ w).real, 0.0)))


def collision_level_norms(state, s, power, levels=None):
    """H^s norms of the collision term at levels 1..K.

    A dense truncation of depth K only reaches levels up to K - sigma.
    """
    sigma = check_power(power)
    if isinstance(state, HierarchyTruncation):
        depth = state.depth - sigma if levels is None else levels
        if depth < 1 or depth + sigma > state.depth:
            raise DomainError(
                "collision norms up to level {} need depth {}, the truncation keeps {}".format(
                    depth, depth + sigma, state.depth
                )
            )
        return [kernel_hs_norm(apply_collision(state.level(k + sigma), power).kernel, s) for k in range(1, depth + 1)]
    if isinstance(state, DenseKernel):
        raise DomainError("collision norms need a whole state, not a single kernel")
    levels = levels or DEFAULT_LEVELS
    return [mixture_collision_hs_norm(state, k, s, power) for k in range(1, levels + 1)]


def collision_l1t_quasinorm(traj, s, power, levels=None, tail="geometric"):
    """Quasi-norm of the time-integrated collision norms || B Gamma ||_{L^1 H^s}."""
    if len(traj) < 2:
        raise DomainError("time integrals need at least 2 samples, got {}".format(len(traj)))
    if not traj.has_states:
        raise DomainError("collision norms need a trajectory with states")
    series = np.array([collision_level_norms(state, s, power, levels) for state in traj.states])
    integrals = np.abs(scipy.integrate.trapezoid(series, traj.times, axis=0))
    a = NormSequence.fitted(integrals) if tail == "geometric" else NormSequence(integrals)
    value = seq_quasinorm(a)
    logging.debug("[Norms] collision L1 quasi-norm over {} samples: {:.12g}".format(len(traj), value))
    return value

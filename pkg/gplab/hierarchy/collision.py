"""Cubic and quintic collision operators on dense kernels.

Deltas are exact index restrictions on the grid. B_{j,+} puts the extra
particle at x_j on both blocks, B_{j,-} at x'_j; Q does the same with two extra
particles. The full operators sum (plus - minus) over j = 1..k.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.fft

from gplab.errors import BudgetError, DomainError
from gplab.hierarchy.state import AXIS_LABELS, DenseKernel
from gplab.nls.engine import check_power
from gplab.spectral.grid import FFT_WORKERS

MAX_MOMENTUM_COST = 2 ** 30


@dataclass(frozen=True)
class CollisionResult:
    kernel: DenseKernel
    source_order: int
    j_range: Tuple[int, ...]

    def anti_hermitian_defect(self):
        return float(np.max(np.abs(self.kernel.values + self.kernel.conj_transpose().values)))

    def diagonal_defect(self):
        return float(np.max(np.abs(self.kernel.diagonal())))


def _check_sign(sign):
    if sign not in ("+", "-"):
        raise DomainError("sign must be '+' or '-', got {!r}".format(sign))


def _restrict(g, k, j, sign, extra):
    if not 1 <= j <= k:
        raise DomainError("j={} out of range 1..{}".format(j, k))
    _check_sign(sign)
    ket, bra = AXIS_LABELS[:k], AXIS_LABELS[k : 2 * k]
    target = ket[j - 1] if sign == "+" else bra[j - 1]
    spec = "{0}{2}{1}{2}->{0}{1}".format(ket, bra, target * extra)
    return DenseKernel(k, g.grid, np.einsum(spec, g.values))


def apply_B_half(g, j, sign):
    """B_{j,sign}: order k+1 -> order k."""
    if g.order < 2:
        raise DomainError("B needs a source of order >= 2, got {}".format(g.order))
    return _restrict(g, g.order - 1, j, sign, extra=1)


def apply_Q_half(g, j, sign):
    """Q_{j,sign}: order k+2 -> order k."""
    if g.order < 3:
        raise DomainError("Q needs a source of order >= 3, got {}".format(g.order))
    return _restrict(g, g.order - 2, j, sign, extra=2)


def _full(g, half, k, source_order):
    values = np.zeros((g.grid.points,) * (2 * k), dtype=np.complex128)
    for j in range(1, k + 1):
        values += half(g, j, "+").values - half(g, j, "-").values
    return CollisionResult(DenseKernel(k, g.grid, values), source_order, tuple(range(1, k + 1)))


def apply_B(g):
    if g.order < 2:
        raise DomainError("B needs a source of order >= 2, got {}".format(g.order))
    return _full(g, apply_B_half, g.order - 1, g.order)


def apply_Q(g):
    if g.order < 3:
        raise DomainError("Q needs a source of order >= 3, got {}".format(g.order))
    return _full(g, apply_Q_half, g.order - 2, g.order)


def apply_collision(g, power):
    return apply_B(g) if check_power(power) == 1 else apply_Q(g)


def apply_B_momentum(g):
    """B^(k) evaluated as the shifted double momentum sum.

    With G the transform of the order-(k+1) source, the output transform at
    (p_k; p'_k) sums G over the extra pair (q, q') with p_j shifted by q + q'
    (plus term) or p'_j shifted (minus term), then transforms back.
    """
    if g.order < 2:
        raise DomainError("B needs a source of order >= 2, got {}".format(g.order))
    k, m = g.order - 1, g.grid.points
    cost = m ** (2 * k + 2)
    if cost > MAX_MOMENTUM_COST:
        raise BudgetError("apply_B_momentum", cost, MAX_MOMENTUM_COST)

    spectrum = scipy.fft.fftn(g.values, workers=FFT_WORKERS)
    out = np.zeros((m,) * (2 * k), dtype=np.complex128)
    head = (slice(None),) * k
    for a in range(m):
        for b in range(m):
            block = spectrum[head + (a,) + head + (b,)]
            for j in range(k):
                out += np.roll(block, a + b, axis=j) - np.roll(block, a + b, axis=k + j)
    out = scipy.fft.ifftn(out, workers=FFT_WORKERS) / m ** 2
    logging.debug("[CollisionOps] momentum oracle order {} at m={}".format(k, m))
    return DenseKernel(k, g.grid, out)


def interaction_trace_dense(g, power):
    """Tr[B_{1,+} g] (cubic) or Tr[Q_{1,+} g] (quintic) on the diagonal."""
    half = apply_B_half if check_power(power) == 1 else apply_Q_half
    return half(g, 1, "+").trace().real


def interaction_trace_mixture(mix, k, power):
    """sum_r w_r ||phi_r||^{2(k-1)} ||phi_r||_{2 sigma + 2}^{2 sigma + 2}"""
    p = 2 * check_power(power) + 2
    return float(
        sum(w * f.mass() ** (k - 1) * f.lp_norm(p) ** p for w, f in mix.components)
    )

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from gplab.errors import DomainError, InvariantError


@dataclass(frozen=True)
class Halt:
    reason: str
    time: float


@dataclass(frozen=True)
class TrajectoryRecord:
    """Time-stamped states plus named diagnostic series.

    ``states`` holds one state per sample: a ``Field`` for one-particle runs,
    a ``ProductMixture`` for mixture runs, a ``HierarchyTruncation`` for the
    dense integrator, or ``None`` when only diagnostics were kept.
    """

    times: np.ndarray
    states: Tuple = ()
    diagnostics: Dict[str, np.ndarray] = field(default_factory=dict)
    halted: Optional[Halt] = None
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1:
            raise DomainError("times must be one-dimensional")
        steps = np.diff(times)
        if np.any(steps == 0) or (steps.size and not (np.all(steps > 0) or np.all(steps < 0))):
            raise InvariantError("monotone-times", "sample times must be strictly monotone")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", tuple(self.states))
        diagnostics = {}
        for name, series in self.diagnostics.items():
            series = np.asarray(series, dtype=float)
            if series.shape != times.shape:
                raise DomainError(
                    "diagnostic {} has {} samples for {} times".format(name, series.size, times.size)
                )
            diagnostics[name] = series
        object.__setattr__(self, "diagnostics", diagnostics)

    def __len__(self):
        return self.times.size

    @property
    def has_states(self):
        return len(self.states) == len(self) and all(s is not None for s in self.states)

    def series(self, name):
        if name not in self.diagnostics:
            raise DomainError(
                "diagnostic {!r} not recorded; available: {}".format(name, sorted(self.diagnostics))
            )
        return self.diagnostics[name]

    def _take(self, index):
        index = np.asarray(index)
        states = tuple(self.states[i] for i in index) if self.has_states else ()
        return TrajectoryRecord(
            times=self.times[index],
            states=states,
            diagnostics={k: v[index] for k, v in self.diagnostics.items()},
            halted=self.halted,
            meta=dict(self.meta),
        )

    def subsample(self, stride):
        """Every ``stride``-th sample, always keeping the first and last."""
        index = list(range(0, len(self), stride))
        if index[-1] != len(self) - 1:
            index.append(len(self) - 1)
        return self._take(index)

    def window(self, t0, t1):
        lo, hi = min(t0, t1), max(t0, t1)
        index = np.nonzero((self.times >= lo) & (self.times <= hi))[0]
        if index.size == 0:
            raise DomainError("no samples in [{}, {}]".format(lo, hi))
        return self._take(index)

    def until(self, t):
        return self.window(self.times[0], t)

    def table(self, names):
        columns = [self.times] + [self.series(name) for name in names]
        return np.column_stack(columns)

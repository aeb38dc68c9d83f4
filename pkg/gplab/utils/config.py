import copy
import logging
import os

import numpy as np
import yaml

from gplab.blowup.lab import RATE_BOUNDS
from gplab.errors import BudgetError, ConfigError, DomainError, GPLabError
from gplab.hierarchy.functionals import diagnostic, required_level
from gplab.hierarchy.state import ProductMixture, check_budget
from gplab.nls.engine import SIGMA, StepController
from gplab.spectral.grid import Grid, make_reference, random_smooth_field

SCENARIOS = ("nls", "mixture", "truncated-hierarchy", "blowup", "norms")
OUTPUT_ROOT_ENV = "GPLAB_OUTPUT_ROOT"
CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")

default_experiment_config = {
    "scenario": "mixture",
    "equation": "cubic",
    "mu": 1,
    "grid": {
        "dim": 1,
        "points": 256,
        "halfwidth": 16.0,
    },
    #  components: kind + reference parameters + weight; randomize: number of
    #  random smooth components drawn from ``seed`` instead
    "initial": {
        "components": [{"kind": "gaussian", "weight": 1.0, "width": 1.0}],
        "randomize": None,
    },
    "integrator": {
        "dt": 1e-3,
        "dt_min": 1e-9,
        "t_end": 1.0,
        "sample_every": 1e-2,
        "halt_norm": None,
        "safety": 0.5,
        "recovery": 1.25,
    },
    "hierarchy": {
        "levels": 2,
        "closure": "mixture_reference",
    },
    "diagnostics": ["mass", "E_1", "V_1"],
    "blowup": {
        "s": 1.0,
        "k": 1,
        "regime": None,
        "amplitudes": None,
    },
    "norms": {
        "s": [0.0, 1.0],
        "levels": 4,
    },
    "conservation_tol": None,
    "plots": False,
    "seed": 0,
    "num_workers": 1,
    "output_dir": "exp",
}


def merge_config(base, override, prefix=""):
    """Section-wise update of ``base``; unknown keys are rejected."""
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        name = prefix + str(key)
        if key not in merged:
            raise ConfigError(name, "unknown key; expected one of {}".format(sorted(merged)))
        if isinstance(merged[key], dict) and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(name, "expected a section, got {!r}".format(value))
            merged[key] = merge_config(merged[key], value, name + ".")
        else:
            merged[key] = value
    return merged


def load_config(path=None, overrides=None):
    """Default config, updated by the YAML file at ``path`` and then by ``overrides``."""
    config = copy.deepcopy(default_experiment_config)
    if path is not None:
        try:
            with open(path, "r") as f:
                loaded = yaml.load(f, Loader=yaml.Loader)
        except OSError as e:
            raise ConfigError("config", "cannot read {}: {}".format(path, e))
        except yaml.YAMLError as e:
            raise ConfigError("config", "invalid YAML in {}: {}".format(path, e))
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("config", "{} does not hold a mapping".format(path))
        loaded = loaded or {}
        config = merge_config(config, loaded.get("experiment", loaded))
    return merge_config(config, overrides)


def bundled_config(name):
    return os.path.join(CONFIG_DIR, "{}.yaml".format(name))


def _positive(field, value):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(field, "expected a number, got {!r}".format(value))
    if not value > 0:
        raise ConfigError(field, "must be positive, got {}".format(value))
    return value


class ExperimentConfig:
    def __init__(self, config=None):
        if not isinstance(config, dict):
            logging.warning("[ExperimentConfig] config is not a dict, fall into default config.")
            config = default_experiment_config
        self.config = merge_config(default_experiment_config, config)

        for key in self.config:
            setattr(self, key, self.config[key])

        self.validate()

    @property
    def sigma(self):
        return SIGMA[self.equation]

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError("scenario", "expected one of {}, got {!r}".format(SCENARIOS, self.scenario))
        if self.equation not in SIGMA:
            raise ConfigError("equation", "expected one of {}, got {!r}".format(sorted(SIGMA), self.equation))
        if self.mu not in (-1, 1):
            raise ConfigError("mu", "expected -1 (focusing) or 1 (defocusing), got {!r}".format(self.mu))
        if not isinstance(self.seed, int):
            raise ConfigError("seed", "expected an integer, got {!r}".format(self.seed))
        if not isinstance(self.num_workers, int) or self.num_workers < 1:
            raise ConfigError("num_workers", "expected a positive integer, got {!r}".format(self.num_workers))
        try:
            self.build_grid()
        except GPLabError as e:
            raise ConfigError("grid", str(e))
        self.build_controller()

        integrator = self.integrator
        if not integrator["t_end"]:
            raise ConfigError("integrator.t_end", "must be nonzero")
        _positive("integrator.sample_every", integrator["sample_every"])

        levels = self.hierarchy["levels"]
        if not isinstance(levels, int) or levels < 1:
            raise ConfigError("hierarchy.levels", "expected an integer >= 1, got {!r}".format(levels))
        if self.hierarchy["closure"] not in ("zero", "mixture_reference"):
            raise ConfigError("hierarchy.closure", "expected zero or mixture_reference")
        if self.scenario == "truncated-hierarchy":
            try:
                for k in range(1, levels + 1):
                    check_budget(self.build_grid(), k)
            except (BudgetError, DomainError) as e:
                raise ConfigError("hierarchy.levels", str(e))

        if not isinstance(self.diagnostics, list):
            raise ConfigError("diagnostics", "expected a list of names")
        for name in self.diagnostics:
            try:
                diagnostic(name, self.mu, self.equation)
            except DomainError as e:
                raise ConfigError("diagnostics", str(e))
            needed = required_level(name, self.equation)
            if self.scenario == "truncated-hierarchy" and needed is not None and needed > levels:
                raise ConfigError(
                    "diagnostics", "{} reads level {}, the truncation keeps {}".format(name, needed, levels)
                )

        regime = self.blowup["regime"]
        if regime is not None and regime not in RATE_BOUNDS:
            raise ConfigError("blowup.regime", "expected one of {}, got {!r}".format(sorted(RATE_BOUNDS), regime))
        if self.blowup["amplitudes"] is not None:
            for a in self.blowup["amplitudes"]:
                _positive("blowup.amplitudes", a)
        if not isinstance(self.norms["levels"], int) or self.norms["levels"] < 1:
            raise ConfigError("norms.levels", "expected an integer >= 1")
        if self.conservation_tol is not None:
            _positive("conservation_tol", self.conservation_tol)

        self.initial_state()

    def build_grid(self):
        grid = self.grid
        return Grid(grid["dim"], grid["points"], grid["halfwidth"])

    def build_controller(self):
        integrator = self.integrator
        dt = _positive("integrator.dt", integrator["dt"])
        halt_norm = integrator["halt_norm"]
        try:
            return StepController(
                dt=dt,
                dt_min=float(integrator["dt_min"]),
                halt_norm=np.inf if halt_norm is None else _positive("integrator.halt_norm", halt_norm),
                safety=float(integrator["safety"]),
                recovery=float(integrator["recovery"]),
            )
        except DomainError as e:
            raise ConfigError("integrator", str(e))

    def initial_state(self):
        """The initial product mixture; randomized components depend on ``seed`` only."""
        grid = self.build_grid()
        count = self.initial["randomize"]
        if count:
            if not isinstance(count, int) or count < 1:
                raise ConfigError("initial.randomize", "expected a positive integer, got {!r}".format(count))
            rng = np.random.default_rng(self.seed)
            return ProductMixture(tuple((1.0 / count, random_smooth_field(grid, rng)) for _ in range(count)))

        components = self.initial["components"]
        if not components:
            raise ConfigError("initial.components", "at least one component is required")
        built = []
        for index, spec in enumerate(components):
            field = "initial.components[{}]".format(index)
            params = dict(spec)
            kind = params.pop("kind", None)
            weight = params.pop("weight", 1.0)
            try:
                built.append((_positive(field + ".weight", weight), make_reference(kind, grid, **params)))
            except TypeError as e:
                raise ConfigError(field, "bad parameters for {!r}: {}".format(kind, e))
            except DomainError as e:
                raise ConfigError(field, str(e))
        return ProductMixture(tuple(built))

    def run_dir(self):
        return os.path.join(os.environ.get(OUTPUT_ROOT_ENV, "."), self.output_dir)

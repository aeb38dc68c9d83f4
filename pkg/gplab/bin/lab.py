import argparse
import logging
import os
import sys
import time

import numpy as np
import yaml

ROOT_PATH = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))  # NOQA: E402
sys.path.insert(0, os.path.dirname(ROOT_PATH))  # NOQA: E402

try:
    from gplab.blowup.lab import RATE_BOUNDS, norm_key, run_blowup, sweep_blowup
    from gplab.errors import ConfigError, DomainError, InvariantError
    from gplab.hierarchy.dynamics import evolve_mixture, evolve_truncated, time_shift_check
    from gplab.hierarchy.functionals import DIAGNOSTIC_NAMES, diagnostics_for, energy
    from gplab.hierarchy.norms import (
        c_seq_quasinorm,
        collision_l1t_quasinorm,
        hierarchy_hs_quasinorm,
        l1t_seq_quasinorm,
        trace_quasinorm,
    )
    from gplab.hierarchy.state import HierarchyTruncation
    from gplab.nls.engine import NlsProblem, nls_evolve
    from gplab.utils.config import (
        OUTPUT_ROOT_ENV,
        SCENARIOS,
        ExperimentConfig,
        bundled_config,
        default_experiment_config,
        load_config,
    )
    from gplab.utils.log import get_git_revision_hash, logging_to_file
    from gplab.utils.plot import plot_blowup, plot_series
    from gplab.verify.checks import available_checks, verify_suite
except ImportError:
    raise ImportError("Please install gplab.")

logging.basicConfig(
    format="%(asctime)s %(levelname)-4s [%(filename)s:%(lineno)d] %(message)s",
    datefmt="%Y-%m-%d:%H:%M:%S",
    level=logging.INFO,
)

CONSERVED = ("mass", "energy")


def prepare_run(config, stage_dir):
    """Create the run directory, attach stdout.log and archive the resolved config."""
    os.makedirs(stage_dir, exist_ok=True)
    handler = logging_to_file(os.path.join(stage_dir, "stdout.log"))

    config = dict(config)
    config["create_time"] = time.strftime("%Y-%m-%d %H:%M:%S", time.localtime())
    config["git_revision_hash"] = get_git_revision_hash()
    with open(os.path.join(stage_dir, "config.yaml"), "w") as f:
        yaml.dump(config, f, Dumper=yaml.Dumper, default_flow_style=None)

    for key, value in config.items():
        logging.info(f"{key} = {value}")
    return handler


def write_trajectory(traj, names, stage_dir):
    path = os.path.join(stage_dir, "trajectory.csv")
    np.savetxt(path, traj.table(names), fmt="%.17g", delimiter=",", header=",".join(["t"] + list(names)), comments="")
    logging.info(f"Trajectory with {len(traj)} samples written to {path}.")


def write_report(report, stage_dir):
    with open(os.path.join(stage_dir, "report.yaml"), "w") as f:
        yaml.dump(_plain(report), f, Dumper=yaml.Dumper, default_flow_style=False, sort_keys=False)


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def conservation_drift(traj):
    """Max relative drift of every conserved series recorded (mass, energy, E_k)."""
    drift = {}
    for name, series in traj.diagnostics.items():
        if name in CONSERVED or name.startswith("E_"):
            scale = max(abs(series[0]), np.finfo(float).tiny)
            drift[name] = float(np.max(np.abs(series - series[0])) / scale)
    return drift


def evolve(cfg):
    mix = cfg.initial_state()
    controller = cfg.build_controller()
    integrator = cfg.integrator
    if cfg.scenario == "nls":
        if len(mix) != 1:
            raise ConfigError("initial.components", "the nls scenario evolves exactly one component")
        diagnostics = diagnostics_for(cfg.diagnostics, cfg.mu, cfg.equation)
        prob = NlsProblem(cfg.mu, cfg.equation, mix.fields[0])
        return nls_evolve(
            prob, controller, integrator["t_end"], integrator["sample_every"], diagnostics, keep_states=False, progress=True
        )
    if cfg.scenario == "truncated-hierarchy":
        init = HierarchyTruncation.from_mixture(mix, cfg.hierarchy["levels"], cfg.hierarchy["closure"])
        return evolve_truncated(
            init,
            cfg.mu,
            cfg.equation,
            controller.dt,
            integrator["t_end"],
            integrator["sample_every"],
            cfg.diagnostics,
            progress=True,
        )
    return evolve_mixture(
        mix,
        cfg.mu,
        cfg.equation,
        controller,
        integrator["t_end"],
        integrator["sample_every"],
        cfg.diagnostics,
        levels=cfg.norms["levels"],
        num_workers=cfg.num_workers,
    )


def norms_report(cfg, traj):
    """Quasi-norms of the initial state and of the recorded trajectory, per s."""
    levels = cfg.norms["levels"]
    interval = abs(traj.times[-1] - traj.times[0])
    report = {"trace_quasinorm_0": trace_quasinorm(traj.states[0], levels), "per_s": []}
    failures = []
    for s in cfg.norms["s"]:
        c_norm = c_seq_quasinorm(traj, s, levels)
        l1_norm = l1t_seq_quasinorm(traj, s, levels)
        collision_norm = collision_l1t_quasinorm(traj, s, cfg.equation, levels)
        t0 = traj.times[len(traj) // 2]
        row = {
            "s": float(s),
            "quasinorm_0": hierarchy_hs_quasinorm(traj.states[0], s, levels),
            "c_quasinorm": c_norm,
            "l1t_quasinorm": l1_norm,
            "l1t_bound": max(1.0, interval) * c_norm,
            "collision_l1t_quasinorm": collision_norm,
            "lifespan_quantity": c_norm + collision_norm,
            "time_shift_defect": time_shift_check(traj, t0, s, levels=levels),
        }
        if l1_norm > row["l1t_bound"] * (1.0 + 1e-12):
            failures.append("l1t-bound at s={}".format(s))
        report["per_s"].append(row)
    return report, failures


def run(cfg):
    """Evolve the configured scenario and write trajectory, report and plots.

    Returns the list of failed invariant names; empty means success.
    """
    if cfg.scenario == "blowup":
        return run_blowup_scenario(cfg)
    stage_dir = cfg.run_dir()
    handler = prepare_run(cfg.config, stage_dir)
    try:
        traj = evolve(cfg)
        write_trajectory(traj, cfg.diagnostics, stage_dir)

        report = {
            "scenario": cfg.scenario,
            "equation": cfg.equation,
            "samples": len(traj),
            "final_time": float(traj.times[-1]),
            "halted": None if traj.halted is None else {"reason": traj.halted.reason, "time": traj.halted.time},
        }
        failures = []
        if cfg.scenario != "truncated-hierarchy":
            report["energy_1"] = energy(cfg.initial_state(), 1, cfg.mu, cfg.equation).__dict__
        drift = conservation_drift(traj)
        report["conservation_drift"] = drift
        if cfg.conservation_tol is not None:
            failures += ["conservation of {}".format(k) for k, v in drift.items() if v > cfg.conservation_tol]
        if cfg.scenario == "norms":
            report["norms"], norm_failures = norms_report(cfg, traj)
            failures += norm_failures
        report["failures"] = failures
        write_report(report, stage_dir)

        if cfg.plots and cfg.diagnostics:
            fig = plot_series(traj.times, {name: traj.series(name) for name in cfg.diagnostics}, title=cfg.scenario)
            fig.savefig(os.path.join(stage_dir, "diagnostics.svg"))
        for failure in failures:
            logging.error(f"[Lab] invariant check failed: {failure}")
        return failures
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


def run_blowup_scenario(cfg):
    stage_dir = cfg.run_dir()
    handler = prepare_run(cfg.config, stage_dir)
    try:
        mix = cfg.initial_state()
        if len(mix) != 1:
            raise ConfigError("initial.components", "blowup runs evolve exactly one component")
        phi = mix.fields[0]
        blowup = cfg.blowup
        regime = blowup["regime"] or "{}_s_gt_n2".format(cfg.equation)
        controller = cfg.build_controller()
        t_end, sample_every = cfg.integrator["t_end"], cfg.integrator["sample_every"]

        if blowup["amplitudes"]:
            reports = sweep_blowup(
                phi, blowup["amplitudes"], cfg.equation, controller, t_end, sample_every, blowup["s"], regime, cfg.num_workers
            )
            write_report({"reports": [r.as_dict() for r in reports]}, stage_dir)
            failures = ["blowup verdict at amplitude {}".format(r.meta["amplitude"]) for r in reports if not r.verdict]
        else:
            report, traj = run_blowup(phi, cfg.equation, controller, t_end, sample_every, blowup["s"], regime, blowup["k"])
            write_trajectory(traj, list(traj.diagnostics), stage_dir)
            write_report(report.as_dict(), stage_dir)
            logging.info(
                "[Lab] t*={} Glassey bound={} fitted exponent={} (bound {}) verdict={}".format(
                    report.t_star, report.t_bound, report.fitted_exponent, report.bound_exponent, report.verdict
                )
            )
            if cfg.plots:
                fig = plot_blowup(traj.times, traj.series(norm_key(blowup["s"])), report.t_star, report.t_bound)
                fig.savefig(os.path.join(stage_dir, "blowup.svg"))
            failures = [] if report.verdict else ["blowup verdict"]
        for failure in failures:
            logging.error(f"[Lab] invariant check failed: {failure}")
        return failures
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


def resolve_checks(names, equation):
    """Check names, with ``conservation`` style prefixes completed by the equation."""
    known = set(available_checks())
    resolved = []
    for name in names:
        if name not in known and "{}-{}".format(name, equation) in known:
            name = "{}-{}".format(name, equation)
        resolved.append(name)
    return resolved


def verify(checks, equation, output_dir, k=None):
    stage_dir = os.path.join(os.environ.get(OUTPUT_ROOT_ENV, "."), output_dir)
    os.makedirs(stage_dir, exist_ok=True)
    handler = logging_to_file(os.path.join(stage_dir, "stdout.log"))
    try:
        results = verify_suite(resolve_checks(checks, equation), k=k)
        write_report({"checks": [r.__dict__ for r in results], "passed": all(r.passed for r in results)}, stage_dir)
        for result in results:
            print(result.row())
        return [r.name for r in results if not r.passed]
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()


def describe():
    print(yaml.dump({"experiment": default_experiment_config}, Dumper=yaml.Dumper, default_flow_style=False, sort_keys=False))
    print("scenarios: {}".format(", ".join(SCENARIOS)))
    print("diagnostics: {}".format(", ".join(DIAGNOSTIC_NAMES)))
    print("rate regimes: {}".format(", ".join(sorted(RATE_BOUNDS))))
    print("checks: {}".format(", ".join(available_checks())))
    return []


def command_config(args, scenario=None):
    overrides = {}
    if scenario is not None:
        overrides["scenario"] = scenario
    if getattr(args, "equation", None):
        overrides["equation"] = args.equation
    if getattr(args, "dimension", None):
        overrides["grid"] = {"dim": args.dimension}
    if getattr(args, "output_dir", None):
        overrides["output_dir"] = args.output_dir
    path = args.config
    if path is None and scenario == "blowup":
        candidate = bundled_config("blowup_{}_{}d".format(args.equation or "quintic", args.dimension or 1))
        path = candidate if os.path.exists(candidate) else None
    return ExperimentConfig(load_config(path, overrides))


def build_parser():
    parser = argparse.ArgumentParser(description="Numerical lab for Gross-Pitaevskii hierarchies")
    sub = parser.add_subparsers(dest="command")
    sub.required = True

    run_parser = sub.add_parser("run", help="evolve the scenario of a config file")
    run_parser.add_argument("--config", type=str, required=True, help="experiment config file")
    run_parser.add_argument("--output_dir", type=str, default=None, help="run directory under the output root")

    verify_parser = sub.add_parser("verify", help="run named acceptance checks, all when none given")
    verify_parser.add_argument("checks", nargs="*", help="check names")
    verify_parser.add_argument("--equation", type=str, default="cubic", help="completes conservation style names")
    verify_parser.add_argument("--k", type=int, default=None, help="highest level E_k of the conservation checks")
    verify_parser.add_argument("--output_dir", type=str, default="verify", help="run directory under the output root")

    blowup_parser = sub.add_parser("blowup", help="focusing run with Glassey bound and rate fit")
    blowup_parser.add_argument("--config", type=str, default=None, help="experiment config file")
    blowup_parser.add_argument("--equation", type=str, default=None, help="cubic or quintic")
    blowup_parser.add_argument("--dimension", type=int, default=None, help="spatial dimension")
    blowup_parser.add_argument("--output_dir", type=str, default=None, help="run directory under the output root")

    norms_parser = sub.add_parser("norms", help="quasi-norms of a mixture trajectory")
    norms_parser.add_argument("--config", type=str, default=None, help="experiment config file")
    norms_parser.add_argument("--output_dir", type=str, default=None, help="run directory under the output root")

    sub.add_parser("describe", help="print the default config and every registered name")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "describe":
            failures = describe()
        elif args.command == "verify":
            failures = verify(args.checks, args.equation, args.output_dir, args.k)
        elif args.command == "run":
            cfg = command_config(args)
            failures = run(cfg)
        else:
            failures = run(command_config(args, scenario=args.command))
    except (ConfigError, DomainError) as e:
        logging.error(f"Invalid configuration: {e}")
        return 2
    except InvariantError as e:
        logging.error(f"Invariant {e.invariant} violated: {e}")
        return 1
    except Exception as e:
        logging.error(e, exc_info=True)
        raise
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())

"""
phi-kit - command-line front end for Poisson Hamiltonian integrators.
Runs simulations, comparisons, convergence sweeps and structural checks
from JSON configs and writes CSV / JSON reports.
"""
import functools
import sys
import traceback
from pathlib import Path

# Ensure the project root is in Python path
# This allows running from any directory
project_root = Path(__file__).parent.absolute()
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

import click

from baselines import reference_solution
from config import RunConfig, load_config
from diagnostics import convergence_report
from errors import EXIT_BLOW_UP, EXIT_OK, EXIT_SOLVER, EXIT_UNEXPECTED, ConfigError, PhiKitError, exit_code_for
from reports import compare_frame, write_compare_csv, write_json, write_trajectory_csv
from runner import build_system, make_method
from stats_tracker import create_stats_tracker, log_stats_summary
from systems import get_system
from trajectory import Termination
from utils import NORMAL, QUIET, VERBOSE, is_quiet, log_error, log_info, log_success, log_warning, set_verbosity
from verify import SystemVerifier

# Exit code when verification ran but some residual exceeded its threshold
EXIT_CHECKS_FAILED = 1


def _exit_for_termination(termination: Termination) -> int:
    if termination is Termination.BLOW_UP:
        return EXIT_BLOW_UP
    if termination is Termination.STEP_TOO_LARGE:
        return EXIT_SOLVER
    return EXIT_OK


def handle_errors(command):
    """Turn library exceptions into the exit-code contract."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            code = command(*args, **kwargs)
        except PhiKitError as e:
            log_error(str(e))
            sys.exit(exit_code_for(e))
        except Exception as e:
            log_error(f"Unexpected error: {e}")
            traceback.print_exc()
            sys.exit(EXIT_UNEXPECTED)
        sys.exit(code or EXIT_OK)
    return wrapper


@click.group()
@click.option("--quiet", is_flag=True, help="Only print errors.")
@click.option("--verbose", is_flag=True, help="Print solver details and progress bars.")
def cli(quiet, verbose):
    """Poisson Hamiltonian integrators and their classical baselines."""
    if quiet and verbose:
        raise click.UsageError("--quiet and --verbose are mutually exclusive")
    set_verbosity(QUIET if quiet else VERBOSE if verbose else NORMAL)


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="Run config (JSON).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Trajectory CSV to write.")
@handle_errors
def simulate(config_path, out_path):
    """Integrate one method and write its trajectory CSV."""
    # 1. Load and validate config
    cfg = load_config(config_path)
    methods = cfg.method_list()
    if len(methods) != 1:
        raise ConfigError(f"simulate runs exactly one method, got {len(methods)}")

    # 2. Build system and integrator
    spec = build_system(cfg.system)
    tracker = create_stats_tracker()
    method = make_method(spec, methods[0], cfg, tracker)
    log_info(f"Simulating {spec.name} with {method.label}: {cfg.steps} steps of dt={cfg.dt}")

    # 3. Integrate
    record = method.run(spec.default_x0, cfg.dt, cfg.steps)

    # 4. Write results, partial runs included
    write_trajectory_csv(record, spec.system, out_path, cfg.outputs)
    if method.stepper is not None and not is_quiet():
        log_stats_summary(tracker)
    if record.termination is Termination.COMPLETED:
        log_success(f"Wrote {record.n_steps + 1} rows to {out_path}")
    else:
        log_warning(f"Run stopped at t={record.final_time:.6g}; partial trajectory written to {out_path}")
    return _exit_for_termination(record.termination)


def _unique_labels(labels):
    seen = {}
    unique = []
    for label in labels:
        seen[label] = seen.get(label, 0) + 1
        unique.append(label if seen[label] == 1 else f"{label}_{seen[label]}")
    return unique


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="Run config listing two or more methods.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Joined comparison CSV to write.")
@handle_errors
def compare(config_path, out_path):
    """Run several methods and write per-step errors against the reference oracle."""
    # 1. Load and validate config
    cfg = load_config(config_path)
    method_cfgs = cfg.method_list()
    if len(method_cfgs) < 2:
        raise ConfigError(f"compare needs at least two methods, got {len(method_cfgs)}")

    # 2. Reference solution on the step grid
    spec = build_system(cfg.system)
    horizon = cfg.steps * cfg.dt
    reference = reference_solution(spec.system, spec.default_x0, horizon, tol=cfg.reference_tol,
                                   n_checkpoints=max(cfg.steps, 1))

    # 3. Run every method
    frames, notes = [], []
    if reference.blow_up_time is not None:
        notes.append(f"reference: blow_up at t={reference.blow_up_time:.17g}")
    labels = _unique_labels([m.display_label for m in method_cfgs])
    for mc, label in zip(method_cfgs, labels):
        method = make_method(spec, mc, cfg)
        log_info(f"Running {label}")
        record = method.run(spec.default_x0, cfg.dt, cfg.steps)
        if record.termination is not Termination.COMPLETED:
            notes.append(f"{label}: {record.termination.value} at t={record.final_time:.17g}")
        frames.append(compare_frame(record, reference, label))

    # 4. Write joined CSV
    write_compare_csv(frames, out_path, notes)
    log_success(f"Wrote comparison of {', '.join(labels)} to {out_path}")
    return EXIT_OK


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="Run config with horizon and h_values.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Convergence report JSON to write.")
@handle_errors
def convergence(config_path, out_path):
    """Fit the order of one method from errors at a fixed horizon."""
    # 1. Load and validate config
    cfg = load_config(config_path)
    method_cfgs = cfg.method_list()
    if len(method_cfgs) != 1:
        raise ConfigError(f"convergence sweeps exactly one method, got {len(method_cfgs)}")
    if not cfg.h_values:
        raise ConfigError("convergence needs a non-empty 'h_values' list")
    if cfg.horizon is None:
        raise ConfigError("convergence needs a 'horizon'")

    # 2. Build system and integrator
    spec = build_system(cfg.system)
    method = make_method(spec, method_cfgs[0], cfg)

    # 3. Sweep and fit
    report = convergence_report(spec.system, method, spec.default_x0, cfg.horizon, cfg.h_values,
                                reference_tol=cfg.reference_tol)

    # 4. Write report
    payload = report.to_dict()
    payload["config"] = _config_payload(cfg)
    write_json(payload, out_path)
    log_success(f"Order {report.fitted_slope:.3f} ± {report.slope_ci:.3f}; report written to {out_path}")
    return EXIT_OK


def _config_payload(cfg: RunConfig) -> dict:
    return cfg.model_dump(mode="json", exclude_none=True)


@cli.command()
@click.option("--system", "system_name", default=None, help="Catalog system name.")
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False),
              help="Run config whose system and seed are verified instead of --system.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Verification report JSON to write.")
@click.option("--seed", default=None, type=int, help="Seed for the sampled states (default: the config's seed, else 0).")
@click.option("--samples", default=100, show_default=True, help="Number of sampled states.")
@handle_errors
def verify(system_name, config_path, out_path, seed, samples):
    """Run the structural residual suite for a catalog system or a configured one."""
    # 1. Resolve the system and seed
    if (system_name is None) == (config_path is None):
        raise ConfigError("verify needs exactly one of --system or --config")
    if config_path is not None:
        cfg = load_config(config_path)
        spec = build_system(cfg.system)
        seed = cfg.seed if seed is None else seed
    else:
        spec = get_system(system_name)
        seed = 0 if seed is None else seed

    # 2. Run the suite and write the report
    verifier = SystemVerifier(spec, seed=seed, n_samples=samples)
    summary = verifier.run_all()
    verifier.save_results(out_path)
    return EXIT_OK if summary.failed == 0 else EXIT_CHECKS_FAILED


if __name__ == "__main__":
    cli()

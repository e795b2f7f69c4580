"""Command-line entry point.

Stefan problem with a dynamic boundary condition, solved through the
Cahn-Hilliard approximation chain:
- `run`: integrate one configuration and write its trajectory
- `verify`: run the acceptance experiments and write a PASS/FAIL summary
- `sweep-eps`, `sweep-lambda`, `depend`, `mms`: run a single experiment

Exit codes: 0 success, 1 failed experiments, 2 solver failure, 3 config error.
"""

import argparse
import logging
from typing import Any, Callable, Dict, List, Optional, Tuple

from app.config import get_settings
from app.core.exceptions import ConfigError, SolverFailure, StefanSolverError
from app.core.forms import assemble_space, operator_stats
from app.core.geometry import unit_square
from app.schemas.config import RunConfig
from app.schemas.report import RunReport
from app.services.harness import HarnessService
from app.services.reporting import ReportWriter
from app.services.simulation import SimulationService
from app.services.sources import build_initial, build_source
from app.utils.config_parser import load_config_file

settings = get_settings()
logging.basicConfig(
    level=getattr(logging, settings.log_level.upper()),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_SOLVER = 2
EXIT_CONFIG = 3

Experiment = Callable[[HarnessService, ReportWriter], Tuple[bool, Any]]


def _conservation(harness: HarnessService, writer: ReportWriter):
    report = harness.conservation()
    writer.conservation(report)
    return report.passed, report


def _bounds(harness: HarnessService, writer: ReportWriter):
    report = harness.monitor_bounds()
    writer.bounds(report)
    return report.passed, report


def _lambda(harness: HarnessService, writer: ReportWriter):
    table = harness.sweep_lambda()
    writer.table(table, "lambda")
    return table.passed, table


def _eps(harness: HarnessService, writer: ReportWriter):
    table = harness.sweep_epsilon()
    writer.table(table, "eps")
    # data crossing the plateau: reported, not asserted
    two_phase = harness.sweep_epsilon(m0=0.5, amplitude=0.75)
    writer.table(two_phase, "eps_two_phase")
    return table.passed, {"single_phase": table.model_dump(mode="json"), "two_phase": two_phase.model_dump(mode="json")}


def _depend(harness: HarnessService, writer: ReportWriter):
    report = harness.continuous_dependence()
    writer.dependence(report)
    return report.passed, report


def _mms(harness: HarnessService, writer: ReportWriter):
    report = harness.mms_orders()
    writer.orders(report)
    return report.passed, report


EXPERIMENTS: Dict[str, Experiment] = {
    "conservation": _conservation,
    "bounds": _bounds,
    "lambda": _lambda,
    "eps": _eps,
    "depend": _depend,
    "mms": _mms,
}

SINGLE_EXPERIMENT_COMMANDS = {
    "sweep-eps": "eps",
    "sweep-lambda": "lambda",
    "depend": "depend",
    "mms": "mms",
}


def _load(args: argparse.Namespace) -> RunConfig:
    config = load_config_file(args.config) if args.config else RunConfig()
    if args.out:
        config = config.model_copy(update={"output": config.output.model_copy(update={"dir": args.out})})
    return config


def run_experiments(names: List[str], harness: HarnessService, writer: ReportWriter) -> Dict[str, bool]:
    """Run the named experiments in order; an experiment that raises counts as FAIL."""
    verdicts: Dict[str, bool] = {}
    details: Dict[str, Any] = {}
    for name in names:
        logger.info(f"Experiment {name}: starting")
        try:
            passed, detail = EXPERIMENTS[name](harness, writer)
        except StefanSolverError as e:
            logger.error(f"Experiment {name} failed: {e}")
            passed, detail = False, {"error": str(e)}
        verdicts[name] = passed
        details[name] = detail
        logger.info(f"Experiment {name}: {'PASS' if passed else 'FAIL'}")
    writer.summary(verdicts, details)
    return verdicts


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = _load(args)
        mesh = unit_square(config.mesh.size)
        space = assemble_space(mesh, lumped=config.mesh.lumped)
        u0 = build_initial(mesh, config)
        source = build_source(mesh, config)
        service = SimulationService(space, config.solve, source)
        result = service.run(u0, keep_states=config.output.field_stride > 0)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except SolverFailure as e:
        logger.error(f"Solver failure: {e}")
        return EXIT_SOLVER
    except StefanSolverError as e:
        # incompatible initial data is a configuration problem
        logger.error(f"Incompatible data: {e}")
        return EXIT_CONFIG

    writer = ReportWriter(config.output.dir)
    writer.trajectory(result.records)
    writer.fields(mesh, result.states, config.output.field_stride)
    writer.run_report(
        RunReport(
            config=config.model_dump(mode="json", by_alias=True),
            operators={**operator_stats(space), "gms_c3": result.graph.c3, "gms_c4": result.graph.c4},
            records=result.records,
            ledger=result.ledger,
            max_mass_drift=result.max_mass_drift,
            rejected_steps=result.rejected_steps,
        )
    )
    return EXIT_OK


def _experiment_command(args: argparse.Namespace, names: List[str]) -> int:
    try:
        config = _load(args)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    harness = HarnessService(mesh_size=config.mesh.size, threads=args.threads, graph=config.solve.graph)
    writer = ReportWriter(config.output.dir)
    verdicts = run_experiments(names, harness, writer)
    failed = [name for name, ok in verdicts.items() if not ok]
    if failed:
        logger.error(f"Failed experiments: {', '.join(failed)}")
        print("FAILED: " + " ".join(failed))
        return EXIT_FAILED
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    names = list(EXPERIMENTS)
    if args.only:
        names = [n.strip() for n in args.only.split(",") if n.strip()]
        unknown = [n for n in names if n not in EXPERIMENTS]
        if unknown:
            logger.error(f"Unknown experiment(s) {unknown}; choose from {list(EXPERIMENTS)}")
            return EXIT_CONFIG
    return _experiment_command(args, names)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run configuration file (key = value with [sections])")
    common.add_argument("--out", help="Output directory (overrides [output] dir)")
    common.add_argument("--threads", type=int, default=None, help="Worker threads for sweeps")

    parser = argparse.ArgumentParser(
        prog="stefan-dbc",
        description="Stefan problem with a dynamic boundary condition via Cahn-Hilliard approximations",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="Integrate one configuration")
    verify = sub.add_parser("verify", parents=[common], help="Run the acceptance experiments")
    verify.add_argument("--only", help=f"Comma-separated subset of {', '.join(EXPERIMENTS)}")
    for command in SINGLE_EXPERIMENT_COMMANDS:
        sub.add_parser(command, parents=[common], help=f"Run the {SINGLE_EXPERIMENT_COMMANDS[command]} experiment")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "verify":
        return cmd_verify(args)
    return _experiment_command(args, [SINGLE_EXPERIMENT_COMMANDS[args.command]])


if __name__ == "__main__":
    raise SystemExit(main())

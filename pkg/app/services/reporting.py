"""CSV tables, JSON reports and the verdict files written by the CLI."""

import csv
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import orjson
from pydantic import BaseModel

from app.config import get_settings
from app.core.geometry import MeshPair, dump_field, dump_mesh
from app.core.stepper import State
from app.schemas.report import (
    BoundsReport,
    ConservationReport,
    ConvergenceTable,
    DependenceReport,
    OrderReport,
    RunReport,
    StepRecord,
)

logger = logging.getLogger(__name__)
settings = get_settings()

TRAJECTORY_COLUMNS = [
    "t",
    "step",
    "mass",
    "mass_drift",
    "v0_energy",
    "envelope",
    "dissipation",
    "ledger_lhs",
    "ledger_rhs",
    "free_energy",
    "newton_iterations",
    "residual",
    "mushy_bulk",
    "mushy_boundary",
]


def format_value(value: Any) -> str:
    """Full round-trip decimal for floats; empty cell for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, f".{settings.csv_precision}g")
    return str(value)


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    logger.info(f"Wrote {path}")
    return path


def write_json(path: Union[str, Path], payload: Union[BaseModel, Dict[str, Any]]) -> Path:
    path = Path(path)
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json", by_alias=True)
    path.write_bytes(orjson.dumps(payload, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
    logger.info(f"Wrote {path}")
    return path


class ReportWriter:
    """Writes every artifact of one CLI invocation into a single directory."""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def trajectory(self, records: List[StepRecord]) -> Path:
        rows = ([getattr(r, c) for c in TRAJECTORY_COLUMNS] for r in records)
        return write_csv(self.out_dir / "trajectory.csv", TRAJECTORY_COLUMNS, rows)

    def run_report(self, report: RunReport) -> Path:
        return write_json(self.out_dir / "report.json", report)

    def fields(self, mesh: MeshPair, states: List[State], stride: int) -> List[Path]:
        """Dump u every `stride` steps; the final state is always included."""
        if stride <= 0 or not states:
            return []
        field_dir = self.out_dir / "fields"
        field_dir.mkdir(exist_ok=True)
        dump_mesh(mesh, field_dir / "mesh.txt")
        picked = [s for s in states if s.step % stride == 0]
        if picked[-1] is not states[-1]:
            picked.append(states[-1])
        paths = []
        for state in picked:
            bulk = field_dir / f"u_bulk_{state.step:06d}.txt"
            boundary = field_dir / f"u_boundary_{state.step:06d}.txt"
            dump_field(mesh, state.u, bulk, boundary)
            paths += [bulk, boundary]
        logger.info(f"Dumped {len(picked)} field snapshots to {field_dir}")
        return paths

    def bounds(self, report: BoundsReport, name: str = "bounds") -> Path:
        keys = list(report.ledgers[0].entries()) if report.ledgers else []
        header = ["epsilon", "lambda", *keys, "ledger_violations"]
        rows = [
            [ledger.epsilon, ledger.lam, *ledger.entries().values(), ledger.ledger_violations]
            for ledger in report.ledgers
        ]
        return write_csv(self.out_dir / f"{name}.csv", header, rows)

    def table(self, table: ConvergenceTable, name: Optional[str] = None) -> Path:
        header = ["parameter", table.metric, "ratio", table.secondary_metric or "secondary"]
        rows = [[r.parameter, r.error, r.ratio, r.secondary] for r in table.rows]
        return write_csv(self.out_dir / f"{name or table.name}.csv", header, rows)

    def dependence(self, report: DependenceReport, name: str = "depend") -> Path:
        rows = [[r.amplitude, r.t, r.lhs, r.rhs] for r in report.rows]
        return write_csv(self.out_dir / f"{name}.csv", ["amplitude", "t", "lhs", "rhs"], rows)

    def orders(self, report: OrderReport, name: str = "mms") -> Path:
        rows = []
        for kind, table in (("space", report.spatial), ("time", report.temporal)):
            rows += [[kind, r.parameter, r.error, r.ratio] for r in table.rows]
        return write_csv(self.out_dir / f"{name}.csv", ["refinement", "parameter", "error", "ratio"], rows)

    def conservation(self, report: ConservationReport, name: str = "conservation") -> Path:
        rows = [[problem, drift] for problem, drift in report.max_drift.items()]
        return write_csv(self.out_dir / f"{name}.csv", ["problem", "max_mass_drift"], rows)

    def summary(self, verdicts: Dict[str, bool], details: Dict[str, Any]) -> Path:
        """summary.json with the full reports plus a one-line-per-experiment verdict.txt."""
        payload = {
            "verdicts": {name: "PASS" if ok else "FAIL" for name, ok in verdicts.items()},
            "passed": all(verdicts.values()),
            "details": {
                name: d.model_dump(mode="json") if isinstance(d, BaseModel) else d
                for name, d in details.items()
            },
        }
        write_json(self.out_dir / "summary.json", payload)
        lines = [f"{name} {'PASS' if ok else 'FAIL'}" for name, ok in verdicts.items()]
        verdict = self.out_dir / "verdict.txt"
        verdict.write_text("\n".join(lines) + "\n")
        logger.info(f"Wrote {verdict}")
        return verdict

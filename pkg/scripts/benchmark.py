#!/usr/bin/env python3
"""
Benchmark suite for the Stefan DBC solver.

Times operator assembly and factorization per mesh size, one run of every
problem variant, and optionally the verification experiments.

Usage:
    python scripts/benchmark.py [--sizes 9 17 33] [--runs 3] [--experiments] [--output results/benchmark_results.json]
"""

import argparse
import logging
import statistics
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from app.core.forms import assemble_space, operator_stats
from app.core.geometry import unit_square
from app.main import EXPERIMENTS
from app.schemas.config import Problem, SolveConfig
from app.services.harness import HarnessService
from app.services.reporting import ReportWriter, write_json
from app.services.simulation import SimulationService
from app.services.sources import bump_source, cosine_initial

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")
logger = logging.getLogger(__name__)

PROBLEMS = [
    {"problem": Problem.REGULARIZED_CH, "epsilon": 1 / 16, "lam": 0.01, "label": "RegularizedCH (lambda=0.01)"},
    {"problem": Problem.CH, "epsilon": 1 / 16, "label": "CH (eps=1/16)"},
    {"problem": Problem.STEFAN_LIMIT, "label": "StefanLimit"},
]


def timing_stats(timings: list) -> dict:
    """Compute timing statistics."""
    return {
        "runs": len(timings),
        "min_ms": round(min(timings), 1),
        "max_ms": round(max(timings), 1),
        "avg_ms": round(statistics.mean(timings), 1),
        "median_ms": round(statistics.median(timings), 1),
    }


def bench_assembly(size: int, runs: int) -> dict:
    """Assembly, saddle factorization and c_p on one mesh."""
    timings = []
    space = None
    for _ in range(runs):
        start = time.perf_counter()
        space = assemble_space(unit_square(size)).prepare()
        timings.append((time.perf_counter() - start) * 1000)
    stats = operator_stats(space)
    return {"size": size, "operators": stats, "timing": timing_stats(timings)}


def bench_run(size: int, item: dict, steps: int, runs: int) -> dict:
    """One fixed-length run of a problem variant; the space is prepared outside the clock."""
    mesh = unit_square(size)
    space = assemble_space(mesh).prepare()
    params = {k: v for k, v in item.items() if k != "label"}
    config = SolveConfig(dt=0.005, T=0.005 * steps, m0=0.5, **params)
    source = bump_source(mesh, 1.0)
    u0 = cosine_initial(mesh, 0.5, 0.75)

    timings = []
    result = None
    for _ in range(runs):
        start = time.perf_counter()
        result = SimulationService(space, config, source).run(u0, keep_states=False)
        timings.append((time.perf_counter() - start) * 1000)
    iterations = [r.newton_iterations for r in result.records[1:]]
    return {
        "label": item["label"],
        "size": size,
        "steps": config.n_steps,
        "newton_iterations_mean": round(statistics.mean(iterations), 2) if iterations else 0,
        "max_mass_drift": result.max_mass_drift,
        "rejected_steps": result.rejected_steps,
        "timing": timing_stats(timings),
        "ms_per_step": round(statistics.median(timings) / config.n_steps, 2),
    }


def bench_experiments(size: int, threads: int, out_dir: Path) -> list:
    """Wall time and verdict of each verification experiment."""
    harness = HarnessService(mesh_size=size, threads=threads)
    writer = ReportWriter(out_dir)
    entries = []
    for name, experiment in EXPERIMENTS.items():
        start = time.perf_counter()
        passed, _ = experiment(harness, writer)
        elapsed = time.perf_counter() - start
        entries.append({"experiment": name, "passed": passed, "wall_s": round(elapsed, 2)})
        logger.info(f"  {name:15s} | {'PASS' if passed else 'FAIL'} | {elapsed:.1f}s")
    return entries


def main():
    parser = argparse.ArgumentParser(description="Benchmark the Stefan DBC solver")
    parser.add_argument("--sizes", type=int, nargs="+", default=[9, 17, 33], help="Nodes per side")
    parser.add_argument("--runs", type=int, default=3, help="Repetitions per measurement")
    parser.add_argument("--steps", type=int, default=20, help="Time steps per run")
    parser.add_argument("--experiments", action="store_true", help="Also time the verification experiments")
    parser.add_argument("--threads", type=int, default=1, help="Worker threads for the sweeps")
    parser.add_argument(
        "--output", default="results/benchmark_results.json", help="Output JSON path"
    )
    args = parser.parse_args()

    output_path = Path(args.output)
    output_path.parent.mkdir(parents=True, exist_ok=True)

    report = {
        "config": {
            "sizes": args.sizes,
            "runs": args.runs,
            "steps": args.steps,
            "threads": args.threads,
        },
        "assembly": [],
        "runs": [],
        "experiments": [],
    }

    logger.info("\n=== Assembly ===")
    for size in args.sizes:
        entry = bench_assembly(size, args.runs)
        report["assembly"].append(entry)
        logger.info(
            f"  n={size:3d} | nodes={entry['operators']['n_bulk']} | c_p={entry['operators']['poincare_constant']:.4f} "
            f"| median={entry['timing']['median_ms']}ms"
        )

    logger.info("\n=== Time Stepping ===")
    for size in args.sizes:
        for item in PROBLEMS:
            entry = bench_run(size, item, args.steps, args.runs)
            report["runs"].append(entry)
            logger.info(
                f"  n={size:3d} {item['label']:28s} | {entry['ms_per_step']}ms/step "
                f"| newton={entry['newton_iterations_mean']} | drift={entry['max_mass_drift']:.1e}"
            )

    if args.experiments:
        logger.info("\n=== Verification Experiments ===")
        report["experiments"] = bench_experiments(args.sizes[-1], args.threads, output_path.parent / "experiments")

    write_json(output_path, report)
    logger.info(f"\nResults saved to {output_path}")
    logger.info("=" * 70)


if __name__ == "__main__":
    main()

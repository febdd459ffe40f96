#!/usr/bin/env python3
"""Run the full safety matrix across many seeds and summarize violations.

Usage: run_safety_matrix.py [SEEDS]   (default 20 seeds per scenario)
"""

import sys
from pathlib import Path

from setchain.bench import (
    run_matrix,
    safety_matrix,
    seed_from_env,
    write_reports_jsonl,
    write_summary_csv,
)

OUT = Path(__file__).resolve().parent.parent / "results" / "safety"


def main() -> int:
    count = int(sys.argv[1]) if len(sys.argv) > 1 else 20
    base = seed_from_env(0)
    seeds = range(base, base + count)
    reports = run_matrix(safety_matrix(), seeds)
    bad = [r for r in reports if not r.ok]
    for report in reports:
        if not report.ok:
            print(f"{report.scenario} seed={report.seed}:")
            for violation in report.property_violations:
                print(f"  {violation}")
    print(f"{len(reports)} runs, {len(bad)} with violations")
    OUT.mkdir(parents=True, exist_ok=True)
    write_reports_jsonl(OUT / "reports.jsonl", reports)
    write_summary_csv(OUT / "summary.csv", reports)
    print(f"wrote reports to {OUT}/")
    return 0 if not bad else 1


if __name__ == "__main__":
    raise SystemExit(main())

#!/usr/bin/env python3
"""Run the named scenarios and print the four headline figures.

Reports land in results/headline/ as JSON lines plus a CSV summary.
Seeds come from SETCHAIN_SEED (default 0).
"""

from pathlib import Path

from setchain.bench import (
    compare,
    metric_value,
    preset,
    run_scenario,
    seed_from_env,
    stationarity_ratio,
    write_reports_jsonl,
    write_summary_csv,
)

OUT = Path(__file__).resolve().parent.parent / "results" / "headline"


def main() -> int:
    seed = seed_from_env(0)
    reports = {}
    for name in ("firehose", "overload-fast", "overload-agg",
                 "large-none", "large-silent", "marathon"):
        report = run_scenario(preset(name).with_seed(seed))
        reports[name] = report
        state = "ok" if report.ok else f"{len(report.property_violations)} violations"
        print(f"{name}: stamped {report.adds_stamped}/{report.adds_attempted} "
              f"epochs {report.epochs_completed} [{state}]")

    print()
    print(f"adds per epoch under load      : "
          f"{metric_value(reports['firehose'], 'adds-per-epoch'):8.1f}")
    print(f"batching speedup when saturated: "
          f"{compare(reports['overload-agg'], reports['overload-fast'], 'adds-per-second'):8.2f}x")
    print(f"throughput with silent servers : "
          f"{compare(reports['large-silent'], reports['large-none'], 'adds-per-second'):8.2f}x")
    print(f"latency drift over a long run  : "
          f"{stationarity_ratio(reports['marathon']):8.3f}x")

    OUT.mkdir(parents=True, exist_ok=True)
    ordered = [reports[k] for k in sorted(reports)]
    write_reports_jsonl(OUT / "reports.jsonl", ordered)
    write_summary_csv(OUT / "summary.csv", ordered)
    print(f"\nwrote {len(ordered)} reports to {OUT}/")
    return 0 if all(r.ok for r in reports.values()) else 1


if __name__ == "__main__":
    raise SystemExit(main())

#!/usr/bin/env python3
"""Check the two Byzantine-adversary models against each other.

Random traces of the many-adversary model must map onto the pooled
single-adversary model and vice versa, staying observationally
equivalent after every event.  The first failure is saved as a replayable
bundle.

Usage: check_equivalence.py [SEEDS] [LENGTH]   (default 50 seeds x 200 events)
"""

import sys
from pathlib import Path

from setchain.bench import seed_from_env
from setchain.byz_model import (
    backward_trace_check,
    bundle_failure,
    forward_trace_check,
    save_bundle,
)

OUT = Path(__file__).resolve().parent.parent / "results"


def main() -> int:
    count = int(sys.argv[1]) if len(sys.argv) > 1 else 50
    length = int(sys.argv[2]) if len(sys.argv) > 2 else 200
    base = seed_from_env(0)
    for n, f in ((4, 1), (7, 2)):
        for direction, check in (("forward", forward_trace_check),
                                 ("backward", backward_trace_check)):
            for seed in range(base, base + count):
                report = check(n, f, seed, length=length)
                if report.ok:
                    continue
                print(f"{direction} n={n} f={f} seed={seed}: "
                      f"{report.reason} at event {report.index}")
                OUT.mkdir(parents=True, exist_ok=True)
                path = OUT / "counterexample.json"
                save_bundle(path, bundle_failure(direction, n, f, seed, report))
                print(f"saved bundle to {path}")
                return 1
        print(f"n={n} f={f}: {count} seeds x {length} events, both directions ok")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

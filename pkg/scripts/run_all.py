"""Run every audit and experiment kind at its defaults and print one line per kind.

    python3 scripts/run_all.py [--out DIR]
"""
import argparse
import os
import sys
import time

from roughpde import cli


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="roughpde_out")
    args = ap.parse_args()
    os.environ["ROUGHPDE_OUT"] = args.out
    worst = 0
    for sub, kinds in (("audit", cli.AUDIT_KINDS), ("run", cli.RUN_KINDS)):
        for kind in kinds:
            t0 = time.perf_counter()
            code = cli.main([sub, kind])
            print(f"  -> {sub} {kind}: exit {code} in {time.perf_counter() - t0:.1f}s", flush=True)
            worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())

"""Run every verification experiment at its default grid and write CSV/JSON reports.

    python scripts/run_checks.py --output results/checks
"""

import argparse
import time

from nelsonsim import experiments as ex
from nelsonsim.cli import emit_report

CHECKS = {
    "gross": ex.verify_gross_identity,
    "cancel": ex.verify_cancellation,
    "removal": ex.verify_removal,
    "sweep": ex.sweep_theorem,
    "energy": ex.verify_energy_sandwich,
    "trajectory": ex.trajectory_bounds,
    "selfenergy": ex.verify_selfenergy_AA,
    "bounds": ex.verify_operator_bounds,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--output", default="results/checks")
    ap.add_argument("--only", nargs="*", choices=sorted(CHECKS), help="subset of checks to run")
    args = ap.parse_args()
    failed = 0
    for name in args.only or CHECKS:
        t0 = time.perf_counter()
        rep = CHECKS[name]()
        dt = time.perf_counter() - t0
        emit_report(rep.records, ex.SweepRecord.HEADER, args.output, name, extra={"passed": rep.passed, "failures": rep.failures})
        print(f"{name:12s} {'pass' if rep.passed else 'FAIL'}  {dt:7.1f} s")
        for f in rep.failures:
            print(f"    {f}")
        failed += not rep.passed
    raise SystemExit(1 if failed else 0)


if __name__ == "__main__":
    main()

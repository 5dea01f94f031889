"""Run every verification suite at the standard sizes and print one JSON line per suite."""

import argparse
import sys

from ppma import verify


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    reports = [verify.run_inversion_lemma_suite(trials=1000, seed=args.seed, n=5)]
    for n, p in [(3, 2), (4, 2), (5, 3)]:
        reports.append(verify.run_algebra_suite(trials=100, seed=args.seed, n=n, p=p))
    for n, p, trials in [(3, 1, 500), (3, 2, 1000), (4, 2, 200), (5, 3, 100)]:
        reports.append(verify.run_operator_suite(trials=trials, seed=args.seed, n=n, p=p))
    for n, p in [(3, 1), (4, 2), (5, 3)]:
        reports.append(verify.run_current_positivity_suite(trials=1000, seed=args.seed, n=n, p=p))
    for report in reports:
        print(report.to_json())
    return 0 if all(r.passed for r in reports) else 5


if __name__ == "__main__":
    sys.exit(main())

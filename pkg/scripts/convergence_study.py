"""Recovery error of the Newton solver against exact (symbolic) data across grid sizes.

Example::

    python3 scripts/convergence_study.py --n 3 --p 2 --mode reduced --profile exp
"""

import argparse

from ppma import cli


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--n", default="3")
    parser.add_argument("--p", default="2")
    parser.add_argument("--mode", default="reduced", choices=["full", "reduced"])
    parser.add_argument("--profile", default="exp", choices=["trig", "exp"])
    parser.add_argument("--amplitude", default="0.05")
    parser.add_argument("--resolutions", default="", help="comma-separated m values")
    args = parser.parse_args()
    cfg = cli.parse_config(None, {
        "command": "study", "n": args.n, "p": args.p, "mode": args.mode, "tol": "1e-13",
        "data.kind": "exact", "data.profile": args.profile, "data.amplitude": args.amplitude,
        "study.resolutions": args.resolutions,
    })
    print(f"u* = {cli.data_potential(cfg)}")
    print(f"{'m':>4} {'points':>8} {'error':>12} {'ratio':>10} {'newton':>7}")
    for row in cli.convergence_study(cfg):
        print(f"{row['m']:>4} {row['points']:>8} {row['error_sup']:>12.3e} "
              f"{row['ratio']:>10.3g} {row['newton_iterations']:>7}")


if __name__ == "__main__":
    main()

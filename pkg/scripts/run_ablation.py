#!/usr/bin/env python3
"""Run the six-mode ablation from an INI config and print the table."""

import argparse

from grouptraj.config import load_config
from grouptraj.experiments import ablation_table_rows, load_suite, ordering_gaps, run_ablation


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", required=True, help="experiment INI file")
    parser.add_argument("--data", required=True, help="directory with trajectories and truth")
    parser.add_argument("--out", required=True, help="output directory for reports")
    args = parser.parse_args()

    cfg = load_config(args.config)
    records = load_suite(args.data)
    result = run_ablation(records, cfg.train, cfg.ablation, out_dir=args.out)

    print(f"{'mode':<16} {'minADE20':>9} {'minFDE20':>9}")
    for mode, ade, fde in ablation_table_rows(result):
        print(f"{mode:<16} {ade:>9.4f} {fde:>9.4f}")
    print()
    for better, worse, gap, stderr in ordering_gaps(result):
        status = "ok" if gap <= stderr else "VIOLATED"
        print(f"{better} <= {worse}: gap {gap:+.4f} (pooled stderr {stderr:.4f}) {status}")


if __name__ == "__main__":
    main()

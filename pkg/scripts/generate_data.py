#!/usr/bin/env python3
"""Generate an obstacle-split scene suite without an INI file."""

import argparse

from grouptraj.config import SuiteConfig
from grouptraj.experiments import generate_suite, save_suite


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--scenes", type=int, default=500)
    parser.add_argument("--agents", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    scenes = generate_suite(SuiteConfig(n_scenes=args.scenes, n_agents=args.agents, seed=args.seed))
    save_suite(scenes, args.out)
    splits = [s.truth.segments[0].stop_step for s in scenes]
    print(f"wrote {len(scenes)} scenes to {args.out} (splits at steps {min(splits)}-{max(splits)})")


if __name__ == "__main__":
    main()

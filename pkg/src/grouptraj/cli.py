"""Command-line interface: simulate, train, predict, eval, ablate.

Verbosity is controlled by the GROUPTRAJ_LOG_LEVEL environment variable
(DEBUG/INFO/WARNING/ERROR, default INFO); no other behavior depends on
the environment.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import load_config
from .errors import ContractError, ParseError, ValidationError
from .experiments import (
    generate_suite,
    load_suite,
    predict_scene,
    run_ablation,
    save_suite,
    scene_incidence,
)
from .metrics import evaluate_scene, save_report, summarize
from .model import MODES, Model, load_prediction, save_prediction
from .rng import RngStream
from .training import train, write_training_log

logger = logging.getLogger(__name__)

PREDICTION_SUFFIX = ".pred.json"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grouptraj",
        description="Group-aware trajectory prediction: data, training, and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate the obstacle-split scene suite")
    p.add_argument("--config", required=True, help="experiment INI file")
    p.add_argument("--out", required=True, help="output directory for scenes and truth")

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--config", required=True, help="experiment INI file")
    p.add_argument("--data", required=True, help="directory with trajectories and truth")
    p.add_argument("--mode", choices=MODES, default=None, help="ablation mode override")
    p.add_argument("--seed", type=int, default=None, help="training seed override")
    p.add_argument("--out", required=True, help="checkpoint output path")

    p = sub.add_parser("predict", help="sample futures for every scene")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="directory with trajectories")
    p.add_argument("--samples", type=int, default=20, help="futures per scene")
    p.add_argument("--out", required=True, help="output directory for predictions")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="directory with predictions")
    p.add_argument("--truth", required=True, help="directory with trajectories and truth")
    p.add_argument("--report", required=True, help="structured report output path")

    p = sub.add_parser("ablate", help="train and score every mode")
    p.add_argument("--config", required=True, help="experiment INI file")
    p.add_argument("--data", required=True, help="directory with trajectories and truth")
    p.add_argument("--out", required=True, help="output directory for the report table")
    return parser


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    scenes = generate_suite(cfg.suite)
    save_suite(scenes, args.out)
    logger.info("wrote %d scenes to %s", len(scenes), args.out)
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config).train
    if args.mode is not None:
        cfg = replace(cfg, mode=args.mode)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    records = load_suite(args.data)
    result = train(records, cfg, out_path=args.out)
    write_training_log(result.log, f"{args.out}.log.csv")
    logger.info(
        "trained %s seed %d: best val loss %.6f at epoch %d",
        cfg.mode,
        cfg.seed,
        result.best_val_loss,
        result.best_epoch,
    )
    return 0


def _cmd_predict(args) -> int:
    model, extra = Model.load(args.ckpt)
    records = load_suite(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base_seed = int(extra.get("train_config", {}).get("seed", 0))
    for record in records:
        rng = RngStream(seed=base_seed).derive("predict", record.scene_id)
        bundle = predict_scene(model, record, args.samples, rng)
        save_prediction(bundle, record.scene_id, out / f"{record.scene_id}{PREDICTION_SUFFIX}")
    logger.info("wrote %d predictions to %s", len(records), out)
    return 0


def _cmd_eval(args) -> int:
    records = {r.scene_id: r for r in load_suite(args.truth)}
    paths = sorted(Path(args.pred).glob(f"*{PREDICTION_SUFFIX}"))
    if not paths:
        raise ContractError(f"no predictions found under {args.pred}")
    scenes = []
    for path in paths:
        scene_id, bundle = load_prediction(path)
        if scene_id not in records:
            raise ValidationError(f"prediction {path.name} has no matching truth scene")
        record = records[scene_id]
        truth_future = record.trajectories.positions[:, bundle.t_h : bundle.t_h + bundle.t_f]
        incidence = scene_incidence(bundle, record.truth) if record.truth else None
        scenes.append(evaluate_scene(scene_id, truth_future, bundle.trajectories, incidence))
    report = summarize(scenes)
    save_report(report, args.report)
    _write_scene_table(report, Path(args.report).with_suffix(".tsv"))
    logger.info(
        "evaluated %d scenes: minADE %.4f minFDE %.4f", len(scenes), report.min_ade, report.min_fde
    )
    return 0


def _write_scene_table(report, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("scene_id\tmin_ade\tmin_fde\tprecision\trecall\tf1\n")
        for s in report.scenes:
            inc = s.incidence if s.incidence else ("", "", "")
            cells = [s.scene_id, f"{s.min_ade:.6f}", f"{s.min_fde:.6f}"]
            cells += [f"{v:.6f}" if v != "" else "" for v in inc]
            fh.write("\t".join(cells) + "\n")


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    records = load_suite(args.data)
    result = run_ablation(records, cfg.train, cfg.ablation, out_dir=args.out)
    logger.info("ablation table written to %s", Path(args.out) / "table.tsv")
    for mode in MODES:
        logger.info("  %s: mean minADE %.4f", mode, result.mean_min_ade(mode))
    return 0


COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("GROUPTRAJ_LOG_LEVEL", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ContractError, ParseError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

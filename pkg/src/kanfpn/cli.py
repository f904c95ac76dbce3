"""Command-line entry points: gradcheck, train, ablate, eval."""

from __future__ import annotations

import argparse
import os
import sys

from .checks import run_scope, scope_names, scope_tolerance
from .config import ExperimentConfig, load_config
from .errors import KanfpnError
from .harness import (SMOKE_EVAL_SAMPLES, SMOKE_TRAIN_SAMPLES, evaluate_pck, make_batch,
                      overfit_train_config, run_ablation, run_stage, smoke_train_config)
from .layers import load_checkpoint
from .pose import build_pose_model, decode_keypoints, write_predictions_csv
from .stem import StemVariant

GRADCHECK_EXIT_TOL = 1e-5


def _load_experiment(path) -> ExperimentConfig:
    if path:
        return load_config(path)
    return ExperimentConfig().finalize()


def _apply_mode(exp: ExperimentConfig, smoke: bool, overfit: bool):
    """Returns (train_cfg, train_samples, eval_samples, eval_on_train)."""
    if smoke:
        return smoke_train_config(exp.train), SMOKE_TRAIN_SAMPLES, SMOKE_EVAL_SAMPLES, False
    if overfit:
        from .harness import OVERFIT_SAMPLES
        return overfit_train_config(exp.train), OVERFIT_SAMPLES, 0, True
    return exp.train, exp.train_samples, exp.eval_samples, False


def cmd_gradcheck(args) -> int:
    report = run_scope(args.scope, seed=args.seed)
    tol = scope_tolerance(args.scope)
    print(f"gradcheck scope={args.scope} seed={args.seed} (tolerance {tol:g})")
    print(report)
    status = 0 if report.worst <= GRADCHECK_EXIT_TOL else 1
    print(f"max relative error: {report.worst:.3e} -> {'PASS' if status == 0 else 'FAIL'}")
    return status


def cmd_train(args) -> int:
    exp = _load_experiment(args.config)
    if args.seed is not None:
        exp.train.seed = args.seed
        exp.scene.seed = args.seed
    if args.out:
        exp.out_dir = args.out
    variant = StemVariant.from_key(args.stage)
    train_cfg, n_train, n_eval, eval_on_train = _apply_mode(exp, args.smoke, args.overfit)
    records = run_stage(variant, train_cfg, exp.scene, exp.pose, exp.stem,
                        n_train, n_eval, exp.out_dir, eval_on_train)
    final = records[-1]
    print(f"stage {variant.value}: {len(records)} epochs recorded, "
          f"final loss {final.loss:.6f}, PCK@0.05 {final.pck05:.3f}, "
          f"PCK@0.1 {final.pck10:.3f}, params {final.params}")
    print(f"wrote {os.path.join(exp.out_dir, variant.value, 'metrics.csv')}")
    return 0


def cmd_ablate(args) -> int:
    exp = _load_experiment(args.config)
    if args.seed is not None:
        exp.train.seed = args.seed
        exp.scene.seed = args.seed
    if args.out:
        exp.out_dir = args.out
    stages = [StemVariant.from_key(k.strip()) for k in args.stages.split(",") if k.strip()]
    train_cfg, n_train, n_eval, _ = _apply_mode(exp, args.smoke, False)
    table = run_ablation(stages, train_cfg, exp.scene, exp.pose, exp.stem,
                         n_train, n_eval, exp.out_dir)
    print(f"{'stage':<6} {'ref_ap':>7} {'pck05':>7} {'pck10':>7} {'params':>9}  error")
    for rec in table:
        print(f"{rec.stage:<6} {rec.reference_ap:>7.1f} {rec.pck05:>7.3f} "
              f"{rec.pck10:>7.3f} {rec.params:>9d}  {rec.error}")
    print(f"wrote {os.path.join(exp.out_dir, 'ablation.csv')}")
    return 0


def cmd_eval(args) -> int:
    exp = _load_experiment(args.config)
    variant = StemVariant.from_key(args.stage)
    model = build_pose_model(variant, exp.pose, exp.stem, seed=exp.train.seed)
    load_checkpoint(model.params, args.ckpt)
    from .data import SyntheticDataset
    total = exp.train_samples + exp.eval_samples
    dataset = SyntheticDataset(exp.scene, total, cache=True)
    eval_ids = list(range(exp.train_samples, total))
    pck05, pck10 = evaluate_pck(model, dataset, eval_ids, exp.train.batch_size)
    print(f"stage {variant.value}: PCK@0.05 {pck05:.3f}, PCK@0.1 {pck10:.3f} "
          f"on {len(eval_ids)} held-out samples")
    out_csv = args.predictions or os.path.join(exp.out_dir, variant.value, "predictions.csv")
    if os.path.dirname(out_csv):
        os.makedirs(os.path.dirname(out_csv), exist_ok=True)
    preds = []
    for lo in range(0, len(eval_ids), exp.train.batch_size):
        batch = make_batch([dataset[i] for i in eval_ids[lo:lo + exp.train.batch_size]])
        preds.extend(decode_keypoints(model.forward(batch.images), model.cfg.heatmap_stride))
    write_predictions_csv(out_csv, preds, sample_ids=eval_ids)
    print(f"wrote {out_csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kanfpn",
                                     description="Desk-scale pose stem ablation harness")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference check of a named scope")
    g.add_argument("--scope", required=True,
                   help=f"one of: {', '.join(scope_names())}")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gradcheck)

    t = sub.add_parser("train", help="train one stem stage")
    t.add_argument("--stage", required=True, help="s0..s6")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (default runs/)")
    t.add_argument("--smoke", action="store_true", help="1 epoch over 8 samples")
    t.add_argument("--overfit", action="store_true",
                   help="memorize a fixed 16-sample set within 2000 steps")
    t.set_defaults(fn=cmd_train)

    a = sub.add_parser("ablate", help="run several stages with a shared seed")
    a.add_argument("--stages", required=True, help="comma list, e.g. s0,s2,s4,s5")
    a.add_argument("--config")
    a.add_argument("--seed", type=int)
    a.add_argument("--out")
    a.add_argument("--smoke", action="store_true")
    a.set_defaults(fn=cmd_ablate)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--stage", required=True)
    e.add_argument("--config")
    e.add_argument("--predictions", help="predictions CSV path")
    e.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except KanfpnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``vecvad {extract,train,score,evaluate,run,synth}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, load_config
from .dataset_io import CacheFormatError, ManifestError

log = logging.getLogger("vecvad")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _overrides(args) -> dict:
    o: dict = {}
    if args.preset:
        o.setdefault("ensemble", {})["preset"] = args.preset
    if args.mode:
        o.setdefault("roi", {})["mode"] = args.mode
    if args.seed is not None:
        o.setdefault("train", {})["seed"] = args.seed
    if args.out:
        # --out is relative to the working directory, not to the config file
        o["output"] = {"dir": str(Path(args.out).resolve())}
    return o


def _config(args):
    return load_config(args.config, args.dataset, _overrides(args))


def cmd_extract(args) -> int:
    cfg = _config(args)
    stats = pipeline.extract(cfg)
    for split, s in stats.items():
        print(f"{split}: N={s.events} appearance_rois={s.appearance_rois} "
              f"motion_rois={s.motion_rois} skipped_history={s.skipped_history} frames={s.frames}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    result = pipeline.train_models(cfg)
    print(f"trained {len(result['trained'])} models, kept {len(result['skipped'])} existing")
    for name in result["trained"]:
        print(f"  {name}")
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _config(args)
    stats = pipeline.score(cfg)
    print(f"normalization: mean_a={stats.mean_a:.6g} std_a={stats.std_a:.6g} "
          f"mean_m={stats.mean_m:.6g} std_m={stats.std_m:.6g}")
    print(f"scores written to {pipeline.scores_path(cfg, 'test').parent}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    row = pipeline.evaluate(cfg)
    print(f"{row.dataset}\t{row.preset}\tAUROC={row.roc.auroc:.4f}\tEER={row.roc.eer:.4f}")
    return EXIT_OK


def cmd_run(args) -> int:
    for step in (cmd_extract, cmd_train, cmd_score, cmd_evaluate):
        code = step(args)
        if code:
            return code
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import write_synthetic_dataset

    paths = write_synthetic_dataset(args.dir, seed=args.seed or 0)
    print(f"synthetic dataset written; try: vecvad run --config {paths['config']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vecvad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--dataset", metavar="NAME",
                        help="dataset name; ucsdped2/avenue/shanghaitech select shipped defaults")
    common.add_argument("--preset", choices=("vec-a", "vec-am", "custom"))
    common.add_argument("--mode", choices=("appearance_only", "motion_only", "both"))
    common.add_argument("--seed", type=int)
    common.add_argument("--out", metavar="DIR")

    for name, fn, help_ in (
        ("extract", cmd_extract, "localize RoIs and write event archives"),
        ("train", cmd_train, "train the completion networks"),
        ("score", cmd_score, "score events of both splits"),
        ("evaluate", cmd_evaluate, "frame-level ROC/AUROC/EER report"),
        ("run", cmd_run, "all four stages in order"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)

    p = sub.add_parser("synth", help="write a small synthetic dataset with a matching config")
    p.add_argument("dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ManifestError, CacheFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every stage failure maps to one exit code
        log.debug("stage failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

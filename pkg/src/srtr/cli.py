"""Command-line entry point: ``srtr gen-data | train | eval | gradcheck``.

Exit status is 0 on success and 2 for bad flags. Other failures print one
machine-readable line ``error category=<name> message=<text>`` to stderr and
exit with the category's code (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .errors import SrtrError

EXIT_CODES = {
    "error": 1,
    "config": 3,
    "load": 4,
    "input": 5,
    "numeric": 6,
    "contract": 7,
    "dimension": 8,
    "lookup": 9,
    "generation": 10,
    "gradcheck": 11,
}


def _load_cfg(path):
    from .config import load_config

    return load_config(path)


def _read_split(data_path: Path, split: str | None):
    from .scenegen import read_dataset, read_manifest

    scenes, gen_cfg = read_dataset(data_path)
    if split:
        manifest = data_path.with_name(data_path.name + ".splits")
        if not manifest.is_file():
            from .errors import LoadError

            raise LoadError(f"no split manifest next to {data_path} (expected {manifest})")
        idx = read_manifest(manifest).get(split)
        if idx is None:
            from .errors import InputError

            raise InputError(f"split {split!r} not in {manifest}")
        scenes = [scenes[i] for i in idx]
    return scenes, gen_cfg


def cmd_gen_data(args) -> int:
    from .scenegen import generate_dataset, split_indices, write_dataset, write_manifest

    cfg = _load_cfg(args.config)
    n = args.n if args.n is not None else cfg.train.n_scenes
    seed = args.seed if args.seed is not None else cfg.train.data_seed
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    scenes = generate_dataset(n, cfg.data, base_seed=seed)
    write_dataset(scenes, out, cfg.data)
    splits = split_indices(n, seed, args.train_fraction)
    write_manifest(splits, out.with_name(out.name + ".splits"))
    print(f"wrote {n} scenes to {out} ({len(splits['train'])} train / {len(splits['val'])} val)")
    return 0


def cmd_train(args) -> int:
    from .config import dump_config
    from .errors import ConfigError
    from .train import train

    cfg = _load_cfg(args.config)
    overrides = {}
    if args.steps is not None:
        overrides.setdefault("train", {})["steps"] = args.steps
    if args.seed is not None:
        overrides.setdefault("train", {})["seed"] = args.seed
    if overrides:
        cfg = cfg.replace(**overrides)
    data = args.data or cfg.paths.data
    if not data:
        raise ConfigError("no dataset: pass --data or set paths.data")
    scenes, gen_cfg = _read_split(Path(data), args.split)
    if gen_cfg.digest() != cfg.data.digest():
        raise ConfigError("dataset was generated with different data.* settings than the config")
    out = Path(args.out or cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    log = out / "metrics.log"
    log.write_text("")
    state = train(cfg, scenes, log_path=log, checkpoint_dir=out / "checkpoints")
    print(f"trained {state.step} steps; checkpoint {out / 'checkpoints' / 'final.npz'}")
    return 0


def cmd_eval(args) -> int:
    from .evaluate import (
        evaluate,
        format_reports,
        setting_order_exceptions,
        top_triplets_dump,
    )
    from .metrics import SETTINGS
    from .train import load_checkpoint

    cfg = _load_cfg(args.config) if args.config else None
    state = load_checkpoint(args.ckpt, cfg, force=args.force)
    scenes, _ = _read_split(Path(args.data), args.split)
    settings = SETTINGS if args.setting == "all" else (args.setting,)
    reports = evaluate(state.model, scenes, settings)
    print(format_reports(reports, state.model.cfg.data.predicate_names), end="")
    for issue in setting_order_exceptions(reports):
        print(f"note: setting order exception: {issue}")
    if args.dump:
        Path(args.dump).write_text(top_triplets_dump(state.model, scenes, 10, settings[-1]))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import format_results, run_suite

    results = run_suite(probes=args.probes, seed=args.seed)
    print(format_results(results))
    if all(r.passed for r in results):
        return 0
    bad = ",".join(r.name for r in results if not r.passed)
    print(f"error category=gradcheck message=failed checks: {bad}", file=sys.stderr)
    return EXIT_CODES["gradcheck"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srtr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"srtr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic scene dataset")
    g.add_argument("--config", help="config file (default: $SRTR_CONFIG, then desk preset)")
    g.add_argument("--out", required=True, help="dataset file to write")
    g.add_argument("--n", type=int, help="number of scenes (default train.n_scenes)")
    g.add_argument("--seed", type=int, help="base seed (default train.data_seed)")
    g.add_argument("--train-fraction", type=float, default=0.7)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--data", help="dataset file (default paths.data)")
    t.add_argument("--out", help="run directory (default paths.out)")
    t.add_argument("--split", help="train on one split of the manifest, e.g. train")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--setting", choices=("predcls", "sgcls", "sgdet", "all"), default="all")
    e.add_argument("--split", help="evaluate one split, e.g. val")
    e.add_argument("--config", help="expected config; refused on hash mismatch without --force")
    e.add_argument("--force", action="store_true")
    e.add_argument("--dump", help="write each scene's top-10 triplets here")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    c.add_argument("--probes", type=int, default=4, help="sampled coordinates per parameter")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SrtrError as exc:
        print(f"error category={exc.category} message={exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)


if __name__ == "__main__":
    sys.exit(main())

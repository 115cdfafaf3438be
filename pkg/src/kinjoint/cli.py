"""Command line entry point: ``kinjoint {synth,train,evaluate,compare}``.

Exit status is 0 on success, 2 for configuration errors and 1 for any other
failure; failures also print ``{"error": ..., "message": ...}`` to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .data.manifest import save_image, write_manifest
from .data.synth import synth_families

log = logging.getLogger("kinjoint")


def _common(p, out_help="output directory (overrides output_dir)"):
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="experiment seed")
    p.add_argument("--method", help="ensemble_star, ensemble, multiclass, jlnet_dagger, jlnet_ddagger, jlnet_full")
    p.add_argument("--protocol", help="independent, mixed or real")
    p.add_argument("--folds", type=int, help="number of cross-validation folds")
    p.add_argument("--out", type=Path, help=out_help)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. schedule.phase1_epochs=3 (repeatable)")
    p.add_argument("--force", action="store_true", help="overwrite existing artifacts")


def build_parser():
    parser = argparse.ArgumentParser(prog="kinjoint", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("synth", help="write a synthetic manifest and images"),
            out_help="directory for manifest.csv and images/")
    _common(sub.add_parser("train", help="train every configured fold"))
    _common(sub.add_parser("evaluate", help="evaluate trained checkpoints"))
    cmp = sub.add_parser("compare", help="tabulate evaluated experiments")
    cmp.add_argument("configs", nargs="*", type=Path, help="experiment configs to compare")
    cmp.add_argument("--config", dest="extra_configs", action="append", type=Path, default=[])
    cmp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="override applied to every config")
    cmp.add_argument("--out", type=Path, help="write the table here instead of stdout")
    return parser


def config_from_args(args):
    overrides = list(args.override)
    for flag, key in (("seed", "seed"), ("method", "method"), ("protocol", "protocol"), ("folds", "folds")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    if getattr(args, "out", None) is not None and args.command in ("train", "evaluate"):
        overrides.append(f"output_dir={json.dumps(str(args.out))}")
    return load_config(args.config, overrides)


def cmd_synth(config, out, force=False):
    out = Path(out or Path(config.output_dir) / "synthetic")
    manifest_path = out / "manifest.csv"
    if manifest_path.exists() and not force:
        raise FileExistsError(f"{manifest_path} exists; pass --force to overwrite")
    data = synth_families(config.dataset.synthetic)
    for r in data.manifest.records:
        save_image(data.images[r.image_id], out / r.path)
    write_manifest(data.manifest, manifest_path)
    return manifest_path


def cmd_train(config, force=False):
    from .experiment import run_train

    return run_train(config, force=force)


def cmd_evaluate(config, force=False):
    from .experiment import run_evaluate

    return run_evaluate(config, force=force)


def cmd_compare(configs):
    from .experiment import run_compare

    return run_compare(configs)


def _fail(exc, code):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "compare":
            paths = list(args.configs) + list(args.extra_configs)
            table = cmd_compare([load_config(p, args.override) for p in paths])
            if args.out:
                args.out.parent.mkdir(parents=True, exist_ok=True)
                args.out.write_text(table, encoding="utf-8")
            else:
                sys.stdout.write(table)
            return 0
        config = config_from_args(args)
        if args.command == "synth":
            path = cmd_synth(config, args.out, args.force)
        elif args.command == "train":
            path = cmd_train(config, args.force)
        else:
            path = cmd_evaluate(config, args.force)
        print(str(path))
        return 0
    except ConfigError as exc:
        return _fail(exc, 2)
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        log.debug("failure", exc_info=True)
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())

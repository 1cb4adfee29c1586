"""Command-line entry point wiring the full pipeline.

Exit codes: 0 success, 1 user error (bad flags, unknown config keys,
missing or invalid inputs), 2 internal error. Every successful run
writes a <command>.resolved.cfg echo next to its primary outputs.
"""

import argparse
import re
import sys
from pathlib import Path

from .config import SCHEMAS, parse_config_file, resolve, write_echo
from .errors import ConfigError, DataError, MetricError, PatchBorderError

_USER_ERRORS = (ConfigError, DataError, MetricError, PatchBorderError)


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; that is a user error here
    def error(self, message):
        raise _ArgError(message)


def build_parser():
    parser = _Parser(prog="mvdiffuse",
                     description="multi-view specular-to-diffuse translation")
    sub = parser.add_subparsers(dest="command")
    for command, keys in SCHEMAS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="flat key=value file")
        for key in keys:
            flag = "--" + key.name.replace("_", "-")
            if key.typ is bool:
                p.add_argument(flag, dest=key.name, default=None,
                               action="store_const", const="true",
                               help=key.help)
            else:
                p.add_argument(flag, dest=key.name, default=None,
                               help=key.help)
    return parser


def _natural_key(name):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", name)]


def _run_gen_data(cfg):
    from .datagen.dataset import DatasetConfig, generate_dataset

    dc = DatasetConfig(n_scenes=cfg["scenes"], resolution=cfg["resolution"],
                       n_views=cfg["views"], seed=cfg["seed"],
                       min_corr=cfg["min_corr"], patch_size=cfg["patch_size"])
    generate_dataset(dc, cfg["out"], overwrite=cfg["overwrite"])
    write_echo(cfg, Path(cfg["out"]) / "gen-data.resolved.cfg")


def _run_find_corr(cfg):
    from .correspond import detect_features, match_triplet
    from .datagen.dataset import MANIFEST_NAME, load_manifest, load_view, \
        write_corr_file, corr_rel_path
    import json

    root = Path(cfg["dataset"])
    manifest = load_manifest(root)
    min_corr = int(manifest["config"]["min_corr"])
    patch = int(manifest["config"]["patch_size"])
    res = int(manifest["config"]["resolution"])

    survivors = []
    for scene in manifest["scenes"]:
        n_views = scene["views"]
        glossy = [load_view(root, scene, "glossy", v) for v in range(n_views)]
        feats = [detect_features(g) for g in glossy]
        windows = [match_triplet(feats[t], feats[t + 1], feats[t + 2],
                                 (res, res), patch)
                   for t in range(n_views - 2)]
        # same all-or-nothing rule as generation: a scene stays listed
        # only when every window clears the correspondence minimum
        if any(len(c) < min_corr for c in windows):
            continue
        scene["triplets"] = []
        for t, corrs in enumerate(windows):
            rel = corr_rel_path(scene["scene_id"], t)
            write_corr_file(root / rel, t, corrs)
            scene["triplets"].append({
                "triplet": t,
                "views": [t, t + 1, t + 2],
                "n_corr": len(corrs),
                "corr_file": rel,
            })
        survivors.append(scene)

    manifest["scenes"] = survivors
    manifest["correspondences"] = "feat"
    (root / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_echo(cfg, root / "find-corr.resolved.cfg")


def _run_train(cfg):
    from .losses import LossWeights
    from .training import TrainConfig, train

    tc = TrainConfig(
        weights=LossWeights(adv=cfg["w_adv"], cyc=cfg["w_cyc"],
                            corr=cfg["w_corr"]),
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        max_iterations=cfg["iterations"],
        checkpoint_every=cfg["checkpoint_every"],
        patch_size=cfg["patch_size"],
        seed=cfg["seed"],
        base_channels_g=cfg["base_channels_g"],
        base_channels_d=cfg["base_channels_d"],
        disc_layers=cfg["disc_layers"],
    )
    write_echo(cfg, Path(cfg["out"]) / "train.resolved.cfg")
    train(cfg["dataset"], tc, cfg["out"])


def _run_translate(cfg):
    from .imgio import load_image
    from .inference import save_sequence, translate_sequence
    from .training import load_generator

    in_dir = Path(cfg["input_dir"])
    if not in_dir.is_dir():
        raise DataError(f"--input-dir: not a directory: {in_dir}")
    paths = sorted(in_dir.glob(cfg["pattern"]),
                   key=lambda p: _natural_key(p.name))
    if not paths:
        raise DataError(
            f"--input-dir: no files matching {cfg['pattern']!r} in {in_dir}")
    views = [load_image(p) for p in paths]
    gen, _ = load_generator(cfg["checkpoint"])
    out = translate_sequence(gen, views)
    save_sequence(out, cfg["output_dir"])
    write_echo(cfg, Path(cfg["output_dir"]) / "translate.resolved.cfg")


def _run_evaluate(cfg):
    from .evaluation import evaluate

    out = Path(cfg["out"])
    evaluate(cfg["dataset"], cfg["checkpoint"], out)
    write_echo(cfg, out.with_suffix(".resolved.cfg"))


_RUNNERS = {
    "gen-data": _run_gen_data,
    "find-corr": _run_find_corr,
    "train": _run_train,
    "translate": _run_translate,
    "evaluate": _run_evaluate,
}


def run(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        file_values = {}
        if args.config is not None:
            if not Path(args.config).exists():
                raise ConfigError(f"--config: no such file: {args.config}")
            file_values = parse_config_file(args.config)
        flag_values = {k.name: getattr(args, k.name)
                       for k in SCHEMAS[args.command]
                       if getattr(args, k.name) is not None}
        cfg = resolve(args.command, file_values, flag_values)
        checkpoint = cfg.get("checkpoint")
        if checkpoint is not None and not Path(checkpoint).exists():
            raise ConfigError(f"--checkpoint: no such file: {checkpoint}")
        _RUNNERS[args.command](cfg)
        return 0
    except _ArgError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except _USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # anything unplanned is an internal error
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

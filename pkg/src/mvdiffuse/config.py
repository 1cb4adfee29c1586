"""Flat key=value run configuration.

One schema per CLI command. Values resolve in three layers: schema
defaults, then the config file, then command-line flags. Unknown keys
are user errors naming the key; after merging, missing required paths
are user errors naming the flag. The fully resolved mapping is echoed
as sorted key=value lines next to the command's outputs so any run can
be reproduced from its echo alone.
"""

from pathlib import Path

from .errors import ConfigError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class Key:
    def __init__(self, name, typ, default=None, required=False, help=""):
        self.name = name
        self.typ = typ
        self.default = default
        self.required = required
        self.help = help


SCHEMAS = {
    "gen-data": [
        Key("out", str, required=True, help="output dataset directory"),
        Key("scenes", int, 20, help="number of scenes to render"),
        Key("resolution", int, 64, help="square view resolution (power of two)"),
        Key("views", int, 5, help="views per scene (>= 3)"),
        Key("seed", int, 0, help="master seed"),
        Key("min_corr", int, 10, help="minimum correspondences per kept triplet"),
        Key("patch_size", int, 0, help="correspondence patch size (0: resolution/2)"),
        Key("overwrite", bool, False, help="allow writing into a non-empty directory"),
    ],
    "find-corr": [
        Key("dataset", str, required=True, help="dataset directory to recompute"),
    ],
    "train": [
        Key("dataset", str, required=True, help="training dataset directory"),
        Key("out", str, required=True, help="run directory for checkpoints/metrics"),
        Key("iterations", int, 2000, help="total optimization iterations"),
        Key("checkpoint_every", int, 500, help="checkpoint interval"),
        Key("seed", int, 0, help="training seed"),
        Key("learning_rate", float, 2e-4, help="Adam learning rate"),
        Key("batch_size", int, 1, help="triplet pairs per iteration"),
        Key("patch_size", int, 0, help="correspondence patch size (0: dataset value)"),
        Key("base_channels_g", int, 8, help="generator width (64 = full scale)"),
        Key("base_channels_d", int, 8, help="discriminator width (64 = full scale)"),
        Key("disc_layers", int, 0, help="discriminator depth (0: auto)"),
        Key("w_adv", float, 1.0, help="adversarial weight"),
        Key("w_cyc", float, 10.0, help="cycle-consistency weight"),
        Key("w_corr", float, 5.0, help="correspondence weight"),
    ],
    "translate": [
        Key("checkpoint", str, required=True, help="trained checkpoint file"),
        Key("input_dir", str, required=True, help="directory of input views"),
        Key("output_dir", str, required=True, help="directory for translated views"),
        Key("pattern", str, "glossy_*.png", help="input filename glob"),
    ],
    "evaluate": [
        Key("checkpoint", str, required=True, help="trained checkpoint file"),
        Key("dataset", str, required=True, help="dataset directory to score"),
        Key("out", str, required=True, help="report JSON path"),
    ],
}


def _coerce(key: Key, raw):
    if isinstance(raw, str):
        if key.typ is bool:
            low = raw.strip().lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ConfigError(f"key {key.name!r}: not a boolean: {raw!r}")
        try:
            return key.typ(raw)
        except ValueError:
            raise ConfigError(
                f"key {key.name!r}: cannot parse {raw!r} as {key.typ.__name__}")
    return raw


def parse_config_file(path):
    """Read a flat key=value file; '#' starts a comment line."""
    text = Path(path).read_text()
    out = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve(command, file_values, flag_values):
    """Merge defaults < file < flags into a validated mapping."""
    schema = {k.name: k for k in SCHEMAS[command]}
    for k in file_values:
        if k not in schema:
            raise ConfigError(f"unknown config key {k!r} for {command}")
    for k in flag_values:
        if k not in schema:
            raise ConfigError(f"unknown flag key {k!r} for {command}")

    merged = {}
    for name, key in schema.items():
        val = key.default
        if name in file_values:
            val = _coerce(key, file_values[name])
        if name in flag_values and flag_values[name] is not None:
            val = _coerce(key, flag_values[name])
        if key.required and val is None:
            flag = "--" + name.replace("_", "-")
            raise ConfigError(f"missing required {flag}")
        merged[name] = val
    return merged


def echo_lines(resolved):
    """Deterministic sorted key=value rendering of a resolved config."""
    lines = []
    for k in sorted(resolved):
        v = resolved[k]
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def write_echo(resolved, path):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(echo_lines(resolved))
    return p

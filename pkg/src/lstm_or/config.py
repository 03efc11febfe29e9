"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Lists are comma-separated. Unknown keys and malformed values are rejected.
Relative paths are resolved against the directory of the config file, and
the resolved file written next to a command's outputs holds absolute paths,
so it reproduces the run on its own.
"""

import os
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


def _opt(kind):
    return "?" + kind


# key -> (kind, default)
SCHEMA = {
    # data
    "profile": ("str", "auto"),
    "train_file": (_opt("path"), None),
    "test_file": (_opt("path"), None),
    "rul_file": (_opt("path"), None),
    "series_file": (_opt("path"), None),
    "censor_percent": ("float", 0.0),
    "val_fraction": ("float", 0.2),
    "n_windows": ("int", 20),
    "max_len": ("int", 360),
    "seed": ("int", 0),
    # synthetic generator
    "synth_units": ("int", 100),
    "synth_sensors": ("int", 8),
    "synth_noise": ("float", 0.3),
    "synth_unit_variation": ("float", 0.2),
    # interval scheme
    "rul_max": ("float", 130.0),
    "n_intervals": ("int", 10),
    # training
    "mode": ("str", "orc"),
    "hidden_size": ("int", 50),
    "n_layers": ("int", 2),
    "learning_rate": ("float", 0.001),
    "dropout": ("float", 0.2),
    "batch_size": ("int", 32),
    "max_iter": ("int", 2000),
    "patience": ("int", 10),
    "eval_every": (_opt("int"), None),
    "grad_clip": ("float", 5.0),
    "grid_hidden_size": ("ints", (50, 60, 70, 80, 90, 100)),
    "grid_n_layers": ("ints", (2, 3)),
    "grid_learning_rate": ("floats", (0.001, 0.005)),
    # ensemble
    "pool_size": ("int", 10),
    "n_members": ("int", 6),
    # artifacts consumed by later commands
    "cache": (_opt("path"), None),
    "model": (_opt("path"), None),
    "predictions": (_opt("path"), None),
    # evaluation
    "tau_e": ("float", 10.0),
    "tau_u": ("float", 0.2),
    "tau_early": ("float", 13.0),
    "tau_late": ("float", 10.0),
    "tau_u_sweep": ("floats", tuple(round(0.1 * i, 10) for i in range(1, 16))),
    "tau_r_sweep": ("floats", tuple(float(v) for v in range(10, 131, 10))),
    "tau_e_sweep": ("floats", tuple(float(v) for v in range(10, 131, 10))),
    "n_diagnostics": ("int", 5),
    "n_nearest": ("int", 3),
    # command switches, recorded so the resolved config replays the run
    "grid_search": ("bool", False),
    "diagnostics": ("bool", False),
}


def _convert(key, kind, raw, base_dir):
    optional = kind.startswith("?")
    kind = kind.lstrip("?")
    text = raw.strip()
    if optional and text.lower() in ("", "none"):
        return None
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text.lower() not in ("true", "false"):
                raise ValueError
            return text.lower() == "true"
        if kind == "str":
            if not text:
                raise ValueError
            return text
        if kind == "path":
            path = os.path.expanduser(text)
            return os.path.normpath(os.path.join(base_dir, path))
        if kind == "ints":
            return tuple(int(v) for v in text.split(","))
        if kind == "floats":
            return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw.strip()!r} as {kind}") from None
    raise AssertionError(kind)


def _render(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    values: dict
    source: str = None

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def replace(self, **updates):
        for key in updates:
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
        return RunConfig({**self.values, **updates}, self.source)

    def dumps(self):
        return "".join(f"{key} = {_render(self.values[key])}\n" for key in sorted(self.values))

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())
        return path

    def estimator_params(self):
        keys = ("hidden_size", "n_layers", "learning_rate", "dropout", "batch_size", "max_iter", "patience",
                "eval_every", "grad_clip", "rul_max", "n_intervals", "max_len")
        return {k: self.values[k] for k in keys}

    def grid(self):
        return {"hidden_size": list(self.grid_hidden_size), "n_layers": list(self.grid_n_layers),
                "learning_rate": list(self.grid_learning_rate)}


def defaults():
    return RunConfig({k: v for k, (_, v) in SCHEMA.items()})


def parse_config(text, base_dir="."):
    values = dict(defaults().values)
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        values[key] = _convert(key, SCHEMA[key][0], raw, base_dir)
    return RunConfig(values)


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    cfg = parse_config(text, os.path.dirname(os.path.abspath(path)))
    cfg.source = os.path.abspath(path)
    return cfg

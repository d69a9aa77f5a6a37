"""Sectioned key=value run configuration.

The schema below is the documentation of record: one section per module,
every key typed and defaulted.  Unknown sections or keys are rejected so
a typo cannot silently fall back to a default.
"""
from __future__ import annotations

import configparser
import copy

from .errors import ConfigError


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(text)


def _int_list(text: str):
    return tuple(int(p) for p in text.split(",") if p.strip())


def _float_list(text: str):
    return tuple(float(p) for p in text.split(",") if p.strip())


def _str_list(text: str):
    return tuple(p.strip() for p in text.split(",") if p.strip())


# section -> key -> (parser, default)
SCHEMA = {
    "data": {
        "source": (str, "synth"),          # synth | csv
        "path": (str, ""),
        "split": (str, "ratio"),           # ratio | ett_h | ett_m
        "ratios": (_float_list, (0.7, 0.1, 0.2)),
        "stride": (int, 1),
    },
    "synth": {
        "length": (int, 2000),
        "trend_slope": (float, 0.0),
        "period": (float, 24.0),
        "amplitude": (float, 1.0),
        "period2": (float, 0.0),
        "amplitude2": (float, 0.0),
        "spike_rate": (float, 0.0),
        "spike_mag": (float, 0.0),
        "spike_decay": (float, 0.0),
        "noise_sigma": (float, 0.1),
        "seed": (int, 0),
        "variates": (int, 1),
    },
    "series": {
        "lookback": (int, 672),
        "short_len": (int, 336),
        "horizon": (int, 96),
    },
    "patcher": {
        "patch_long": (int, 48),
        "stride_long": (int, 16),
        "patch_short": (int, 16),
        "stride_short": (int, 8),
    },
    "mamba": {
        "state_size": (int, 16),
        "expand": (int, 2),
        "conv_width": (int, 4),
        "depth": (int, 2),
    },
    "lwt": {
        "window": (int, 9),
        "heads": (int, 4),
        "lwt_layers": (int, 3),
    },
    "model": {
        "kind": (str, "sst"),              # sst | variant | dlinear
        "variant": (str, "mambaformer"),
        "embedding": (str, "pi"),
        "d_model": (int, 64),
        "depth": (int, 2),
        "use_long": (_bool, True),
        "use_short": (_bool, True),
        "use_router": (_bool, True),
        "multi_scale": (_bool, True),
        "use_patcher": (_bool, True),
        "decomp_window": (int, 25),
    },
    "train": {
        "lr": (float, 1e-4),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "eps": (float, 1e-8),
        "batch_size": (int, 32),
        "max_epochs": (int, 100),
        "patience": (int, 5),
        "seed": (int, 0),
        "loss": (str, "mse"),
    },
    "eval": {
        "checkpoint": (str, ""),
        "batch_size": (int, 64),
    },
    "bench": {
        "models": (_str_list, ("full_attention_transformer",
                               "patched_transformer", "sst")),
        "lengths": (_int_list, (256, 512, 1024, 2048, 4096, 8192)),
        "trials": (int, 5),
        "dtype": (str, "float32"),
        "memory_cap_mb": (float, 0.0),     # 0 disables the cap
        "d_model": (int, 16),
        "heads": (int, 2),
        "window": (int, 9),
        "state_size": (int, 8),
    },
}


class RunConfig:
    """Fully resolved configuration: every schema key has a typed value."""

    def __init__(self, values: dict):
        self.values = values

    def get(self, section: str, key: str):
        try:
            return self.values[section][key]
        except KeyError:
            raise ConfigError(f"no such config key [{section}] {key}") from None

    def section(self, name: str) -> dict:
        if name not in self.values:
            raise ConfigError(f"no such config section [{name}]")
        return dict(self.values[name])

    def override(self, assignment: str) -> None:
        """Apply one key=value; 'section.key' or a bare unique key."""
        if "=" not in assignment:
            raise ConfigError(f"override {assignment!r} is not key=value")
        target, raw = assignment.split("=", 1)
        target = target.strip()
        if "." in target:
            section, key = target.split(".", 1)
        else:
            homes = [s for s, keys in SCHEMA.items() if target in keys]
            if not homes:
                raise ConfigError(f"unknown config key {target!r}")
            if len(homes) > 1:
                raise ConfigError(
                    f"key {target!r} is ambiguous across sections "
                    f"{sorted(homes)}; qualify it as section.{target}")
            section, key = homes[0], target
        self._assign(section, key, raw)

    def _assign(self, section: str, key: str, raw: str) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        parse, _ = SCHEMA[section][key]
        try:
            self.values[section][key] = parse(raw.strip())
        except (ValueError, TypeError):
            raise ConfigError(
                f"bad value {raw.strip()!r} for [{section}] {key}") from None


def default_config() -> RunConfig:
    return RunConfig({s: {k: copy.deepcopy(d) for k, (_, d) in keys.items()}
                      for s, keys in SCHEMA.items()})


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the file, then --set overrides; last assignment wins."""
    cfg = default_config()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                cfg._assign(section, key, raw)
    for assignment in overrides:
        cfg.override(assignment)
    return cfg

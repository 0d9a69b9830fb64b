"""Run configuration: a line-oriented `key = value` format with [section]
headers. Unknown sections or keys are hard errors, since a silently ignored
hyperparameter typo is the most expensive failure mode an experiment config
can have.
"""

import configparser
import io
import os
from dataclasses import dataclass, fields

from .errors import ConfigError
from .losses import HyperParams


@dataclass
class RunConfig:
    # [model]
    family: str = "micronet"
    blocks_removed: int = 1
    # [data]
    data_kind: str = "synthetic"
    data_path: str = ""
    n_per_class: int = 40
    test_n_per_class: int = 20
    data_seed: int = 1234
    # [hyper]
    alpha: float = 0.01
    temperature: float = 2.5
    gamma: float = 0.8
    overlay_p: float = 0.1
    attention_power: int = 2
    lr: float = 0.001
    epochs: int = 100
    batch_size: int = 64
    # [run]
    seed: int = 0
    runs: int = 1
    fraction: float = 1.0
    use_kd: bool = False
    use_at: bool = False
    use_ig: bool = False
    # [paths]
    teacher: str = ""
    logits: str = ""
    attention: str = ""
    ig_maps: str = ""
    out_dir: str = "out"

    def hyper(self):
        return HyperParams(alpha=self.alpha, temperature=self.temperature,
                           gamma=self.gamma, overlay_p=self.overlay_p,
                           attention_power=self.attention_power, lr=self.lr,
                           epochs=self.epochs, batch_size=self.batch_size)

    def method_name(self):
        parts = [p for p, on in (("kd", self.use_kd), ("ig", self.use_ig),
                                 ("at", self.use_at)) if on]
        return "_".join(parts) if parts else "student"

    def validate_paths(self):
        named = [("teacher", self.teacher), ("logits", self.logits),
                 ("attention", self.attention), ("ig_maps", self.ig_maps)]
        if self.data_kind == "cifar10":
            named.append(("data.path", self.data_path))
        for name, path in named:
            if path and not os.path.exists(path):
                raise ConfigError(f"configured path for {name!r} does not "
                                  f"exist: {path}")


# (section, key) -> dataclass attribute
_LAYOUT = {
    "model": {"family": "family", "blocks_removed": "blocks_removed"},
    "data": {"kind": "data_kind", "path": "data_path",
             "n_per_class": "n_per_class",
             "test_n_per_class": "test_n_per_class", "seed": "data_seed"},
    "hyper": {"alpha": "alpha", "temperature": "temperature",
              "gamma": "gamma", "overlay_p": "overlay_p",
              "attention_power": "attention_power", "lr": "lr",
              "epochs": "epochs", "batch_size": "batch_size"},
    "run": {"seed": "seed", "runs": "runs", "fraction": "fraction",
            "use_kd": "use_kd", "use_at": "use_at", "use_ig": "use_ig"},
    "paths": {"teacher": "teacher", "logits": "logits",
              "attention": "attention", "ig_maps": "ig_maps",
              "out_dir": "out_dir"},
}

_TYPES = {f.name: (f.type if isinstance(f.type, str) else f.type.__name__)
          for f in fields(RunConfig)}


def _convert(attr, raw):
    kind = _TYPES[attr]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse {raw!r} as a boolean for {attr!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} as {kind} for "
                          f"{attr!r}") from exc
    return raw


def parse_config(text):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values = {}
    for section in cp.sections():
        if section not in _LAYOUT:
            raise ConfigError(f"unknown config section [{section}]; known "
                              f"sections: {sorted(_LAYOUT)}")
        for key, raw in cp.items(section):
            if key not in _LAYOUT[section]:
                raise ConfigError(
                    f"unknown key {key!r} in section [{section}]; known "
                    f"keys: {sorted(_LAYOUT[section])}")
            values[_LAYOUT[section][key]] = _convert(_LAYOUT[section][key],
                                                     raw)
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def serialize_config(config):
    out = io.StringIO()
    for section, keys in _LAYOUT.items():
        out.write(f"[{section}]\n")
        for key, attr in keys.items():
            value = getattr(config, attr)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            out.write(f"{key} = {value}\n")
        out.write("\n")
    return out.getvalue()


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

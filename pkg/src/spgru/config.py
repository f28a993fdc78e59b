"""Run configuration: INI-style sections of typed key = value lines.

Grammar: `[section]` headers; one `key = value` per line; `#` or `;`
comments.  Strings must be double-quoted, booleans are `true`/`false`,
numbers are plain int/float literals.  Unknown sections or keys are
rejected by name before any work starts.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .cell import NetworkConfig
from .data import TrajectoryConfig
from .errors import ConfigError
from .training import TrainConfig

# (type, default); type is one of int, float, bool, str
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "data": {
        "frame_size": (int, 32),
        "sprite_size": (int, 12),
        "seq_len": (int, 20),
        "angle": (float, 20.0),
        "speed": (float, 0.05),
        "noise_b": (float, 0.0),
        "n_digits": (int, 1),
        "bounce": (bool, True),
        "start_x": (float, 0.2),
        "start_y": (float, 0.35),
        "glyphs": (str, "0123456789"),
        "interp": (str, "bilinear"),
        "compose": (str, "max"),
        "seed": (int, 0),
    },
    "model": {
        "hidden": (int, 128),
        "mode": (str, "predictor"),
        "input_len": (int, 10),
        "output_len": (int, 10),
        "cell_variance_rule": (str, "corrected"),
        "gate_product_rule": (str, "full_independent"),
        "loss": (str, "bce_mean"),
        "sigmoid_omega": (str, "main"),
        "init_s": (float, 1e-3),
    },
    "train": {
        "steps": (int, 800),
        "batch_size": (int, 30),
        "seed": (int, 1),
        "lr": (float, 1e-3),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "eps": (float, 1e-8),
        "grad_clip": (float, 0.0),
        "log_every": (int, 10),
        "checkpoint_every": (int, 0),
    },
    "eval": {
        "n_sequences": (int, 100),
        "figures": (bool, True),
    },
}


@dataclass
class RunConfig:
    """Validated flat view of one config document."""

    values: dict[str, object]

    def __getitem__(self, dotted: str) -> object:
        return self.values[dotted]

    def trajectory_config(self) -> TrajectoryConfig:
        g = self.values
        glyphs = tuple(int(ch) for ch in str(g["data.glyphs"]))
        return TrajectoryConfig(
            angle=g["data.angle"],
            speed=g["data.speed"],
            noise_b=g["data.noise_b"],
            frame_size=g["data.frame_size"],
            seq_len=g["data.seq_len"],
            n_digits=g["data.n_digits"],
            bounce=g["data.bounce"],
            start=(g["data.start_x"], g["data.start_y"]),
            sprite_size=g["data.sprite_size"],
            glyphs=glyphs,
            interp=g["data.interp"],
            compose=g["data.compose"],
            seed=g["data.seed"],
        )

    def network_config(self) -> NetworkConfig:
        g = self.values
        cfg = NetworkConfig(
            mode=g["model.mode"],
            input_len=g["model.input_len"],
            output_len=g["model.output_len"],
            hidden=g["model.hidden"],
            cell_variance_rule=g["model.cell_variance_rule"],
            gate_product_rule=g["model.gate_product_rule"],
            loss=g["model.loss"],
            sigmoid_omega=g["model.sigmoid_omega"],
            init_s=g["model.init_s"],
        )
        cfg.validate()
        return cfg

    def train_config(self) -> TrainConfig:
        g = self.values
        cfg = TrainConfig(
            steps=g["train.steps"],
            batch_size=g["train.batch_size"],
            seed=g["train.seed"],
            lr=g["train.lr"],
            beta1=g["train.beta1"],
            beta2=g["train.beta2"],
            eps=g["train.eps"],
            grad_clip=g["train.grad_clip"],
            log_every=g["train.log_every"],
            checkpoint_every=g["train.checkpoint_every"],
        )
        cfg.validate()
        return cfg


def _convert(section: str, key: str, raw: str) -> object:
    typ, _ = SCHEMA[section][key]
    raw = raw.strip()
    where = f"[{section}] {key}"
    if typ is str:
        if len(raw) < 2 or raw[0] != '"' or raw[-1] != '"':
            raise ConfigError(f'{where}: string values must be double-quoted, got {raw}')
        return raw[1:-1]
    if typ is bool:
        if raw == "true":
            return True
        if raw == "false":
            return False
        raise ConfigError(f"{where}: expected true or false, got {raw}")
    try:
        if typ is int:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: expected {typ.__name__}, got {raw}") from None


def parse_config(text: str) -> RunConfig:
    """Validate a config document against the schema; unknown keys rejected."""
    cp = configparser.ConfigParser(interpolation=None,
                                   inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config syntax error: {e}") from None
    values: dict[str, object] = {
        f"{sec}.{key}": default
        for sec, keys in SCHEMA.items()
        for key, (_, default) in keys.items()
    }
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]")
        for key, raw in cp[sec].items():
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown config key {key!r} in section [{sec}]")
            values[f"{sec}.{key}"] = _convert(sec, key, raw)
    return RunConfig(values)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text)


def default_config_text() -> str:
    """A template document with every key at its default."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, (typ, default) in keys.items():
            if typ is str:
                rendered = f'"{default}"'
            elif typ is bool:
                rendered = "true" if default else "false"
            else:
                rendered = f"{default:g}" if typ is float else str(default)
            lines.append(f"{key} = {rendered}")
        lines.append("")
    return "\n".join(lines)

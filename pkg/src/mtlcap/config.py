"""Run configuration files: INI-style key/value sections.

Unknown sections or keys are rejected outright; every defaulted value is
echoed back into the run's output directory so a finished run documents the
exact configuration it used. Paths inside a config are resolved relative to
the config file's directory.
"""

import configparser
import os
from dataclasses import dataclass, field

from .errors import ConfigError, PhaseOrderViolation
from .training import TrainConfig

_SCHEMA = {
    "data": {
        "manifest": str,
        "cache_dir": str,
        "action_manifest": str,
        "object_manifest": str,
        "vocab": str,
        "vocab_min_count": int,
        "embeddings": str,
    },
    "model": {
        "backbone": str,
        "encoder_channels": int,
        "head_hidden": int,
        "lstm_hidden": int,
        "attention_dim": int,
        "embed_dim": int,
        "max_caption_len": int,
    },
    "train": {
        "phases": str,
        "learning_rate": float,
        "batch_size": int,
        "epochs": int,
        "epochs_action": int,
        "epochs_object": int,
        "epochs_caption": int,
        "seed": int,
        "grad_clip": float,
        "beam": int,
        "aux_val_fraction": float,
    },
}

_PATH_KEYS = {"manifest", "cache_dir", "action_manifest", "object_manifest", "vocab", "embeddings"}


@dataclass
class RunConfig:
    # data
    manifest: str = ""
    cache_dir: str = ""
    action_manifest: str = ""
    object_manifest: str = ""
    vocab: str = ""
    vocab_min_count: int = 1
    embeddings: str = ""
    # model
    backbone: str = "toy"
    encoder_channels: int = 64
    head_hidden: int = 64
    lstm_hidden: int = 512
    attention_dim: int = 256
    embed_dim: int = 300
    max_caption_len: int = 30
    # train
    phases: tuple = ("action", "object", "caption")
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 80
    epochs_by_phase: dict = field(default_factory=dict)
    seed: int = 0
    grad_clip: float = 5.0
    beam: int = 3
    aux_val_fraction: float = 0.2

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            phases=self.phases,
            epochs_by_phase=dict(self.epochs_by_phase),
            encoder_channels=self.encoder_channels,
            head_hidden=self.head_hidden,
            lstm_hidden=self.lstm_hidden,
            attention_dim=self.attention_dim,
            embed_dim=self.embed_dim,
            max_caption_len=self.max_caption_len,
            grad_clip=self.grad_clip,
            beam=self.beam,
        )


def load_run_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise ConfigError(f"config file not found: {path}")
    base = os.path.dirname(os.path.abspath(path))

    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            typ = _SCHEMA[section][key]
            try:
                value = typ(raw) if typ is not str else raw.strip()
            except ValueError:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from None
            if key in _PATH_KEYS and value:
                value = os.path.normpath(os.path.join(base, value))
            if key == "phases":
                cfg.phases = tuple(p.strip() for p in value.split(",") if p.strip())
            elif key.startswith("epochs_") and key != "epochs":
                cfg.epochs_by_phase[key[len("epochs_"):]] = value
            else:
                setattr(cfg, key, value)

    try:
        cfg.train_config()  # validate ranges / phase order now
    except (ValueError, PhaseOrderViolation) as e:
        raise ConfigError(str(e)) from None
    return cfg


def echo_config(cfg: RunConfig, path) -> None:
    """Write the fully-resolved configuration (defaults included)."""
    lines = ["[data]"]
    for key in _SCHEMA["data"]:
        if key == "vocab_min_count":
            lines.append(f"vocab_min_count = {cfg.vocab_min_count}")
        else:
            lines.append(f"{key} = {getattr(cfg, key)}")
    lines.append("")
    lines.append("[model]")
    for key in _SCHEMA["model"]:
        lines.append(f"{key} = {getattr(cfg, key)}")
    lines.append("")
    lines.append("[train]")
    lines.append(f"phases = {','.join(cfg.phases)}")
    lines.append(f"learning_rate = {cfg.learning_rate}")
    lines.append(f"batch_size = {cfg.batch_size}")
    lines.append(f"epochs = {cfg.epochs}")
    for phase, ep in sorted(cfg.epochs_by_phase.items()):
        lines.append(f"epochs_{phase} = {ep}")
    lines.append(f"seed = {cfg.seed}")
    lines.append(f"grad_clip = {cfg.grad_clip}")
    lines.append(f"beam = {cfg.beam}")
    lines.append(f"aux_val_fraction = {cfg.aux_val_fraction}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")

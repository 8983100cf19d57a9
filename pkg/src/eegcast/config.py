"""Flat ``key = value`` pipeline configuration with per-key provenance."""

from __future__ import annotations

from dataclasses import dataclass, field

from .net import ModelConfig
from .train import TrainRunConfig

DEFAULTS: dict[str, object] = {
    "seed": 0,
    # data
    "fs": 250.0,
    "segment_s": 30.0,
    "horizon_s": 30.0,
    "train_overlap": 0.5,
    "infer_overlap": 0.75,
    "threshold": 0.5,
    "welch_seg_s": 2.0,
    "welch_overlap": 0.5,
    # synthetic patient
    "synth.duration_s": 3600.0,
    "synth.channels": 8,
    "synth.n_seizures": 6,
    # tokenizer
    "tokenizer.k": 5.0,
    "tokenizer.levels": 512,
    # model
    "model.embed_dim": 128,
    "model.n_layers": 4,
    "model.n_heads": 4,
    "model.block_size": 512,
    "model.mlp_ratio": 4,
    "model.frame_len": 15,
    "model.dropout_pretrain": 0.1,
    "model.dropout_finetune": 0.2,
    # pretraining
    "pretrain.steps": 5000,
    "pretrain.batch_size": 16,
    "pretrain.grad_accum": 8,
    "pretrain.lr": 3e-4,
    "pretrain.lambda_mse": 0.1,
    "pretrain.weight_decay": 0.01,
    # fine-tuning
    "finetune.steps": 5000,
    "finetune.batch_size": 16,
    "finetune.grad_accum": 4,
    "finetune.lr": 3e-5,
    "finetune.weight_decay": 0.01,
    "finetune.backbone_frozen": False,
    "finetune.eval_every": 100,
    "finetune.val_frac": 0.2,
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, text: str):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))
    provenance: dict = field(default_factory=lambda: {k: "default" for k in DEFAULTS})

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key: str, value, source: str) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, value) if isinstance(value, str) else value
        self.provenance[key] = source

    def update_from_text(self, text: str, source: str = "file") -> None:
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            self.set(key, value, source)

    def to_text(self) -> str:
        lines = []
        for key in DEFAULTS:
            v = self.values[key]
            v = str(v).lower() if isinstance(v, bool) else repr(v)
            lines.append(f"{key} = {v}  # {self.provenance[key]}")
        return "\n".join(lines) + "\n"

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            vocab_size=self["tokenizer.levels"], embed_dim=self["model.embed_dim"],
            n_layers=self["model.n_layers"], n_heads=self["model.n_heads"],
            block_size=self["model.block_size"], mlp_ratio=self["model.mlp_ratio"],
            dropout_pretrain=self["model.dropout_pretrain"],
            dropout_finetune=self["model.dropout_finetune"], frame_len=self["model.frame_len"],
        )

    def pretrain_run(self) -> TrainRunConfig:
        return TrainRunConfig(
            steps=self["pretrain.steps"], batch_size=self["pretrain.batch_size"],
            grad_accum=self["pretrain.grad_accum"], lr=self["pretrain.lr"], seed=self["seed"],
            weight_decay=self["pretrain.weight_decay"], lam=self["pretrain.lambda_mse"],
        )

    def finetune_run(self) -> TrainRunConfig:
        return TrainRunConfig(
            steps=self["finetune.steps"], batch_size=self["finetune.batch_size"],
            grad_accum=self["finetune.grad_accum"], lr=self["finetune.lr"], seed=self["seed"],
            weight_decay=self["finetune.weight_decay"],
            backbone_frozen=self["finetune.backbone_frozen"],
            eval_every=self["finetune.eval_every"], val_frac=self["finetune.val_frac"],
        )


def load_config(path=None, overrides=(), seed=None) -> PipelineConfig:
    """defaults < file < flags."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        cfg.update_from_text(text, "file")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value, "flag")
    if seed is not None:
        cfg.set("seed", int(seed), "flag")
    return cfg

"""Flat key=value experiment configuration.

The on-disk format is one dotted key per line (`privacy.noise_multiplier
= 0.01`), full-line # comments, blank lines allowed. Unknown keys are
hard errors so typos cannot silently fall back to defaults. The resolved
echo written next to every run re-parses to an identical configuration,
which is what makes replay-from-echo byte-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "PRESETS",
    "parse_config_text",
    "parse_overrides",
    "render_config",
    "resolve_config",
]


class ConfigError(ValueError):
    """Invalid configuration; message names the offending key."""


@dataclass(frozen=True)
class ExperimentConfig:
    # data: empty path fields fall back to the bundled fixture files
    train_images: str = ""
    train_labels: str = ""
    heldout_images: str = ""
    heldout_labels: str = ""
    n_clients: int = 3000
    partition: str = "uniform_iid"
    skew_alpha: float = 0.3
    # privacy
    clip_norm: float = 0.01
    noise_multiplier: float = 0.01
    clients_per_round: int = 10
    delta: float = 1e-5
    # gan
    z_dim: int = 64
    conditional: bool = True
    num_classes: int = 10
    # federation
    rounds: int = 1000
    local_steps: int = -1  # -1: one epoch over the shard, capped at 4 batches
    client_batch: int = 8
    broadcast_fakes: int = 0  # 0: match client_batch
    gen_steps: int = 4
    gen_batch: int = 32
    # optimizer
    lr_disc: float = 2e-4
    lr_gen: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # denoise stage
    denoise_enabled: bool = False
    denoise_level: float = 0.2
    denoise_apply_to_broadcast: bool = True
    denoise_apply_to_eval: bool = True
    denoise_epochs: int = 10
    denoise_batch: int = 32
    denoise_lr: float = 2e-3
    denoise_model_path: str = ""
    # metrics
    metric_every: int = 10
    fid_real_samples: int = 1024
    fid_fake_samples: int = 1024
    acc_samples: int = 256
    extractor_epochs: int = 12
    extractor_batch: int = 32
    extractor_lr: float = 1e-3
    # run
    seed: int = 0
    outdir: str = ""
    workers: int = 1

    def validate(self) -> None:
        def bad(key, why):
            raise ConfigError(f"{key}: {why}")

        if self.n_clients < 1:
            bad("data.n_clients", "must be positive")
        if self.partition not in ("uniform_iid", "by_label_skew"):
            bad("data.partition", f"unknown scheme {self.partition!r}")
        if self.skew_alpha <= 0:
            bad("data.skew_alpha", "must be positive")
        if not self.clip_norm > 0:
            bad("privacy.clip_norm", "must be positive (inf disables clipping)")
        if self.noise_multiplier < 0:
            bad("privacy.noise_multiplier", "must be non-negative")
        if self.clients_per_round < 1:
            bad("privacy.clients_per_round", "must be positive")
        if self.clients_per_round > self.n_clients:
            bad("privacy.clients_per_round", f"exceeds data.n_clients={self.n_clients}")
        if not 0.0 < self.delta < 1.0:
            bad("privacy.delta", "must be in (0, 1)")
        if self.z_dim < 1:
            bad("gan.z_dim", "must be positive")
        if self.num_classes < 2:
            bad("gan.num_classes", "must be at least 2")
        if self.rounds < 0:
            bad("fed.rounds", "must be non-negative")
        if self.local_steps < -1:
            bad("fed.local_steps", "must be >= -1 (-1 means auto)")
        if self.client_batch < 1:
            bad("fed.client_batch", "must be positive")
        if self.broadcast_fakes < 0:
            bad("fed.broadcast_fakes", "must be non-negative (0 means client_batch)")
        if self.gen_steps < 0:
            bad("fed.gen_steps", "must be non-negative")
        if self.gen_batch < 1:
            bad("fed.gen_batch", "must be positive")
        for key, value in (
            ("opt.lr_disc", self.lr_disc),
            ("opt.lr_gen", self.lr_gen),
            ("denoise.lr", self.denoise_lr),
            ("metrics.extractor_lr", self.extractor_lr),
        ):
            if not value > 0 or math.isinf(value):
                bad(key, "must be a positive finite float")
        if not 0.0 <= self.denoise_level <= 1.0:
            bad("denoise.level", "must be in [0, 1]")
        if self.denoise_epochs < 0:
            bad("denoise.epochs", "must be non-negative")
        if self.denoise_batch < 1:
            bad("denoise.batch", "must be positive")
        if self.metric_every < 1:
            bad("metrics.every", "must be positive")
        if self.fid_real_samples < 2 or self.fid_fake_samples < 2:
            bad("metrics.fid_real_samples", "need at least 2 samples per side")
        if self.acc_samples < 0:
            bad("metrics.acc_samples", "must be non-negative")
        if self.extractor_epochs < 1:
            bad("metrics.extractor_epochs", "must be positive")
        if self.extractor_batch < 1:
            bad("metrics.extractor_batch", "must be positive")
        if self.seed < 0:
            bad("run.seed", "must be non-negative")
        if self.workers < 1:
            bad("run.workers", "must be positive")


_KEY_TO_FIELD = {
    "data.train_images": "train_images",
    "data.train_labels": "train_labels",
    "data.heldout_images": "heldout_images",
    "data.heldout_labels": "heldout_labels",
    "data.n_clients": "n_clients",
    "data.partition": "partition",
    "data.skew_alpha": "skew_alpha",
    "privacy.clip_norm": "clip_norm",
    "privacy.noise_multiplier": "noise_multiplier",
    "privacy.clients_per_round": "clients_per_round",
    "privacy.delta": "delta",
    "gan.z_dim": "z_dim",
    "gan.conditional": "conditional",
    "gan.num_classes": "num_classes",
    "fed.rounds": "rounds",
    "fed.local_steps": "local_steps",
    "fed.client_batch": "client_batch",
    "fed.broadcast_fakes": "broadcast_fakes",
    "fed.gen_steps": "gen_steps",
    "fed.gen_batch": "gen_batch",
    "opt.lr_disc": "lr_disc",
    "opt.lr_gen": "lr_gen",
    "opt.beta1": "beta1",
    "opt.beta2": "beta2",
    "opt.adam_eps": "adam_eps",
    "denoise.enabled": "denoise_enabled",
    "denoise.level": "denoise_level",
    "denoise.apply_to_broadcast": "denoise_apply_to_broadcast",
    "denoise.apply_to_eval": "denoise_apply_to_eval",
    "denoise.epochs": "denoise_epochs",
    "denoise.batch": "denoise_batch",
    "denoise.lr": "denoise_lr",
    "denoise.model_path": "denoise_model_path",
    "metrics.every": "metric_every",
    "metrics.fid_real_samples": "fid_real_samples",
    "metrics.fid_fake_samples": "fid_fake_samples",
    "metrics.acc_samples": "acc_samples",
    "metrics.extractor_epochs": "extractor_epochs",
    "metrics.extractor_batch": "extractor_batch",
    "metrics.extractor_lr": "extractor_lr",
    "run.seed": "seed",
    "run.outdir": "outdir",
    "run.workers": "workers",
}

_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}
_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    field = _KEY_TO_FIELD[key]
    kind = _FIELD_TYPES[field]
    raw = raw.strip()
    if kind == "int":
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected integer, got {raw!r}") from exc
    if kind == "float":
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected float, got {raw!r}") from exc
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected boolean, got {raw!r}")
    return raw


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _KEY_TO_FIELD:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        updates[_KEY_TO_FIELD[key]] = _parse_value(key, raw)
    return replace(cfg, **updates)


def parse_overrides(pairs, base: ExperimentConfig) -> ExperimentConfig:
    """Apply --set key=value overrides on top of a base configuration."""
    updates = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r}: expected key=value")
        key, _, raw = pair.partition("=")
        key = key.strip()
        if key not in _KEY_TO_FIELD:
            raise ConfigError(f"override: unknown config key {key!r}")
        updates[_KEY_TO_FIELD[key]] = _parse_value(key, raw)
    return replace(base, **updates)


def render_config(cfg: ExperimentConfig) -> str:
    """Canonical full echo: every key, sorted, one per line."""
    lines = [
        f"{key}={_format_value(getattr(cfg, field))}"
        for key, field in sorted(_KEY_TO_FIELD.items())
    ]
    return "\n".join(lines) + "\n"


# Desk-scale experiment presets over the bundled fixture. `nodp` is plain
# federated averaging, `dp` adds clipping plus noise, `dp_denoise` also
# pushes every generator output of a round through the denoiser. `paper`
# keeps the fixture-free 3000-user geometry and 1000 rounds; point the
# data.* keys at real EMNIST IDX files to use it.
_FIXTURE_BASE = dict(
    n_clients=64,
    clients_per_round=10,
    rounds=200,
    client_batch=8,
    fid_real_samples=256,
    fid_fake_samples=256,
    acc_samples=256,
)

PRESETS: dict[str, dict] = {
    "nodp": dict(
        _FIXTURE_BASE,
        noise_multiplier=0.0,
        clip_norm=math.inf,
        denoise_enabled=False,
    ),
    "dp": dict(
        _FIXTURE_BASE,
        noise_multiplier=0.01,
        denoise_enabled=False,
    ),
    "dp_denoise": dict(
        _FIXTURE_BASE,
        noise_multiplier=0.01,
        denoise_enabled=True,
        denoise_level=0.2,
    ),
    "paper": dict(
        n_clients=3000,
        clients_per_round=10,
        rounds=1000,
        noise_multiplier=0.01,
        denoise_enabled=True,
        denoise_level=0.2,
    ),
}


def resolve_config(
    config_path: str | None = None,
    preset: str | None = None,
    overrides=(),
) -> ExperimentConfig:
    """defaults -> preset -> config file -> --set overrides, then validate."""
    cfg = ExperimentConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; available: {', '.join(sorted(PRESETS))}"
            )
        cfg = replace(cfg, **PRESETS[preset])
    if config_path is not None:
        try:
            with open(config_path) as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        cfg = parse_config_text(text, base=cfg)
    cfg = parse_overrides(overrides, cfg)
    cfg.validate()
    return cfg

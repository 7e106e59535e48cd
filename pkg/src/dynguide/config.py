"""Experiment configuration: schema, validation, canonical text, hashing.

A config is a two-level key/value structure (sections of scalars and flat
lists). Files are TOML; the canonical form used for hashing is the sorted
dotted-key rendering, which is itself valid TOML.
"""

from __future__ import annotations

import hashlib
try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

DATASET_KINDS = ("gmm", "single", "mixed")
ARCH_BY_KIND = {"gmm": "gmm_mlp", "single": "shapes_unet", "mixed": "shapes_unet"}
CLASSIFIER_ARCH_BY_KIND = {
    "gmm": "gmm_mlp_classifier",
    "single": "shapes_conv_classifier",
    "mixed": "shapes_conv_classifier",
}


class ConfigError(ValueError):
    """Invalid or missing config field; `field` names the dotted key."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class DatasetCfg:
    kind: str = "gmm"
    train_size: int = 100_000
    image_size: int = 32
    path: Optional[str] = None  # shapes dataset file; generated there if absent


@dataclass
class ScheduleCfg:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass
class ModelCfg:
    arch: str = ""  # defaulted from dataset.kind when empty
    classifier_arch: str = ""
    precision: str = "float64"  # float32 halves UNet step time
    denoiser_steps: int = 20_000
    snapshots: list[int] = field(default_factory=list)  # defaults to [denoiser_steps]
    batch_size: int = 512
    lr: float = 1e-3
    classifier_steps: int = 20_000
    classifier_batch: int = 256
    classifier_lr: float = 1e-3


@dataclass
class SamplerCfg:
    kind: str = "ddpm"
    ddim_steps: int = 50


@dataclass
class GuidanceCfg:
    scales: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0, 5.0, 10.0])
    interval: list[int] = field(default_factory=list)  # [T1, T2]; empty = full range
    use_raw_prob_grad: bool = False


@dataclass
class EvalCfg:
    samples: int = 100_000
    sweep_samples: int = 10_000
    vf_q: list[float] = field(default_factory=lambda: [0.025, 0.05])
    discard_q: float = 0.05
    discard_seeds: int = 20


@dataclass
class RunCfg:
    seed: int = 11
    out_dir: str = "runs/run"


_SECTIONS = {
    "dataset": DatasetCfg,
    "schedule": ScheduleCfg,
    "model": ModelCfg,
    "sampler": SamplerCfg,
    "guidance": GuidanceCfg,
    "eval": EvalCfg,
    "run": RunCfg,
}


@dataclass
class ExperimentConfig:
    dataset: DatasetCfg = field(default_factory=DatasetCfg)
    schedule: ScheduleCfg = field(default_factory=ScheduleCfg)
    model: ModelCfg = field(default_factory=ModelCfg)
    sampler: SamplerCfg = field(default_factory=SamplerCfg)
    guidance: GuidanceCfg = field(default_factory=GuidanceCfg)
    eval: EvalCfg = field(default_factory=EvalCfg)
    run: RunCfg = field(default_factory=RunCfg)

    def validate(self) -> "ExperimentConfig":
        d = self.dataset
        if d.kind not in DATASET_KINDS:
            raise ConfigError("dataset.kind", f"must be one of {DATASET_KINDS}, got {d.kind!r}")
        if d.train_size < 1:
            raise ConfigError("dataset.train_size", "must be >= 1")
        if d.kind != "gmm" and not d.path:
            raise ConfigError("dataset.path", "required for shapes datasets")
        if self.schedule.T < 1:
            raise ConfigError("schedule.T", "must be >= 1")
        if not (0 < self.schedule.beta_start <= self.schedule.beta_end < 1):
            raise ConfigError("schedule.beta_start", "need 0 < beta_start <= beta_end < 1")
        m = self.model
        if not m.arch:
            m.arch = ARCH_BY_KIND[d.kind]
        if not m.classifier_arch:
            m.classifier_arch = CLASSIFIER_ARCH_BY_KIND[d.kind]
        if m.arch != ARCH_BY_KIND[d.kind]:
            raise ConfigError("model.arch", f"{m.arch!r} does not fit dataset kind {d.kind!r}")
        if m.classifier_arch != CLASSIFIER_ARCH_BY_KIND[d.kind]:
            raise ConfigError("model.classifier_arch",
                              f"{m.classifier_arch!r} does not fit dataset kind {d.kind!r}")
        if m.precision not in ("float64", "float32"):
            raise ConfigError("model.precision", "must be float64 or float32")
        if not m.snapshots:
            m.snapshots = [m.denoiser_steps]
        if sorted(m.snapshots) != m.snapshots or m.snapshots[-1] != m.denoiser_steps:
            raise ConfigError("model.snapshots",
                              "must be ascending and end at model.denoiser_steps")
        if min(m.snapshots) < 1:
            raise ConfigError("model.snapshots", "steps must be >= 1")
        if self.sampler.kind not in ("ddpm", "ddim"):
            raise ConfigError("sampler.kind", "must be ddpm or ddim")
        if self.sampler.ddim_steps < 1:
            raise ConfigError("sampler.ddim_steps", "must be >= 1")
        g = self.guidance
        if not g.scales or any(s < 0 for s in g.scales):
            raise ConfigError("guidance.scales", "need at least one scale >= 0")
        if g.interval:
            if len(g.interval) != 2:
                raise ConfigError("guidance.interval", "expected [T1, T2]")
            t1, t2 = g.interval
            if not (1 <= t2 and t1 <= self.schedule.T and t1 >= t2 - 1):
                raise ConfigError("guidance.interval", f"need T >= T1 >= T2 >= 1, got {g.interval}")
        e = self.eval
        if e.samples < 1 or e.sweep_samples < 1:
            raise ConfigError("eval.samples", "sample counts must be >= 1")
        if e.sweep_samples > e.samples:
            raise ConfigError("eval.sweep_samples",
                              "sweep shares the baseline noise stream, so it "
                              "cannot exceed eval.samples")
        if any(not 0 < q < 1 for q in e.vf_q):
            raise ConfigError("eval.vf_q", "each q must be in (0, 1)")
        if not 0 < e.discard_q < 1:
            raise ConfigError("eval.discard_q", "must be in (0, 1)")
        if e.discard_seeds < 1:
            raise ConfigError("eval.discard_seeds", "must be >= 1")
        if not self.run.out_dir:
            raise ConfigError("run.out_dir", "must be set")
        return self


def _coerce(section: str, name: str, default, value):
    """Type-check one field against its dataclass default's type."""
    key = f"{section}.{name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected bool, got {type(value).__name__}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected int, got {type(value).__name__}")
        if isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(key, f"expected int, got {value}")
            value = int(value)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected number, got {type(value).__name__}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(key, f"expected list, got {type(value).__name__}")
        return list(value)
    if default is None or isinstance(default, str):
        if value is not None and not isinstance(value, str):
            raise ConfigError(key, f"expected string, got {type(value).__name__}")
        return value
    raise ConfigError(key, "unsupported field type")  # pragma: no cover


def from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate a config; unknown sections/keys are hard errors."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a table of sections")
    cfg = ExperimentConfig()
    for section, body in raw.items():
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ConfigError(section, "unknown section")
        if not isinstance(body, dict):
            raise ConfigError(section, "section must be a table")
        target = getattr(cfg, section)
        known = {f.name for f in fields(cls)}
        for name, value in body.items():
            if name not in known:
                raise ConfigError(f"{section}.{name}", "unknown key")
            setattr(target, name, _coerce(section, name, getattr(cls(), name), value))
    return cfg.validate()


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, list):
        return "[" + ", ".join(_render(v) for v in value) + "]"
    raise TypeError(f"cannot render {type(value)}")  # pragma: no cover


def canonical_text(cfg: ExperimentConfig) -> str:
    """Sorted dotted-key rendering; also valid TOML. None fields are omitted.

    run.out_dir is omitted too: the hash identifies the experiment, not the
    directory it happens to land in, so relocated reruns stay byte-identical.
    """
    lines = []
    for section in sorted(_SECTIONS):
        body = getattr(cfg, section)
        for f in sorted(fields(body), key=lambda f: f.name):
            value = getattr(body, f.name)
            if value is None or (section, f.name) == ("run", "out_dir"):
                continue
            lines.append(f"{section}.{f.name} = {_render(value)}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()


def load_config(path) -> ExperimentConfig:
    try:
        raw = tomllib.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("<config>", f"file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<config>", f"invalid TOML: {exc}")
    return from_dict(raw)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(canonical_text(cfg))


def apply_overrides(cfg: ExperimentConfig, pairs: list[str]) -> ExperimentConfig:
    """Apply `section.key=value` strings (values parsed as TOML) and revalidate."""
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError("<override>", f"expected key=value, got {pair!r}")
        key, text = pair.split("=", 1)
        key = key.strip()
        if key.count(".") != 1:
            raise ConfigError(key, "override keys look like section.key")
        section, name = key.split(".")
        cls = _SECTIONS.get(section)
        if cls is None or name not in {f.name for f in fields(cls)}:
            raise ConfigError(key, "unknown key")
        try:
            value = tomllib.loads(f"v = {text.strip()}")["v"]
        except tomllib.TOMLDecodeError:
            value = text.strip()  # bare string
        setattr(getattr(cfg, section), name, _coerce(section, name, getattr(cls(), name), value))
    return cfg.validate()


__all__ = [
    "ExperimentConfig",
    "DatasetCfg",
    "ScheduleCfg",
    "ModelCfg",
    "SamplerCfg",
    "GuidanceCfg",
    "EvalCfg",
    "RunCfg",
    "ConfigError",
    "from_dict",
    "canonical_text",
    "config_hash",
    "load_config",
    "save_config",
    "apply_overrides",
]

"""Pipeline configuration: one JSON document with six sections.

Unknown keys and wrongly typed values are rejected with ConfigError.  The
canonical hash of the effective configuration (after command-line
overrides) is stamped on every artifact.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from painprof.dataset.model import MODALITIES
from painprof.dataset.synth import CohortSpec
from painprof.dataset.windows import WindowConfig
from painprof.errors import ConfigError
from painprof.mtnn import MtnnConfig
from painprof.signalcore.eda import DeconvConfig

# fields that may be null
_NULLABLE = {"manifest", "baseline_run"}


@dataclass(frozen=True)
class SynthSection:
    n_subjects: int = 30
    n_profiles: int = 3
    noise: float = 1.0
    fs: float = 128.0
    fps: float = 10.0
    stimuli_per_level: int = 20


@dataclass(frozen=True)
class DataSection:
    manifest: str | None = None  # None: use the cohort written by `synth`
    compress: bool = False
    workers: int = 1
    synth: SynthSection = field(default_factory=SynthSection)


@dataclass(frozen=True)
class DeconvSection:
    target_fs: float = 32.0
    scr_threshold: float = 0.01
    tonic_knot_s: float = 10.0
    l1_weight: float = 1e-4
    driver_floor: float = 1e-3


@dataclass(frozen=True)
class WindowsSection:
    duration_s: float = 6.0
    step_s: float = 0.5
    profile_duration_s: float = 8.0
    profile_stimuli: int = 48
    ecg_refractory_s: float = 0.25
    register_expressiveness: bool = True
    deconv: DeconvSection = field(default_factory=DeconvSection)


@dataclass(frozen=True)
class ProfilingSection:
    gamma: float = 0.18
    c: int = 3
    n_init: int = 10
    eigen_tol: float = 1e-10
    max_sweeps: int = 100


@dataclass(frozen=True)
class ModelSection:
    h1: int = 64
    h2: int = 32
    dropout: float = 0.2
    modality: str = "multimodal"


@dataclass(frozen=True)
class TrainingSection:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 10
    balance: bool = True


@dataclass(frozen=True)
class EvalSection:
    nc_modalities: tuple = MODALITIES
    alpha: float = 0.05
    baseline_run: str | None = None


@dataclass(frozen=True)
class Config:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    windows: WindowsSection = field(default_factory=WindowsSection)
    profiling: ProfilingSection = field(default_factory=ProfilingSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    eval: EvalSection = field(default_factory=EvalSection)
    base_dir: str = field(default=".", compare=False)  # where relative paths resolve; not hashed

    # -- derived component configs ------------------------------------------

    def cohort_spec(self) -> CohortSpec:
        s = self.data.synth
        return CohortSpec(n_subjects=s.n_subjects, n_profiles=s.n_profiles, noise=s.noise,
                          seed=self.seed, fs=s.fs, fps=s.fps, stimuli_per_level=s.stimuli_per_level)

    def window_config(self) -> WindowConfig:
        w = self.windows
        d = w.deconv
        return WindowConfig(
            duration_s=w.duration_s, step_s=w.step_s, profile_duration_s=w.profile_duration_s,
            profile_stimuli=w.profile_stimuli, ecg_refractory_s=w.ecg_refractory_s,
            register_expressiveness=w.register_expressiveness,
            deconv=DeconvConfig(target_fs=d.target_fs, scr_threshold=d.scr_threshold,
                                tonic_knot_s=d.tonic_knot_s, l1_weight=d.l1_weight,
                                driver_floor=d.driver_floor),
        )

    def mtnn_config(self) -> MtnnConfig:
        m, t = self.model, self.training
        return MtnnConfig(h1=m.h1, h2=m.h2, dropout=m.dropout, lr=t.lr, beta1=t.beta1, beta2=t.beta2,
                          eps=t.eps, batch_size=t.batch_size, max_epochs=t.max_epochs,
                          patience=t.patience, seed=self.seed, balance=t.balance)

    def manifest_path(self, out_dir):
        if self.data.manifest is None:
            return Path(out_dir) / "cohort" / "manifest.json"
        p = Path(self.data.manifest)
        return p if p.is_absolute() else Path(self.base_dir) / p

    # -- serialisation -------------------------------------------------------

    def to_dict(self):
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        d["eval"]["nc_modalities"] = list(d["eval"]["nc_modalities"])
        return d

    def sha256(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def provenance(self):
        return {"config_sha256": self.sha256(), "seed": self.seed}


def _check_value(path, default, value):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, str) for v in value)
        value = tuple(value) if ok else value
    elif default is None:
        ok = value is None or isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {json.dumps(value)}")
    return value


def _build(cls, doc, prefix=""):
    if not isinstance(doc, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name != "base_dir"}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"{prefix or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        f = fields[name]
        path = f"{prefix}.{name}" if prefix else name
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, path)
        elif name in _NULLABLE and value is None:
            kwargs[name] = None
        else:
            kwargs[name] = _check_value(path, default, value)
    return cls(**kwargs)


def validate(cfg: Config):
    if cfg.model.modality not in MODALITIES:
        raise ConfigError(f"model.modality must be one of {', '.join(MODALITIES)}")
    bad = [m for m in cfg.eval.nc_modalities if m not in MODALITIES]
    if bad:
        raise ConfigError(f"eval.nc_modalities: unknown modality {bad[0]!r}")
    if cfg.profiling.c < 1:
        raise ConfigError("profiling.c must be >= 1")
    if cfg.profiling.gamma <= 0:
        raise ConfigError("profiling.gamma must be > 0")
    if not 0 <= cfg.model.dropout < 1:
        raise ConfigError("model.dropout must lie in [0, 1)")
    if cfg.data.workers < 1:
        raise ConfigError("data.workers must be >= 1")
    for name in ("h1", "h2"):
        if getattr(cfg.model, name) < 1:
            raise ConfigError(f"model.{name} must be >= 1")
    if cfg.training.batch_size < 1 or cfg.training.max_epochs < 1 or cfg.training.patience < 1:
        raise ConfigError("training.batch_size, max_epochs and patience must be >= 1")
    if cfg.windows.step_s <= 0 or cfg.windows.duration_s <= 0:
        raise ConfigError("windows.duration_s and step_s must be > 0")
    return cfg


def config_from_dict(doc, base_dir="."):
    cfg = _build(Config, doc)
    return validate(dataclasses.replace(cfg, base_dir=str(base_dir)))


def load_config(path=None) -> Config:
    """Read a config file; ``None`` gives the bundled defaults."""
    if path is None:
        text = resources.files("painprof").joinpath("default_config.json").read_text()
        return config_from_dict(json.loads(text))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    return config_from_dict(doc, path.parent)


def apply_overrides(cfg: Config, seed=None, c=None, gamma=None, modality=None, baseline_run=None):
    rep = dataclasses.replace
    if seed is not None:
        cfg = rep(cfg, seed=seed)
    if c is not None:
        cfg = rep(cfg, profiling=rep(cfg.profiling, c=c))
    if gamma is not None:
        cfg = rep(cfg, profiling=rep(cfg.profiling, gamma=gamma))
    if modality is not None:
        cfg = rep(cfg, model=rep(cfg.model, modality=modality))
    if baseline_run is not None:
        cfg = rep(cfg, eval=rep(cfg.eval, baseline_run=baseline_run))
    return validate(cfg)

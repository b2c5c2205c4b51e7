"""
Configuration Management

Two layers:

- `Settings` (pydantic-settings): process-wide knobs from `SVDA_*`
  environment variables or a .env file: logging, output root, threads.
- `RunConfig` (pydantic): one experiment, read from a flat `key = value`
  file with `#` comments. Unknown keys are rejected. CLI flags override
  file values, which override the defaults below.
"""

from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import psutil
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .attacks.presets import preset
from .core.exceptions import ConfigError
from .core.models import (
    AttackConfig,
    AttackMethod,
    DITransform,
    GradMode,
    SITransform,
    SvdHook,
    TITransform,
    VTTransform,
)


def _default_threads() -> int:
    return max(1, psutil.cpu_count(logical=False) or 1)


class Settings(BaseSettings):
    """Application settings with environment variable support"""

    model_config = SettingsConfigDict(
        env_prefix="SVDA_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    # =========================================================================
    # Logging
    # =========================================================================
    log_level: str = Field(default="INFO", description="Logging level")
    log_file: str = Field(default="", description="Log file path, empty for stdout only")
    log_json: bool = Field(default=False, description="Emit JSON log records")

    # =========================================================================
    # Execution
    # =========================================================================
    output_dir: str = Field(default="runs", description="Root directory for run artifacts")
    threads: int = Field(default_factory=_default_threads, ge=1, description="Worker threads for fan-out")
    dtype: str = Field(default="float32", description="Model parameter precision")

    # =========================================================================
    # Computed Properties
    # =========================================================================
    @property
    def log_full_path(self) -> Optional[Path]:
        return Path(self.log_file).resolve() if self.log_file else None

    def ensure_directories(self, output_dir: Optional[str] = None):
        """Create the run output directory (ours unless given) and the log directory"""
        Path(output_dir or self.output_dir).mkdir(parents=True, exist_ok=True)
        if self.log_full_path:
            self.log_full_path.parent.mkdir(parents=True, exist_ok=True)


# Global settings instance
settings = Settings()


# =============================================================================
# Run configuration
# =============================================================================

TRANSFORM_KINDS = ("di", "ti", "si", "vt")

_LIST_FIELDS = (
    "models", "sources", "targets", "transforms", "attacks",
    "beta_grid", "topk_grid", "layer_grid", "cka_layers",
)


class RunConfig(BaseModel):
    """Everything one `train`/`attack`/`eval`/`sweep`/`cka`/`cam` run needs"""
    model_config = ConfigDict(extra="forbid")

    # Data
    data_dir: str = Field(default="data", description="Directory holding {split}_images.bin / {split}_labels.bin")
    train_images: Optional[str] = Field(default=None, description="Train images file, defaults into data_dir")
    test_images: Optional[str] = Field(default=None, description="Test images file, defaults into data_dir")
    n_train: int = Field(default=2000, ge=1, description="gen-data train split size")
    n_test: int = Field(default=600, ge=1, description="gen-data test split size")
    n_images: int = Field(default=500, ge=1, description="Test images attacked per source model")

    # Models
    models: List[str] = Field(default=["convnet_a", "convnet_b", "convnet_c"], description="Architectures to train")
    sources: List[str] = Field(default_factory=list, description="Source models, empty means all models")
    targets: List[str] = Field(default_factory=list, description="Target models, empty means all models")
    epochs: int = Field(default=15, ge=1, description="Training epochs")
    lr: float = Field(default=0.01, gt=0.0, description="SGD learning rate")
    batch_size: int = Field(default=32, ge=1, description="Training mini-batch size")

    # Attack
    method: AttackMethod = Field(default=AttackMethod.MIFGSM, description="ifgsm, mifgsm or nifgsm")
    epsilon: float = Field(default=16.0, gt=0.0, le=255.0, description="L-inf budget in pixel units")
    steps: int = Field(default=10, ge=1, description="Attack iterations")
    alpha: Optional[float] = Field(default=None, gt=0.0, description="Step size, defaults to epsilon/steps")
    momentum: float = Field(default=1.0, ge=0.0, description="Momentum decay mu")
    transforms: List[str] = Field(default_factory=list, description="Subset of di, ti, si, vt")
    di_prob: float = Field(default=0.5, ge=0.0, le=1.0, description="DI transformation probability")
    di_min_scale: float = Field(default=0.9, gt=0.0, le=1.0, description="DI smallest resize factor")
    ti_kernel: int = Field(default=7, ge=1, description="TI Gaussian kernel length (odd)")
    si_copies: int = Field(default=5, ge=1, description="SI scale copies")
    vt_beta: float = Field(default=1.5, ge=0.0, description="VT neighbourhood radius in epsilons")
    vt_samples: int = Field(default=20, ge=1, description="VT sampled neighbours")
    attack_batch_size: int = Field(default=100, ge=1, description="Images per attack batch")

    # SVD hook
    svd: bool = Field(default=True, description="Enable the SVD logit-fusion hook for `attack`")
    svd_layer: str = Field(default="block3", description="Layer whose feature is decomposed")
    svd_k: int = Field(default=1, ge=1, description="Top-k singular components")
    svd_beta: float = Field(default=0.5, ge=0.0, le=1.0, description="Fusion weight of the original logits")
    svd_grad_mode: GradMode = Field(default=GradMode.FULL, description="full or detached")
    svd_gap_eps: float = Field(default=1e-6, gt=0.0, description="Inverse spectral gap clamp")

    # Evaluation and sweeps
    attacks: List[str] = Field(default=["mi-fgsm"], description="Presets crafted by `eval`, each w/ and w/o SVD")
    beta_grid: List[float] = Field(default=[0.0, 0.25, 0.5, 0.75, 1.0], description="Sweep values for beta")
    topk_grid: List[int] = Field(default=[1, 2, 3, 5, 8, 16, 64], description="Sweep values for k")
    layer_grid: List[str] = Field(default=["block1", "block2", "block3", "block4"], description="Sweep layers")

    # Analysis
    cka_layers: List[str] = Field(
        default=["block1", "block2", "block3", "block4", "pool", "fc"],
        description="Layers for the layerwise CKA report",
    )
    cka_center: bool = Field(default=False, description="Centre activations before CKA")
    cam_layer: str = Field(default="block4", description="Layer projected by Eigen-CAM")
    cam_images: int = Field(default=4, ge=1, description="Images rendered by `cam`")

    # Execution
    seed: int = Field(default=0, ge=0, description="Global seed")
    output_dir: str = Field(default_factory=lambda: settings.output_dir, description="Run output directory")
    threads: int = Field(default_factory=lambda: settings.threads, ge=1, description="Worker threads")

    @field_validator(*_LIST_FIELDS, mode="before")
    @classmethod
    def split_lists(cls, v):
        if isinstance(v, str):
            return [item.strip() for item in v.split(",") if item.strip()]
        return v

    @field_validator("alpha", "train_images", "test_images", mode="before")
    @classmethod
    def empty_is_none(cls, v):
        return None if v == "" else v

    @field_validator("transforms")
    @classmethod
    def validate_transforms(cls, v: List[str]) -> List[str]:
        unknown = [t for t in v if t not in TRANSFORM_KINDS]
        if unknown:
            raise ValueError(f"unknown transform '{unknown[0]}', expected one of {', '.join(TRANSFORM_KINDS)}")
        return v

    @field_validator("ti_kernel")
    @classmethod
    def validate_odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("TI kernel length must be odd")
        return v

    # -------------------------------------------------------------------------
    # Derived paths
    # -------------------------------------------------------------------------
    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    @property
    def checkpoint_dir(self) -> Path:
        return self.output_path / "checkpoints"

    def checkpoint_path(self, model_id: str) -> Path:
        return self.checkpoint_dir / f"{model_id}.ckpt"

    def images_path(self, split: str) -> Path:
        explicit = {"train": self.train_images, "test": self.test_images}.get(split)
        return Path(explicit) if explicit else Path(self.data_dir) / f"{split}_images.bin"

    @property
    def source_models(self) -> List[str]:
        return self.sources or self.models

    @property
    def target_models(self) -> List[str]:
        return self.targets or self.models

    # -------------------------------------------------------------------------
    # Attack recipes
    # -------------------------------------------------------------------------
    def svd_hook(self, **overrides) -> SvdHook:
        fields = dict(
            layer_name=self.svd_layer,
            k=self.svd_k,
            beta_fusion=self.svd_beta,
            grad_mode=self.svd_grad_mode,
            gap_eps=self.svd_gap_eps,
        )
        fields.update(overrides)
        return SvdHook(**fields)

    def transform(self, kind: str):
        if kind == "di":
            return DITransform(p=self.di_prob, min_scale=self.di_min_scale)
        if kind == "ti":
            return TITransform(kernel_len=self.ti_kernel)
        if kind == "si":
            return SITransform(m=self.si_copies)
        if kind == "vt":
            return VTTransform(beta=self.vt_beta, n=self.vt_samples)
        raise ConfigError(f"unknown transform '{kind}'")

    def _budget(self) -> dict:
        return dict(epsilon=self.epsilon, steps=self.steps, alpha=self.alpha,
                    momentum_mu=self.momentum, seed=self.seed)

    def attack_config(self, svd: Optional[bool] = None, name: str = "custom") -> AttackConfig:
        """Recipe described by the flat attack keys"""
        use_svd = self.svd if svd is None else svd
        return AttackConfig(
            name=name,
            method=self.method,
            transforms=[self.transform(kind) for kind in self.transforms],
            svd_hook=self.svd_hook() if use_svd else None,
            **self._budget(),
        )

    def preset_config(self, preset_name: str, svd: bool, **hook_overrides) -> AttackConfig:
        """Named preset with this run's budget and transform parameters"""
        base = preset(preset_name)
        return preset(
            preset_name,
            svd_hook=self.svd_hook(**hook_overrides) if svd else None,
            transforms=[self.transform(t.kind) for t in base.transforms],
            **self._budget(),
        )


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        key = ".".join(str(p) for p in err["loc"]) or "config"
        parts.append(f"{key}: {err['msg']}")
    return "; ".join(parts)


def load_run_config(path: Optional[Union[str, Path]] = None,
                    overrides: Optional[Mapping[str, object]] = None) -> RunConfig:
    """Defaults < file at `path` < `overrides`"""
    values: Dict[str, object] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parsed = dotenv_values(path)
        bare = [key for key, value in parsed.items() if value is None]
        if bare:
            raise ConfigError(f"{path}: key '{bare[0]}' has no value")
        values.update(parsed)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**values)
    except ValidationError as exc:
        raise ConfigError(f"invalid run config: {_format_errors(exc)}") from None

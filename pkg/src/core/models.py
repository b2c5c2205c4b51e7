"""
Pydantic Models

Type-safe records for attack recipes, per-image logs, result tables and
analysis reports. Array-carrying types (tensors, batches, datasets) are
dataclasses in their own modules; everything here serialises to JSON/CSV.
"""

from enum import Enum
from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator


# =============================================================================
# Enums
# =============================================================================

class AttackMethod(str, Enum):
    IFGSM = "ifgsm"
    MIFGSM = "mifgsm"
    NIFGSM = "nifgsm"


class GradMode(str, Enum):
    FULL = "full"
    DETACHED = "detached"


class SweepAxis(str, Enum):
    BETA = "beta"
    TOPK = "topk"
    LAYER = "layer"


class CKAVariant(str, Enum):
    CLEAN = "clean"
    ADV_NO_SVD = "adv_no_svd"
    ADV_SVD = "adv_svd"
    CLEAN_VS_ADV_NO_SVD = "clean_vs_adv_no_svd"
    CLEAN_VS_ADV_SVD = "clean_vs_adv_svd"


# =============================================================================
# Transform plugins
# =============================================================================

class DITransform(BaseModel):
    """Random nearest-neighbour resize then zero-pad back, with probability p"""
    model_config = ConfigDict(extra="forbid")
    kind: Literal["di"] = "di"
    p: float = Field(default=0.5, ge=0.0, le=1.0, description="Transformation probability")
    min_scale: float = Field(default=0.9, gt=0.0, le=1.0, description="Smallest resize factor")


class TITransform(BaseModel):
    """Gaussian smoothing of the input gradient"""
    model_config = ConfigDict(extra="forbid")
    kind: Literal["ti"] = "ti"
    kernel_len: int = Field(default=7, ge=1, description="Odd kernel side length")

    @field_validator("kernel_len")
    @classmethod
    def validate_odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("TI kernel length must be odd")
        return v


class SITransform(BaseModel):
    """Average the gradient over scale copies x / 2^i"""
    model_config = ConfigDict(extra="forbid")
    kind: Literal["si"] = "si"
    m: int = Field(default=5, ge=1, description="Number of scale copies")


class VTTransform(BaseModel):
    """Variance tuning from uniformly sampled neighbours"""
    model_config = ConfigDict(extra="forbid")
    kind: Literal["vt"] = "vt"
    beta: float = Field(default=1.5, ge=0.0, description="Neighbourhood radius in units of epsilon")
    n: int = Field(default=20, ge=1, description="Number of sampled neighbours")


TransformSpec = Annotated[
    Union[DITransform, TITransform, SITransform, VTTransform],
    Field(discriminator="kind"),
]


# =============================================================================
# Attack configuration
# =============================================================================

class SvdHook(BaseModel):
    """Where and how the feature is truncated for the fused-logit branch"""
    model_config = ConfigDict(extra="forbid")
    layer_name: str = Field(default="block3", description="Layer whose output is decomposed")
    k: int = Field(default=1, ge=1, description="Number of singular components kept")
    beta_fusion: float = Field(default=0.5, ge=0.0, le=1.0, description="Weight of the original logits")
    grad_mode: GradMode = Field(default=GradMode.FULL, description="full adjoint or singular values only")
    gap_eps: float = Field(default=1e-6, gt=0.0, description="Clamp for inverse spectral gaps")


class AttackConfig(BaseModel):
    """Full recipe for one attack run"""
    model_config = ConfigDict(extra="forbid")

    name: str = Field(default="custom", description="Label used in result tables")
    method: AttackMethod = Field(default=AttackMethod.MIFGSM)
    epsilon: float = Field(default=16.0, gt=0.0, le=255.0, description="L-inf radius in pixel units")
    steps: int = Field(default=10, ge=1, description="Iterations T")
    alpha: Optional[float] = Field(default=None, gt=0.0, description="Step size, defaults to epsilon/steps")
    momentum_mu: float = Field(default=1.0, ge=0.0, description="Momentum decay")
    transforms: List[TransformSpec] = Field(default_factory=list)
    svd_hook: Optional[SvdHook] = None
    seed: int = Field(default=0, ge=0)

    @field_validator("transforms")
    @classmethod
    def validate_unique_kinds(cls, v: list) -> list:
        kinds = [t.kind for t in v]
        if len(kinds) != len(set(kinds)):
            raise ValueError(f"each transform may appear once, got {kinds}")
        return v

    @model_validator(mode="after")
    def default_alpha(self) -> "AttackConfig":
        if self.alpha is None:
            self.alpha = self.epsilon / self.steps
        return self

    def transform(self, kind: str):
        """Return the configured transform of `kind`, or None"""
        for t in self.transforms:
            if t.kind == kind:
                return t
        return None


# =============================================================================
# Training metrics
# =============================================================================

class EpochRecord(BaseModel):
    epoch: int
    loss: float
    train_acc: float
    test_acc: Optional[float] = None


class TrainingMetrics(BaseModel):
    """Metrics record emitted by train()"""
    arch_id: str
    seed: int
    lr: float
    epochs: List[EpochRecord] = Field(default_factory=list)

    @property
    def final_train_acc(self) -> Optional[float]:
        return self.epochs[-1].train_acc if self.epochs else None

    @property
    def final_test_acc(self) -> Optional[float]:
        return self.epochs[-1].test_acc if self.epochs else None


# =============================================================================
# Attack / evaluation records
# =============================================================================

class ImageRecord(BaseModel):
    """Per-image attack log line"""
    index: int
    label: int
    linf: float
    source_pred_before: int
    source_pred_after: int
    error: Optional[str] = None


class ResultRow(BaseModel):
    """One source × target × attack cell of the transfer table"""
    source: str
    target: str
    attack: str
    svd: bool
    k: Optional[int] = None
    beta: Optional[float] = None
    layer: Optional[str] = None
    success_rate: float = Field(..., ge=0.0, le=1.0)
    n: int = Field(..., ge=0)
    seed: int

    @computed_field
    @property
    def white_box(self) -> bool:
        return self.source == self.target


RESULT_COLUMNS = ["source", "target", "attack", "svd", "k", "beta", "layer", "success_rate", "n", "seed"]


class CKARow(BaseModel):
    layer: str
    variant: CKAVariant
    cka: float = Field(..., ge=0.0, le=1.0 + 1e-6)
    source_model: str
    target_model: Optional[str] = None


class CKAReport(BaseModel):
    """Rows of linear-CKA values for one analysis"""
    rows: List[CKARow] = Field(default_factory=list)

    def value(self, layer: str, variant: CKAVariant) -> float:
        for row in self.rows:
            if row.layer == layer and row.variant == variant:
                return row.cka
        raise KeyError(f"no CKA row for layer={layer} variant={variant.value}")

    def __len__(self) -> int:
        return len(self.rows)


class SweepPoint(BaseModel):
    """Mean black-box success for one grid value"""
    axis: SweepAxis
    value: str
    mean_black_box: float
    mean_white_box: float
    rows: List[ResultRow] = Field(default_factory=list)

# schemas.py
import math
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from errors import ConfigError


# ---------- ENUMS ----------
class AttentionVariant(str, Enum):
    self_correlation = "self_correlation"
    qkv_full = "qkv_full"
    q_removed = "q_removed"
    kv_removed = "kv_removed"

class TemperatureKind(str, Enum):
    t = "t"
    t2 = "t2"
    t3 = "t3"
    t4 = "t4"
    exp = "exp"

class FFNScope(str, Enum):
    global_ = "global"
    per_point = "per_point"

class EmbeddingStyle(str, Enum):
    lightn = "lightn"
    reference_pct = "reference_pct"

class SamplerName(str, Enum):
    fps = "fps"
    random = "random"
    voxel = "voxel"
    lightn = "lightn"

class EvalMode(str, Enum):
    soft = "soft"
    matched = "matched"

class PointFormat(str, Enum):
    xyz = "xyz"
    csv = "csv"

class ShapeClass(str, Enum):
    sphere = "sphere"
    cube_surface = "cube_surface"
    cylinder = "cylinder"
    two_spheres = "two_spheres"

class Command(str, Enum):
    sample = "sample"
    train_task = "train-task"
    train_sampler = "train-sampler"
    eval = "eval"
    flops = "flops"
    bench = "bench"

class TaskProfile(str, Enum):
    mini = "mini"
    pointnet_full = "pointnet_full"

class PipelineStage(str, Enum):
    embed = "embed"
    attention = "attention"
    ffn = "ffn"
    task_head = "task_head"


def _check(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


# ---------- MODEL ----------
class AttentionConfig(BaseModel):
    variant: AttentionVariant = AttentionVariant.self_correlation
    heads: int = 1
    scale_factor_a: int = 1
    model_dim: int = 64
    # evaluate only the upper triangle of X·Xᵀ (self_correlation only)
    symmetric_gram: bool = True

    @model_validator(mode="after")
    def check_variant(self):
        _check(self.heads >= 1, f"heads must be >= 1, got {self.heads}")
        _check(self.scale_factor_a >= 1, f"scale_factor_a must be >= 1, got {self.scale_factor_a}")
        _check(self.model_dim >= 1, f"model_dim must be >= 1, got {self.model_dim}")
        _check(self.model_dim % self.scale_factor_a == 0,
               f"scale_factor_a={self.scale_factor_a} does not divide model_dim={self.model_dim}")
        if self.variant != AttentionVariant.qkv_full:
            _check(self.heads == 1, f"{self.variant.value} is single-head, got heads={self.heads}")
            _check(self.scale_factor_a == 1,
                   f"{self.variant.value} has no Q/K projection to scale, got a={self.scale_factor_a}")
        return self


class FFNConfig(BaseModel):
    """Hidden widths of the generation head; the output layer (m×3) is implied"""
    hidden: List[int] = Field(default_factory=lambda: [512, 256])

    @field_validator("hidden")
    @classmethod
    def check_hidden(cls, v):
        _check(len(v) >= 1 and all(w >= 1 for w in v), f"FFN hidden widths must be positive, got {v}")
        return v

    @classmethod
    def expand_reduce(cls, layers: int = 3, r: int = 2, d_f: int = 512) -> "FFNConfig":
        """L linear layers: d_f first, then each middle layer reduced by r"""
        _check(layers >= 2, f"FFN needs at least 2 layers, got {layers}")
        _check(r >= 1, f"reduction ratio must be >= 1, got {r}")
        widths = [d_f]
        for _ in range(layers - 2):
            widths.append(max(1, widths[-1] // r))
        return cls(hidden=widths)


class ProjectionConfig(BaseModel):
    k: int = 7
    temperature_kind: TemperatureKind = TemperatureKind.exp

    @field_validator("k")
    @classmethod
    def check_k(cls, v):
        _check(v >= 1, f"projection k must be >= 1, got {v}")
        return v


class LossConfig(BaseModel):
    alpha: float = 1.0
    beta: float = 1.0
    delta: float = 1.0
    h: float = 0.001
    k_rep: int = 15
    temperature_kind: TemperatureKind = TemperatureKind.exp

    @model_validator(mode="after")
    def check_values(self):
        _check(self.h > 0, f"repulsion radius h must be positive, got {self.h}")
        _check(self.k_rep >= 1, f"k_rep must be >= 1, got {self.k_rep}")
        for name in ("alpha", "beta", "delta", "h"):
            _check(math.isfinite(getattr(self, name)), f"{name} must be finite")
        return self


class TrainConfig(BaseModel):
    batch_size: int = 32
    learning_rate: float = 0.01
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @model_validator(mode="after")
    def check_values(self):
        _check(self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}")
        _check(self.learning_rate > 0, f"learning_rate must be positive, got {self.learning_rate}")
        _check(self.epochs >= 0, f"epochs must be >= 0, got {self.epochs}")
        return self


# ---------- DATASET / RUN ----------
class DatasetSpec(BaseModel):
    classes: List[ShapeClass] = Field(default_factory=lambda: list(ShapeClass))
    n: int = 256
    train_per_class: int = 200
    test_per_class: int = 50
    seed: int = 0

    @field_validator("n")
    @classmethod
    def check_n(cls, v):
        _check(v >= 8, f"synthetic clouds need n >= 8, got {v}")
        return v


class RunConfig(BaseModel):
    command: Optional[Command] = None
    input: List[str] = Field(default_factory=list)
    output: Optional[str] = None
    format: PointFormat = PointFormat.xyz
    m: int = 16
    m_list: List[int] = Field(default_factory=lambda: [16])
    seed: int = 0
    sampler: SamplerName = SamplerName.lightn
    variant: AttentionVariant = AttentionVariant.self_correlation
    heads: int = 1
    scale_factor_a: int = 1
    alpha: float = 1.0
    beta: float = 1.0
    delta: float = 1.0
    temperature_kind: TemperatureKind = TemperatureKind.exp
    projection_k: int = 7
    ffn_layers: int = 3
    ffn_ratio: int = 2
    epochs: int = 10
    task_epochs: int = 30
    batch_size: int = 32
    sampler_lr: float = 0.01
    task_lr: float = 0.001
    loss_ablation: bool = False
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    task_checkpoint: Optional[str] = None
    sampler_checkpoint: Optional[str] = None
    n_full: int = 1024
    ratios: List[int] = Field(default_factory=lambda: [2, 4, 8, 16, 32, 64])
    param_budget: Optional[int] = None

    @model_validator(mode="after")
    def check_values(self):
        _check(self.m >= 1, f"m must be >= 1, got {self.m}")
        _check(all(m >= 1 for m in self.m_list), f"m_list entries must be >= 1, got {self.m_list}")
        _check(all(r >= 1 for r in self.ratios), f"ratios must be >= 1, got {self.ratios}")
        return self

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(variant=self.variant, heads=self.heads, scale_factor_a=self.scale_factor_a)

    def ffn_config(self) -> FFNConfig:
        return FFNConfig.expand_reduce(self.ffn_layers, self.ffn_ratio)

    def loss_config(self) -> LossConfig:
        return LossConfig(alpha=self.alpha, beta=self.beta, delta=self.delta,
                          temperature_kind=self.temperature_kind)

    def projection_config(self) -> ProjectionConfig:
        return ProjectionConfig(k=self.projection_k, temperature_kind=self.temperature_kind)

    def sampler_train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, learning_rate=self.sampler_lr,
                           epochs=self.epochs, seed=self.seed)

    def task_train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, learning_rate=self.task_lr,
                           epochs=self.task_epochs, seed=self.seed)


# ---------- COST ----------
class PipelineSpec(BaseModel):
    n: int = 1024
    m: int = 32
    d_in: int = 3
    d_o: int = 64
    attention: AttentionConfig = Field(default_factory=AttentionConfig)
    ffn: FFNConfig = Field(default_factory=FFNConfig)
    task_profile: TaskProfile = TaskProfile.pointnet_full
    task_widths: List[int] = Field(default_factory=lambda: [3, 32, 64, 128])
    classes: int = 40
    stages: List[PipelineStage] = Field(default_factory=lambda: list(PipelineStage))

    @model_validator(mode="after")
    def check_values(self):
        _check(self.n >= 1 and self.m >= 1, f"n and m must be >= 1, got n={self.n}, m={self.m}")
        _check(self.attention.model_dim == self.d_o,
               f"attention model_dim {self.attention.model_dim} != d_o {self.d_o}")
        return self


class CostStage(BaseModel):
    name: str
    macs: int = 0
    flops: int = 0
    params: int = 0
    aux_flops: int = 0


class CostReport(BaseModel):
    config: str = ""
    macs: int = 0
    flops: int = 0
    params: int = 0
    flops_per_mac: int = 2
    convention: str = "1 multiply-accumulate = 2 FLOPs; softmax 4 FLOPs per element"
    breakdown: List[CostStage] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_totals(self):
        _check(min(self.macs, self.flops, self.params) >= 0, "cost counts must be non-negative")
        if self.breakdown:
            _check(sum(s.flops for s in self.breakdown) == self.flops, "breakdown FLOPs do not sum to total")
            _check(sum(s.params for s in self.breakdown) == self.params, "breakdown params do not sum to total")
            _check(sum(s.macs for s in self.breakdown) == self.macs, "breakdown MACs do not sum to total")
        return self


# ---------- REPORTS ----------
class SampleMetrics(BaseModel):
    schema_version: int = 1
    source: str = ""
    sampler: str
    n: int
    m: int
    chamfer: float
    min_pairwise_distance: float
    coverage_radius: float


# ---------- API ----------
class PointsRequest(BaseModel):
    points: List[List[float]] = Field(..., description="N×3 coordinates")
    sampler: SamplerName = SamplerName.fps
    m: int = Field(..., ge=1)
    seed: int = 0

    @field_validator("points")
    @classmethod
    def check_points(cls, v):
        if not v:
            raise ValueError("points must not be empty")
        if any(len(p) != 3 for p in v):
            raise ValueError("every point needs exactly 3 coordinates")
        return v


class SweepRow(BaseModel):
    config: str
    N: int
    m: int
    flops: int
    params: int
    reduction_pct: float
    increase_pct: float

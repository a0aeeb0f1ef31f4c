from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from factorizer.exceptions import ConfigurationError


class MatricizeMode(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"
    SW = "sw"


class Solver(str, Enum):
    MU = "mu"
    HALS = "hals"


class OutputMode(str, Enum):
    SOFTMAX = "softmax"
    SIGMOID = "sigmoid"


class BlendMode(str, Enum):
    CONSTANT = "constant"
    GAUSSIAN = "gaussian"


def _triple(value: Union[int, List[int], Tuple[int, ...]]) -> List[int]:
    if isinstance(value, int):
        return [value] * 3
    value = list(value)
    if len(value) == 1:
        return value * 3
    if len(value) != 3:
        raise ValueError(f"expected one or three extents, got {value}")
    return value


class ConfigModel(BaseModel):
    """Base for configuration records; invalid input raises ConfigurationError"""

    model_config = ConfigDict(extra="forbid", validate_assignment=True, use_enum_values=False)

    def __init__(self, **data: Any):
        try:
            super().__init__(**data)
        except ValidationError as e:
            raise ConfigurationError(f"invalid {type(self).__name__}: {e}") from e

    def updated(self, **changes: Any) -> "ConfigModel":
        """Validated copy with some fields replaced"""
        return type(self)(**{**self.model_dump(), **changes})


class NmfConfig(ConfigModel):
    rank: int = Field(1, ge=1)
    iterations: int = Field(5, ge=1)
    solver: Solver = Solver.HALS
    eps: float = Field(1e-8, gt=0)
    init_seed: int = 0


class MatricizeConfig(ConfigModel):
    mode: MatricizeMode = MatricizeMode.SW
    head_dim: int = Field(8, ge=1)
    patch: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _window_needed(self) -> "MatricizeConfig":
        if self.mode != MatricizeMode.GLOBAL and self.patch is None:
            raise ValueError(f"{self.mode.value} matricize needs a patch size")
        if self.mode == MatricizeMode.SW and self.patch % 2:
            raise ValueError(f"shifted windows need an even patch, got {self.patch}")
        return self


class FactorizerConfig(ConfigModel):
    """Architecture of the U-shaped Factorizer"""

    in_channels: int = Field(4, ge=1)
    base_channels: int = Field(32, ge=1)
    out_channels: int = Field(3, ge=1)
    stages: int = 4
    matricize: MatricizeMode = MatricizeMode.SW
    head_dim: Union[int, List[int]] = 8
    patch: Union[int, List[int]] = 8
    nmf: NmfConfig = Field(default_factory=NmfConfig)
    blocks_per_stage: int = Field(1, ge=1)
    deep_supervision: bool = True
    positional_embedding: bool = True
    use_nmf: bool = True
    use_mlp: bool = True
    mlp_ratio: int = Field(2, ge=1)
    patch_size: List[int] = Field(default_factory=lambda: [128, 128, 128])
    output_mode: OutputMode = OutputMode.SOFTMAX
    dtype: str = "float32"
    norm_eps: float = Field(1e-5, gt=0)

    @field_validator("patch_size", mode="before")
    @classmethod
    def _expand_patch_size(cls, value: Any) -> List[int]:
        return _triple(value)

    @field_validator("patch_size")
    @classmethod
    def _patch_size_multiple_of_16(cls, value: List[int]) -> List[int]:
        bad = [extent for extent in value if extent < 16 or extent % 16]
        if bad:
            raise ValueError(f"patch_size extents must be positive multiples of 16, got {value}")
        return value

    @field_validator("stages")
    @classmethod
    def _four_stages(cls, value: int) -> int:
        if value != 4:
            raise ValueError(f"the network has 4 stages (1/16 at the bridge), got {value}")
        return value

    @field_validator("dtype")
    @classmethod
    def _float_dtype(cls, value: str) -> str:
        if value not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {value}")
        return value

    @field_validator("head_dim", "patch")
    @classmethod
    def _per_stage(cls, value: Union[int, List[int]]) -> Union[int, List[int]]:
        values = [value] if isinstance(value, int) else value
        if len(values) not in (1, 5) or any(v < 1 for v in values):
            raise ValueError(f"expected one positive value or one per stage (5 incl. bridge), got {value}")
        return value

    def stage_value(self, name: str, stage: int) -> int:
        """Per-stage head_dim or patch; stage 4 is the bridge"""
        value = getattr(self, name)
        if isinstance(value, int):
            return value
        return value[0] if len(value) == 1 else value[stage]

    def stage_channels(self, stage: int) -> int:
        return self.base_channels * 2 ** stage

    def stage_extent(self, stage: int) -> List[int]:
        return [extent // 2 ** stage for extent in self.patch_size]


class TrainConfig(ConfigModel):
    steps: int = Field(1500, ge=1)
    batch_size: int = Field(1, ge=1)
    base_lr: float = Field(1e-4, gt=0)
    weight_decay: float = Field(1e-2, ge=0)
    warmup_steps: int = Field(100, ge=0)
    schedule: str = "cosine"
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(1e-8, gt=0)
    seed: int = 0
    patch_size: Optional[List[int]] = None
    checkpoint_every: int = Field(500, ge=1)
    log_every: int = Field(50, ge=1)
    grad_accumulation: int = Field(1, ge=1)
    num_workers: int = Field(1, ge=0)
    augment: bool = True

    @field_validator("patch_size", mode="before")
    @classmethod
    def _expand_patch_size(cls, value: Any) -> Optional[List[int]]:
        return None if value is None else _triple(value)

    @field_validator("schedule")
    @classmethod
    def _known_schedule(cls, value: str) -> str:
        if value not in ("cosine", "constant"):
            raise ValueError(f"schedule must be cosine or constant, got {value}")
        return value

    @model_validator(mode="after")
    def _warmup_before_end(self) -> "TrainConfig":
        if self.warmup_steps >= self.steps:
            raise ValueError(f"warmup_steps ({self.warmup_steps}) must be smaller than steps ({self.steps})")
        return self


class InferConfig(ConfigModel):
    window: Optional[List[int]] = None
    overlap: float = Field(0.5, ge=0, lt=1)
    threshold: float = Field(0.5, ge=0, le=1)
    blend: BlendMode = BlendMode.CONSTANT
    num_workers: int = Field(1, ge=0)

    @field_validator("window", mode="before")
    @classmethod
    def _expand_window(cls, value: Any) -> Optional[List[int]]:
        return None if value is None else _triple(value)


class SyntheticTaskSpec(ConfigModel):
    """Desk-scale synthetic lesion segmentation task"""

    extent: List[int] = Field(default_factory=lambda: [48, 48, 48])
    channels: int = Field(2, ge=1)
    classes: int = Field(2, ge=0)
    blob_count: Tuple[int, int] = (1, 3)
    blob_radius: Tuple[float, float] = (3.0, 7.0)
    contrast: Optional[List[List[float]]] = None
    noise: float = Field(0.1, ge=0)
    texture_sigma: float = Field(2.0, gt=0)
    margin: int = Field(4, ge=0)
    soft_edge: float = Field(1.5, ge=0)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    train_samples: int = Field(40, ge=0)
    eval_samples: int = Field(10, ge=0)
    max_attempts: int = Field(200, ge=1)
    seed: int = 0

    @field_validator("extent", mode="before")
    @classmethod
    def _expand_extent(cls, value: Any) -> List[int]:
        return _triple(value)

    @field_validator("extent")
    @classmethod
    def _extent_multiple_of_16(cls, value: List[int]) -> List[int]:
        if any(extent < 16 or extent % 16 for extent in value):
            raise ValueError(f"volume extents must be positive multiples of 16, got {value}")
        return value

    @model_validator(mode="after")
    def _ranges(self) -> "SyntheticTaskSpec":
        low, high = self.blob_count
        if low < 0 or high < low:
            raise ValueError(f"blob_count must be an ordered nonnegative range, got {self.blob_count}")
        low, high = self.blob_radius
        if low <= 0 or high < low:
            raise ValueError(f"blob_radius must be an ordered positive range, got {self.blob_radius}")
        if self.contrast is not None:
            shape = (len(self.contrast), {len(row) for row in self.contrast})
            if shape != (self.classes, {self.channels}):
                raise ValueError(f"contrast must be classes x channels ({self.classes}x{self.channels})")
        return self

    def class_contrast(self) -> List[List[float]]:
        """Intensity offset of each foreground class in each channel"""
        if self.contrast is not None:
            return self.contrast
        return [
            [(k + 1) * (1.0 if c % 2 == 0 else (-1.0) ** k * 0.75) for c in range(self.channels)]
            for k in range(self.classes)
        ]


class AugmentPolicy(ConfigModel):
    flip_p: float = Field(0.5, ge=0, le=1)
    noise_p: float = Field(0.15, ge=0, le=1)
    noise_variance: Tuple[float, float] = (0.0, 0.1)
    smooth_p: float = Field(0.15, ge=0, le=1)
    smooth_sigma: Tuple[float, float] = (0.5, 1.5)
    scale_p: float = Field(0.15, ge=0, le=1)
    scale_range: Tuple[float, float] = (0.7, 1.3)
    shift_p: float = Field(0.15, ge=0, le=1)
    shift_range: Tuple[float, float] = (-0.1, 0.1)
    gamma_p: float = Field(0.15, ge=0, le=1)
    gamma_range: Tuple[float, float] = (0.7, 1.5)

    @classmethod
    def disabled(cls) -> "AugmentPolicy":
        return cls(flip_p=0, noise_p=0, smooth_p=0, scale_p=0, shift_p=0, gamma_p=0)


# Desk-scale model paired with the default synthetic task
DESK_MODEL: Dict[str, Any] = {
    "in_channels": 2,
    "base_channels": 16,
    "out_channels": 3,
    "head_dim": 4,
    "patch": 4,
    "patch_size": [32, 32, 32],
}


class RunConfig(ConfigModel):
    """Everything a CLI run needs, loadable from a dotted key=value file"""

    model: FactorizerConfig = Field(default_factory=lambda: FactorizerConfig(**DESK_MODEL))
    train: TrainConfig = Field(default_factory=TrainConfig)
    infer: InferConfig = Field(default_factory=InferConfig)
    data: SyntheticTaskSpec = Field(default_factory=SyntheticTaskSpec)
    augment: AugmentPolicy = Field(default_factory=AugmentPolicy)

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        if self.train.patch_size is not None and self.train.patch_size != self.model.patch_size:
            raise ValueError(
                f"train.patch_size {self.train.patch_size} differs from model.patch_size {self.model.patch_size}"
            )
        if self.model.in_channels != self.data.channels:
            raise ValueError(f"model.in_channels {self.model.in_channels} != data.channels {self.data.channels}")
        expected = self.data.classes + (1 if self.model.output_mode == OutputMode.SOFTMAX else 0)
        if self.model.out_channels != expected:
            raise ValueError(
                f"model.out_channels must be {expected} for {self.data.classes} classes "
                f"in {self.model.output_mode.value} mode, got {self.model.out_channels}"
            )
        return self

    @property
    def window(self) -> List[int]:
        return self.infer.window or self.model.patch_size

    @classmethod
    def from_flat(cls, values: Dict[str, Any]) -> "RunConfig":
        """Build from dotted keys such as `model.nmf.rank`; unset model keys take the desk-scale values"""
        nested: Dict[str, Any] = {"model": dict(DESK_MODEL)}
        for key, value in values.items():
            parts = key.split(".")
            node = nested
            for part in parts[:-1]:
                child = node.setdefault(part, {})
                if not isinstance(child, dict):
                    raise ConfigurationError(f"config key '{key}' nests below a plain value")
                node = child
            if isinstance(node.get(parts[-1]), dict):
                raise ConfigurationError(f"config key '{key}' replaces a whole section")
            node[parts[-1]] = value
        return cls(**nested)

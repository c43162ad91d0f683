"""Network configuration and shape arithmetic."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


@dataclass
class ModelConfig:
    """Hyperparameters that fully determine every parameter shape.

    Channel width doubles per stage; stage s (1-based) runs at spatial
    resolution ``input_hw / 2**(s-1)``. `patch_size` sets the skip-fusion
    token grid at full resolution and is halved per stage so the token
    length stays constant across stages.
    """

    stages: int = 5
    base_channels: int = 64
    patch_size: int = 16
    input_hw: tuple[int, int] = (512, 512)
    use_ccf: bool = True
    use_ds_branch: bool = True
    norm: str = "batch"
    se_reduction: int = 16
    dtype: str = "float32"

    def __post_init__(self):
        self.input_hw = tuple(int(v) for v in self.input_hw)
        self.validate()

    def validate(self) -> None:
        if self.stages < 2:
            raise ValueError("need at least 2 stages")
        if self.base_channels < 1:
            raise ValueError("base_channels must be positive")
        h, w = self.input_hw
        down = 1 << (self.stages - 1)
        if h % down or w % down:
            raise ValueError(
                f"input {h}x{w} not divisible by 2^(stages-1) = {down}"
            )
        if h % self.patch_size or w % self.patch_size:
            raise ValueError(
                f"input {h}x{w} not divisible by patch_size {self.patch_size}"
            )
        if self.patch_size % down:
            raise ValueError(
                f"patch_size {self.patch_size} must be divisible by {down} "
                f"so every stage keeps an integral patch grid"
            )
        if self.norm not in ("batch", "group"):
            raise ValueError(f"norm must be 'batch' or 'group', got {self.norm!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def channels(self, stage: int) -> int:
        """Channel width at 1-based stage index."""
        return self.base_channels * (1 << (stage - 1))

    @property
    def channel_list(self) -> list[int]:
        return [self.channels(s) for s in range(1, self.stages + 1)]

    @property
    def token_len(self) -> int:
        """Per-channel token length of the skip-fusion attention."""
        h, w = self.input_hw
        return (h // self.patch_size) * (w // self.patch_size)

    def skip_patch(self, k: int) -> int:
        """Patch side for skip k (0-based); its decoder side sits at
        0-based scale k+1."""
        return self.patch_size >> (k + 1)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["input_hw"] = list(self.input_hw)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def toy_config(**overrides) -> ModelConfig:
    """Desk-scale configuration used throughout the tests."""
    base = dict(
        stages=5,
        base_channels=8,
        patch_size=16,
        input_hw=(64, 64),
    )
    base.update(overrides)
    return ModelConfig(**base)

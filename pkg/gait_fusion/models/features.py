from typing import Dict, List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..constants import ERR_UNKNOWN_FEATURE, FEATURE_NAMES, SELECTED_FEATURES, FeatureSet


class GaitFeatureVector(BaseModel):
    """The 24 clinical features of one clip, with a validity mask"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    valid: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _as_float(cls, value):
        return np.asarray(value, dtype=np.float64)

    @field_validator("valid", mode="before")
    @classmethod
    def _as_bool(cls, value):
        return np.asarray(value, dtype=bool)

    @model_validator(mode="after")
    def _check(self) -> "GaitFeatureVector":
        n = len(FEATURE_NAMES)
        if self.values.shape != (n,) or self.valid.shape != (n,):
            raise ValueError(f"feature vectors have {n} entries")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("features must be finite")
        return self

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])

    def as_dict(self) -> Dict[str, float]:
        return {name: float(v) for name, v in zip(FEATURE_NAMES, self.values)}

    @property
    def validity_bitmask(self) -> int:
        """Bit i is set when feature i (canonical order) is valid."""
        return int(sum(1 << i for i, ok in enumerate(self.valid) if ok))


class FeatureSubset(BaseModel):
    """Ordered selection of canonical feature names"""
    names: List[str] = Field(default_factory=lambda: list(SELECTED_FEATURES))

    @field_validator("names")
    @classmethod
    def _known(cls, names: List[str]) -> List[str]:
        for name in names:
            if name not in FEATURE_NAMES:
                raise ValueError(ERR_UNKNOWN_FEATURE.format(name))
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        return names

    @classmethod
    def for_set(cls, feature_set: FeatureSet) -> "FeatureSubset":
        if FeatureSet(feature_set) is FeatureSet.ALL24:
            return cls(names=list(FEATURE_NAMES))
        return cls(names=list(SELECTED_FEATURES))

    @property
    def indices(self) -> List[int]:
        return [FEATURE_NAMES.index(name) for name in self.names]

    def __len__(self) -> int:
        return len(self.names)


class GaitEvents(BaseModel):
    """Ipsilateral event frames per side"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    left: np.ndarray
    right: np.ndarray

    @field_validator("left", "right", mode="before")
    @classmethod
    def _as_int(cls, value):
        return np.asarray(value, dtype=np.int64).reshape(-1)

    @model_validator(mode="after")
    def _increasing(self) -> "GaitEvents":
        for side in (self.left, self.right):
            if side.size > 1 and np.any(np.diff(side) <= 0):
                raise ValueError("event frames must be strictly increasing")
        return self

    @property
    def left_intervals(self) -> np.ndarray:
        return np.diff(self.left)

    @property
    def right_intervals(self) -> np.ndarray:
        return np.diff(self.right)

    @property
    def valid(self) -> bool:
        return self.left.size >= 2 and self.right.size >= 2


class Standardizer(BaseModel):
    """Training-set feature statistics"""
    names: List[str]
    mean: List[float]
    std: List[float]
    eps: float = 1e-8

    @model_validator(mode="after")
    def _check(self) -> "Standardizer":
        if not (len(self.names) == len(self.mean) == len(self.std)):
            raise ValueError("standardizer statistics must align with names")
        if any(s < 0 for s in self.std):
            raise ValueError("standard deviations must be nonnegative")
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.maximum(np.asarray(self.std, dtype=np.float64), self.eps)
        return (np.asarray(x, dtype=np.float64) - mean) / std

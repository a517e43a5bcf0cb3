from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from .features import Standardizer


class TensorEntry(BaseModel):
    """Location of one named array in the checkpoint payload"""
    name: str
    kind: Literal["param", "buffer", "optimizer"] = "param"
    shape: List[int]
    dtype: Literal["<f4"] = "<f4"
    offset: int = Field(ge=0)
    length: int = Field(ge=0)
    trainable: bool = False

    @property
    def count(self) -> int:
        n = 1
        for dim in self.shape:
            n *= dim
        return n


class OptimizerInfo(BaseModel):
    """Adam hyper-parameters and per-tensor step counts"""
    beta1: float
    beta2: float
    eps: float
    step: int = Field(0, ge=0)
    steps: Dict[str, int] = Field(default_factory=dict)


class CheckpointHeader(BaseModel):
    """JSON header of a checkpoint file"""
    version: int
    config: Dict[str, Any]
    num_features: int = Field(ge=0)
    feature_names: List[str] = Field(default_factory=list)
    standardizer: Optional[Standardizer] = None
    optimizer: Optional[OptimizerInfo] = None
    rng: Dict[str, int] = Field(default_factory=dict)
    payload_length: int = Field(ge=0)
    manifest: List[TensorEntry]

    @model_validator(mode="after")
    def _check_manifest(self) -> "CheckpointHeader":
        names = [e.name for e in self.manifest]
        if len(set(names)) != len(names):
            raise ValueError("manifest names must be unique")
        end = 0
        for entry in sorted(self.manifest, key=lambda e: e.offset):
            if entry.length != 4 * entry.count:
                raise ValueError(f"manifest length of {entry.name} does not match its shape")
            if entry.offset < end:
                raise ValueError(f"manifest entry {entry.name} overlaps its predecessor")
            end = entry.offset + entry.length
        if end > self.payload_length:
            raise ValueError("manifest extends past the payload")
        return self

"""Single-file checkpoints: magic, header length, JSON header, float32 payload.

Layout::

    b"GAITCKPT" | header length (<Q) | header JSON (sorted keys) | payload

Every array is stored as little-endian float32 at the offset its manifest
entry records. Encoding is deterministic, so loading a checkpoint and saving
it again reproduces the file byte for byte.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from ..config import RunConfig
from ..constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, ERR_CHECKPOINT
from ..exceptions import CheckpointError, ContractError
from ..models.checkpoint import CheckpointHeader, OptimizerInfo, TensorEntry
from ..utils.json_utils import JSONProcessor
from ..utils.logger import setup_logger
from .fusion import GaitSeverityModel
from .training import AdamState

logger = setup_logger(__name__)

HEADER_LENGTH = struct.Struct("<Q")
PAYLOAD_DTYPE = np.dtype("<f4")


def _fail(message: str) -> CheckpointError:
    return CheckpointError(ERR_CHECKPOINT.format(message))


@dataclass
class Checkpoint:
    """Decoded checkpoint: header plus named float32 arrays"""
    header: CheckpointHeader
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: GaitSeverityModel, run_config: RunConfig, optimizer: Optional[AdamState] = None,
                   rng_state: Optional[Dict[str, int]] = None) -> "Checkpoint":
        named = []
        for name, array in model.store.state_arrays().items():
            kind = "param" if name in model.store else "buffer"
            trainable = kind == "param" and model.store.is_trainable(name)
            named.append((name, kind, trainable, array))
        optimizer_info = None
        if optimizer is not None:
            for name, array in optimizer.arrays().items():
                named.append((name, "optimizer", False, array))
            optimizer_info = OptimizerInfo(beta1=optimizer.beta1, beta2=optimizer.beta2, eps=optimizer.eps,
                                           step=optimizer.step, steps=dict(sorted(optimizer.t.items())))

        manifest, arrays, offset = [], {}, 0
        for name, kind, trainable, array in named:
            data = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE)
            manifest.append(TensorEntry(name=name, kind=kind, shape=list(data.shape), offset=offset,
                                        length=data.nbytes, trainable=trainable))
            arrays[name] = data
            offset += data.nbytes

        header = CheckpointHeader(
            version=CHECKPOINT_VERSION,
            config=run_config.model_dump(mode="json"),
            num_features=model.num_features,
            feature_names=list(model.feature_names),
            standardizer=model.standardizer,
            optimizer=optimizer_info,
            rng=dict(rng_state or {"seed": run_config.seed}),
            payload_length=offset,
            manifest=manifest,
        )
        return cls(header=header, arrays=arrays)

    @property
    def run_config(self) -> RunConfig:
        try:
            return RunConfig.model_validate(self.header.config)
        except ValidationError as e:
            raise _fail(f"stored config is invalid: {e}") from e

    def to_bytes(self) -> bytes:
        header = JSONProcessor.dumps(self.header.model_dump(mode="json")).encode("utf-8")
        payload = bytearray(self.header.payload_length)
        for entry in self.header.manifest:
            payload[entry.offset:entry.offset + entry.length] = self.arrays[entry.name].astype(PAYLOAD_DTYPE).tobytes()
        return CHECKPOINT_MAGIC + HEADER_LENGTH.pack(len(header)) + header + bytes(payload)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        magic_len = len(CHECKPOINT_MAGIC)
        if blob[:magic_len] != CHECKPOINT_MAGIC:
            raise _fail("not a checkpoint file (bad magic)")
        start = magic_len + HEADER_LENGTH.size
        if len(blob) < start:
            raise _fail("file truncated before the header")
        (header_len,) = HEADER_LENGTH.unpack_from(blob, magic_len)
        if len(blob) < start + header_len:
            raise _fail("file truncated inside the header")
        try:
            raw = json.loads(blob[start:start + header_len].decode("utf-8"))
            header = CheckpointHeader.model_validate(raw)
        except (UnicodeDecodeError, json.JSONDecodeError, ValidationError) as e:
            raise _fail(f"unreadable header: {e}") from e
        if header.version != CHECKPOINT_VERSION:
            raise _fail(f"unsupported version {header.version}, expected {CHECKPOINT_VERSION}")
        payload = blob[start + header_len:]
        if len(payload) != header.payload_length:
            raise _fail(f"payload has {len(payload)} bytes, header declares {header.payload_length}")
        arrays = {
            entry.name: np.frombuffer(payload, dtype=PAYLOAD_DTYPE, count=entry.count,
                                      offset=entry.offset).reshape(entry.shape).copy()
            for entry in header.manifest
        }
        return cls(header=header, arrays=arrays)

    def kind_arrays(self, kind: str) -> Dict[str, np.ndarray]:
        return {e.name: self.arrays[e.name] for e in self.header.manifest if e.kind == kind}

    def restore(self) -> Tuple[GaitSeverityModel, Optional[AdamState]]:
        """Rebuild the model (and optimizer state, when stored)."""
        config = self.run_config
        model = GaitSeverityModel(config.model, self.header.num_features, seed=config.seed,
                                  feature_names=self.header.feature_names)
        state = self.kind_arrays("param")
        state.update(self.kind_arrays("buffer"))
        try:
            model.store.load_arrays(state)
        except ContractError as e:
            raise _fail(f"parameters do not match the model: {e}") from e
        for entry in self.header.manifest:
            if entry.kind == "param":
                model.store[entry.name].requires_grad = entry.trainable
        model.standardizer = self.header.standardizer

        optimizer = None
        if self.header.optimizer is not None:
            info = self.header.optimizer
            optimizer = AdamState(beta1=info.beta1, beta2=info.beta2, eps=info.eps, step=info.step)
            try:
                optimizer.load_arrays(self.kind_arrays("optimizer"), info.steps)
            except KeyError as e:
                raise _fail(f"optimizer moments missing for {e}") from e
        return model, optimizer


def save_checkpoint(path: Union[str, Path], model: GaitSeverityModel, run_config: RunConfig,
                    optimizer: Optional[AdamState] = None, rng_state: Optional[Dict[str, int]] = None) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    checkpoint = Checkpoint.from_model(model, run_config, optimizer, rng_state)
    target.write_bytes(checkpoint.to_bytes())
    logger.info(f"Saved checkpoint with {len(checkpoint.header.manifest)} arrays to {target}")
    return target


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    source = Path(path)
    if not source.is_file():
        raise _fail(f"{source} not found")
    return Checkpoint.from_bytes(source.read_bytes())


def load_model(path: Union[str, Path]) -> Tuple[GaitSeverityModel, Checkpoint]:
    checkpoint = load_checkpoint(path)
    model, _ = checkpoint.restore()
    return model, checkpoint


def check_feature_names(checkpoint: Checkpoint, names: Sequence[str]) -> None:
    """Fail when a checkpoint was trained on a different feature subset."""
    stored = checkpoint.header.feature_names
    if stored and list(names) != stored:
        raise _fail(f"checkpoint was trained on features {stored}, got {list(names)}")

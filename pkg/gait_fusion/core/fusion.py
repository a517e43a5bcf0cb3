"""Clinical encoder, skeleton/clinical fusion and the GMFCS classification head."""

from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..config import ModelConfig
from ..constants import ENCODER_DROPOUT, HEAD_DROPOUT, FusionMode, ModelStream
from ..exceptions import CheckpointError, ContractError
from ..models.features import Standardizer
from ..utils.logger import setup_logger
from ..utils.seeding import derive_rng
from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .backbone import BackboneConfig, STGCNBackbone, clips_to_input, uniform_fan_in

logger = setup_logger(__name__)

# init stream ids
_INIT_BACKBONE, _INIT_ENCODER, _INIT_HEAD = 0, 1, 2


def _add_linear(store: ParamStore, name: str, in_dim: int, out_dim: int, rng: np.random.Generator) -> None:
    store.add(f"{name}.weight", uniform_fan_in(rng, (out_dim, in_dim), in_dim))
    store.add(f"{name}.bias", np.zeros(out_dim))


def _linear(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return ad.linear(x, store[f"{name}.weight"], store[f"{name}.bias"])


def encode_clinical(z: Tensor, store: ParamStore, training: bool = False, dropout: float = ENCODER_DROPOUT,
                    rng: Optional[np.random.Generator] = None) -> Tensor:
    """Two-layer MLP: affine -> relu -> dropout -> affine."""
    expected = store["clinical.fc1.weight"].shape[1]
    if z.data.ndim != 2 or z.shape[1] != expected:
        raise ContractError(f"clinical encoder expects N x {expected} features, got {z.shape}")
    h = ad.relu(_linear(store, "clinical.fc1", z))
    h = ad.dropout(h, dropout, training, rng)
    return _linear(store, "clinical.fc2", h)


def _check_pair(f_s: Tensor, f_c: Tensor) -> None:
    if f_s.data.ndim != 2 or f_s.shape != f_c.shape:
        raise ContractError(f"fusion needs two N x d embeddings of equal size, got {f_s.shape} and {f_c.shape}")


def fuse_concat(f_s: Tensor, f_c: Tensor) -> Tensor:
    _check_pair(f_s, f_c)
    return ad.concat([f_s, f_c], axis=1)


def attention_gate(f_s: Tensor, f_c: Tensor) -> Tensor:
    """Per-sample scalar sigmoid(<f_s, f_c> / sqrt(d))."""
    _check_pair(f_s, f_c)
    d = f_s.shape[1]
    return ad.sigmoid(ad.scale(ad.row_dot(f_s, f_c), 1.0 / np.sqrt(d)))


def fuse_cross_attention(f_s: Tensor, f_c: Tensor, ln_a: Tuple[Tensor, Tensor], ln_b: Tuple[Tensor, Tensor]) -> Tensor:
    """LN_a(f_s + a*f_c) concatenated with LN_b(f_c + a*f_s)."""
    alpha = attention_gate(f_s, f_c)
    first = ad.layer_norm(ad.add(f_s, ad.scale_rows(f_c, alpha)), *ln_a)
    second = ad.layer_norm(ad.add(f_c, ad.scale_rows(f_s, alpha)), *ln_b)
    return ad.concat([first, second], axis=1)


def classify(f_fused: Tensor, store: ParamStore, training: bool = False, dropout: float = HEAD_DROPOUT,
             rng: Optional[np.random.Generator] = None, head_relu: bool = False) -> Tensor:
    """FC -> (optional relu) -> dropout -> FC."""
    expected = store["head.fc1.weight"].shape[1]
    if f_fused.data.ndim != 2 or f_fused.shape[1] != expected:
        raise ContractError(f"head expects N x {expected} inputs, got {f_fused.shape}")
    h = _linear(store, "head.fc1", f_fused)
    if head_relu:
        h = ad.relu(h)
    h = ad.dropout(h, dropout, training, rng)
    return _linear(store, "head.fc2", h)


class GaitSeverityModel:
    """Skeleton backbone, clinical encoder, fusion and head over one ParamStore.

    ``stream`` selects the fused model or one of the single-stream baselines.
    """

    def __init__(self, config: ModelConfig, num_features: int, seed: int = 0,
                 feature_names: Optional[Sequence[str]] = None):
        self.config = config
        self.num_features = num_features
        self.seed = seed
        self.feature_names: List[str] = list(feature_names or [])
        self.standardizer: Optional[Standardizer] = None
        self.store = ParamStore()
        self.backbone_config = BackboneConfig.for_preset(config.preset, dropout=config.block_dropout)
        self.embedding_dim = self.backbone_config.embedding_dim

        self.backbone: Optional[STGCNBackbone] = None
        if self.uses_skeleton:
            self.backbone = STGCNBackbone(self.backbone_config, self.store, derive_rng(seed, _INIT_BACKBONE))
        if self.uses_clinical:
            rng = derive_rng(seed, _INIT_ENCODER)
            _add_linear(self.store, "clinical.fc1", num_features, config.encoder_hidden, rng)
            _add_linear(self.store, "clinical.fc2", config.encoder_hidden, self.embedding_dim, rng)
        if self.is_fused and self.fusion is FusionMode.CROSS_ATTENTION:
            for name in ("fusion.ln_a", "fusion.ln_b"):
                self.store.add(f"{name}.gain", np.ones(self.embedding_dim))
                self.store.add(f"{name}.bias", np.zeros(self.embedding_dim))
        rng = derive_rng(seed, _INIT_HEAD)
        head_in = 2 * self.embedding_dim if self.is_fused else self.embedding_dim
        _add_linear(self.store, "head.fc1", head_in, self.embedding_dim, rng)
        _add_linear(self.store, "head.fc2", self.embedding_dim, config.num_classes, rng)
        logger.debug(
            f"Built {self.stream.value} model ({config.preset.value} preset, fusion {self.fusion.value}, "
            f"{num_features} features, {len(self.store.names())} tensors)"
        )

    @property
    def stream(self) -> ModelStream:
        return ModelStream(self.config.stream)

    @property
    def fusion(self) -> FusionMode:
        return FusionMode(self.config.fusion)

    @property
    def is_fused(self) -> bool:
        return self.stream is ModelStream.FUSED

    @property
    def uses_skeleton(self) -> bool:
        return self.stream is not ModelStream.CLINICAL

    @property
    def uses_clinical(self) -> bool:
        return self.stream is not ModelStream.SKELETON

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def _combine(self, f_s: Optional[Tensor], f_c: Optional[Tensor]) -> Tensor:
        if not self.is_fused:
            return f_s if f_s is not None else f_c
        if self.fusion is FusionMode.CROSS_ATTENTION:
            ln_a = (self.store["fusion.ln_a.gain"], self.store["fusion.ln_a.bias"])
            ln_b = (self.store["fusion.ln_b.gain"], self.store["fusion.ln_b.bias"])
            return fuse_cross_attention(f_s, f_c, ln_a, ln_b)
        return fuse_concat(f_s, f_c)

    def _clinical_embedding(self, features: Optional[np.ndarray], training: bool,
                            rng: Optional[np.random.Generator]) -> Optional[Tensor]:
        if not self.uses_clinical:
            return None
        if features is None:
            raise ContractError("this model needs clinical features")
        return encode_clinical(Tensor(features), self.store, training, self.config.encoder_dropout, rng)

    def head(self, f_s: Optional[Tensor], f_c: Optional[Tensor], training: bool,
             rng: Optional[np.random.Generator]) -> Tensor:
        return classify(self._combine(f_s, f_c), self.store, training, self.config.head_dropout, rng,
                        self.config.head_relu)

    def forward(self, clips: Optional[np.ndarray], features: Optional[np.ndarray], training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """Logits for N clips (N x T x 17 x 3) and their standardized features (N x F)."""
        f_s = None
        if self.uses_skeleton:
            if clips is None:
                raise ContractError("this model needs skeleton clips")
            f_s = self.backbone.forward(Tensor(clips_to_input(clips)), training, rng)
        f_c = self._clinical_embedding(features, training, rng)
        return self.head(f_s, f_c, training, rng)

    def forward_from_activation(self, activation: Tensor, features: Optional[np.ndarray]) -> Tensor:
        """Eval-mode logits computed from a given final-block activation map."""
        f_c = self._clinical_embedding(features, False, None)
        return self.head(ad.global_avg_pool(activation), f_c, False, None)

    def standardize(self, raw_features: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if not self.uses_clinical:
            return None
        if self.standardizer is None:
            raise CheckpointError("model has no standardizer statistics")
        return self.standardizer.transform(raw_features)


def predict(model: GaitSeverityModel, clips: Optional[np.ndarray], raw_features: Optional[np.ndarray],
            batch_size: int = 64) -> Tuple[np.ndarray, np.ndarray]:
    """Eval-mode (0-based class, probabilities) per clip; argmax takes the lowest index on ties."""
    z = model.standardize(raw_features)
    n = len(clips) if clips is not None else len(z)
    probs = []
    for start in range(0, n, batch_size):
        stop = start + batch_size
        logits = model.forward(
            None if clips is None else clips[start:stop],
            None if z is None else z[start:stop],
            training=False,
        )
        probs.append(ad.softmax(logits.data.astype(np.float64)))
    probabilities = np.concatenate(probs) if probs else np.zeros((0, model.num_classes))
    return np.argmax(probabilities, axis=1), probabilities

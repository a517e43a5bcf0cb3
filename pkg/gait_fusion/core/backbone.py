"""ST-GCN skeleton backbone."""

from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..constants import BLOCK_DROPOUT, NUM_COCO_KEYPOINTS, TEMPORAL_KERNEL, Preset
from ..exceptions import ContractError
from ..utils.logger import setup_logger
from . import autodiff as ad
from .autodiff import BatchNormState, ParamStore, Tensor
from .graph import SkeletonGraph, build_coco_graph

logger = setup_logger(__name__)

PREFIX = "backbone"


class BlockSpec(BaseModel):
    in_channels: int = Field(..., ge=1)
    out_channels: int = Field(..., ge=1)
    stride: int = Field(1, ge=1)

    @property
    def has_projection(self) -> bool:
        return self.in_channels != self.out_channels or self.stride != 1


class BackboneConfig(BaseModel):
    """Per-block channel/stride layout"""
    blocks: List[BlockSpec]
    in_channels: int = 3
    temporal_kernel: int = TEMPORAL_KERNEL
    dropout: float = Field(BLOCK_DROPOUT, ge=0.0, lt=1.0)
    preset: Optional[Preset] = None

    @model_validator(mode="after")
    def _chain(self) -> "BackboneConfig":
        if not self.blocks:
            raise ValueError("backbone needs at least one block")
        if self.blocks[0].in_channels != self.in_channels:
            raise ValueError("first block must take the input channels")
        for prev, nxt in zip(self.blocks, self.blocks[1:]):
            if prev.out_channels != nxt.in_channels:
                raise ValueError("block channels must chain")
        if self.temporal_kernel % 2 != 1:
            raise ValueError("temporal kernel must be odd")
        return self

    @property
    def embedding_dim(self) -> int:
        return self.blocks[-1].out_channels

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @classmethod
    def from_widths(cls, widths: Tuple[int, int, int], dropout: float = BLOCK_DROPOUT,
                    preset: Optional[Preset] = None) -> "BackboneConfig":
        """Ten blocks split 4/3/3 over three widths, stride 2 at each width change."""
        c1, c2, c3 = widths
        layout = [(3, c1, 1), (c1, c1, 1), (c1, c1, 1), (c1, c1, 1),
                  (c1, c2, 2), (c2, c2, 1), (c2, c2, 1),
                  (c2, c3, 2), (c3, c3, 1), (c3, c3, 1)]
        return cls(
            blocks=[BlockSpec(in_channels=i, out_channels=o, stride=s) for i, o, s in layout],
            dropout=dropout,
            preset=preset,
        )

    @classmethod
    def for_preset(cls, preset: Preset, dropout: float = BLOCK_DROPOUT) -> "BackboneConfig":
        widths = (64, 128, 256) if Preset(preset) is Preset.PAPER else (8, 16, 32)
        return cls.from_widths(widths, dropout=dropout, preset=Preset(preset))


@dataclass
class BlockParams:
    spatial_w: Tensor
    spatial_b: Tensor
    bn1_gamma: Tensor
    bn1_beta: Tensor
    bn1: BatchNormState
    temporal_w: Tensor
    temporal_b: Tensor
    bn2_gamma: Tensor
    bn2_beta: Tensor
    bn2: BatchNormState
    residual_w: Optional[Tensor] = None
    residual_b: Optional[Tensor] = None


def uniform_fan_in(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def block_prefix(index: int) -> str:
    return f"{PREFIX}.block{index}"


def init_block(store: ParamStore, index: int, spec: BlockSpec, kernel: int, rng: np.random.Generator) -> BlockParams:
    name = block_prefix(index)
    cin, cout = spec.in_channels, spec.out_channels
    spatial_w = store.add(f"{name}.spatial.weight", uniform_fan_in(rng, (cout, cin), cin))
    spatial_b = store.add(f"{name}.spatial.bias", np.zeros(cout))
    bn1 = store.add_batch_norm(f"{name}.bn1", cout)
    temporal_w = store.add(f"{name}.temporal.weight", uniform_fan_in(rng, (cout, cout, kernel), cout * kernel))
    temporal_b = store.add(f"{name}.temporal.bias", np.zeros(cout))
    bn2 = store.add_batch_norm(f"{name}.bn2", cout)
    params = BlockParams(
        spatial_w=spatial_w, spatial_b=spatial_b,
        bn1_gamma=store[f"{name}.bn1.gamma"], bn1_beta=store[f"{name}.bn1.beta"], bn1=bn1,
        temporal_w=temporal_w, temporal_b=temporal_b,
        bn2_gamma=store[f"{name}.bn2.gamma"], bn2_beta=store[f"{name}.bn2.beta"], bn2=bn2,
    )
    if spec.has_projection:
        params.residual_w = store.add(f"{name}.residual.weight", uniform_fan_in(rng, (cout, cin, 1), cin))
        params.residual_b = store.add(f"{name}.residual.bias", np.zeros(cout))
    return params


def stgcn_block_forward(x: Tensor, params: BlockParams, spec: BlockSpec, graph_a_hat: Tensor, training: bool,
                        dropout: float = BLOCK_DROPOUT, rng: Optional[np.random.Generator] = None,
                        use_residual: bool = True) -> Tensor:
    """spatial 1x1 -> graph -> BN -> ReLU -> temporal -> BN -> dropout -> +residual -> ReLU."""
    if x.shape[1] != spec.in_channels:
        raise ContractError(f"block expects {spec.in_channels} channels, got {x.shape[1]}")
    kernel = params.temporal_w.shape[2]
    h = ad.pointwise_linear(x, params.spatial_w, params.spatial_b)
    h = ad.graph_mul(h, graph_a_hat)
    h = ad.batch_norm(h, params.bn1_gamma, params.bn1_beta, params.bn1, training)
    h = ad.relu(h)
    h = ad.temporal_conv(h, params.temporal_w, params.temporal_b, stride=spec.stride, padding=(kernel - 1) // 2)
    h = ad.batch_norm(h, params.bn2_gamma, params.bn2_beta, params.bn2, training)
    h = ad.dropout(h, dropout, training, rng)
    if use_residual:
        if params.residual_w is not None:
            residual = ad.temporal_conv(x, params.residual_w, params.residual_b, stride=spec.stride, padding=0)
        else:
            residual = x
        h = ad.add(h, residual)
    return ad.relu(h)


class STGCNBackbone:
    """Data batch-norm, cascaded ST-GCN blocks and global average pooling"""

    def __init__(self, config: BackboneConfig, store: ParamStore, rng: np.random.Generator,
                 graph: Optional[SkeletonGraph] = None):
        self.config = config
        self.store = store
        self.graph = graph or build_coco_graph()
        self.a_hat = Tensor(self.graph.a_hat)
        v, c = self.graph.num_nodes, config.in_channels
        self.data_bn = store.add_batch_norm(f"{PREFIX}.data_bn", v * c)
        self.blocks = [
            init_block(store, i, spec, config.temporal_kernel, rng)
            for i, spec in enumerate(config.blocks, start=1)
        ]
        logger.debug(f"Built backbone with {config.num_blocks} blocks, embedding {config.embedding_dim}")

    @property
    def embedding_dim(self) -> int:
        return self.config.embedding_dim

    def _data_norm(self, x: Tensor, training: bool) -> Tensor:
        n, c, t, v = x.shape
        h = ad.reshape(ad.transpose(x, (0, 3, 1, 2)), (n, v * c, t))
        h = ad.batch_norm(h, self.store[f"{PREFIX}.data_bn.gamma"], self.store[f"{PREFIX}.data_bn.beta"],
                          self.data_bn, training)
        return ad.transpose(ad.reshape(h, (n, v, c, t)), (0, 2, 3, 1))

    def feature_map(self, x: Tensor, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Final-block activations, (N, C_last, T', V)."""
        if x.data.ndim != 4 or x.shape[1] != self.config.in_channels or x.shape[3] != self.graph.num_nodes:
            raise ContractError(
                f"backbone expects N x {self.config.in_channels} x T x {self.graph.num_nodes}, got {x.shape}")
        h = self._data_norm(x, training)
        if self.a_hat.data.dtype != h.data.dtype:
            self.a_hat = Tensor(self.graph.a_hat, dtype=h.data.dtype)
        for spec, params in zip(self.config.blocks, self.blocks):
            h = stgcn_block_forward(h, params, spec, self.a_hat, training, self.config.dropout, rng)
        return h

    def forward(self, x: Tensor, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
        return ad.global_avg_pool(self.feature_map(x, training, rng))


def backbone_forward(backbone: STGCNBackbone, clips: np.ndarray, training: bool = False,
                     rng: Optional[np.random.Generator] = None) -> Tensor:
    """f_s for a batch of clips given as N x T x V x 3 arrays."""
    return backbone.forward(Tensor(clips_to_input(clips)), training, rng)


def clips_to_input(clips: np.ndarray) -> np.ndarray:
    """N x T x V x C clip arrays -> channels-first N x C x T x V."""
    clips = np.asarray(clips)
    if clips.ndim != 4 or clips.shape[2] != NUM_COCO_KEYPOINTS or clips.shape[3] != 3:
        raise ContractError(f"clips must be N x T x 17 x 3, got {clips.shape}")
    return np.ascontiguousarray(clips.transpose(0, 3, 1, 2))


def set_trainable(store: ParamStore, block_range: Iterable[int], flag: bool, num_blocks: int = 10) -> ParamStore:
    """Toggle the trainable flag of whole backbone blocks (1-based)."""
    blocks = list(block_range)
    if not blocks:
        return store
    for index in blocks:
        if not 1 <= index <= num_blocks:
            raise ContractError(f"block index {index} outside [1, {num_blocks}]")
        store.set_trainable(f"{block_prefix(index)}.", flag)
    logger.debug(f"Set trainable={flag} for backbone blocks {blocks}")
    return store


def freeze_backbone(store: ParamStore) -> ParamStore:
    store.set_trainable(f"{PREFIX}.", False)
    return store

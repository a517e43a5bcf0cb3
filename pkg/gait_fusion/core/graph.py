"""COCO-17 skeleton graph."""

from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..constants import COCO_BONES, NUM_COCO_KEYPOINTS


class SkeletonGraph(BaseModel):
    """Undirected bone graph with its symmetric normalized adjacency"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    num_nodes: int
    edges: List[Tuple[int, int]]
    adjacency: np.ndarray
    a_hat: np.ndarray


def normalized_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """D^(-1/2) (A + I) D^(-1/2)."""
    a_tilde = adjacency + np.eye(adjacency.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]


def build_graph(num_nodes: int, edges: Sequence[Tuple[int, int]]) -> SkeletonGraph:
    adjacency = np.zeros((num_nodes, num_nodes))
    for u, v in edges:
        adjacency[u, v] = adjacency[v, u] = 1.0
    return SkeletonGraph(
        num_nodes=num_nodes,
        edges=list(edges),
        adjacency=adjacency,
        a_hat=normalized_adjacency(adjacency),
    )


def build_coco_graph() -> SkeletonGraph:
    return build_graph(NUM_COCO_KEYPOINTS, COCO_BONES)


def permute_graph(graph: SkeletonGraph, perm: Optional[np.ndarray]) -> SkeletonGraph:
    """Relabel nodes so that new node i is old node perm[i]."""
    if perm is None:
        return graph
    inverse = np.argsort(perm)
    edges = [(int(inverse[u]), int(inverse[v])) for u, v in graph.edges]
    return build_graph(graph.num_nodes, edges)

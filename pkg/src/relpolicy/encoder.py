"""Embedding tables and bipartite message passing over fact/object graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .graph import Batch, FactorGraph, batch as make_batch
from .nn import MlpBlock, SegmentIndex, Tensor
from .schema import Language


class MessagePassingLayer:
    """The four per-layer networks: fact->object messages, object update,
    object->fact messages and (residual) fact update."""

    def __init__(self, store, name, dim, rng):
        self.fact_to_object = MlpBlock(store, f"{name}.msg_v2u", 2 * dim, dim, rng)
        self.object_to_fact = MlpBlock(store, f"{name}.msg_u2v", 3 * dim, dim, rng)
        self.object_update = MlpBlock(store, f"{name}.upd_u", 2 * dim, dim, rng)
        self.fact_update = MlpBlock(store, f"{name}.upd_v", 2 * dim, dim, rng)

    def __call__(self, H, K, E, index):
        """One round. ``E`` is the position table; edges pick rows from it."""
        by_obj, by_fac, by_pos = index["edge_object"], index["edge_factor"], index["edge_position"]
        m_vu = self.fact_to_object.gather((H, by_obj), (K, by_fac))
        H_new = self.object_update.gather((H, None), (nn.segment_max(m_vu, by_obj), None))
        # messages back to facts use the already-updated object states
        m_uv = self.object_to_fact.gather((K, by_fac), (H_new, by_obj), (E, by_pos))
        K_new = K + self.fact_update.gather((K, None), (nn.segment_max(m_uv, by_fac), None))
        return H_new, K_new


@dataclass
class EncoderOutput:
    H: Tensor
    K: Tensor
    batch: Batch

    def objects_of(self, graph: int) -> np.ndarray:
        lo = int(self.batch.object_offsets[graph]) if self.batch.num_graphs else 0
        return self.H.data[lo:lo + int(self.batch.n_objects[graph])]

    def factors_of(self, graph: int) -> np.ndarray:
        off = np.concatenate([[0], np.cumsum(self.batch.n_factors)])
        return self.K.data[off[graph]:off[graph + 1]]


def batch_index(b: Batch) -> dict:
    """Segment indices shared by the encoder and the policy head (cached on the batch)."""
    cache = b.__dict__.setdefault("_index", None)
    if cache is not None:
        return cache
    B, N = b.num_graphs, b.num_objects
    lang = b.language
    n_pred = len(lang.predicates) if lang else int(b.factor_preds.max(initial=-1)) + 1
    n_type = len(lang.types) if lang else int(b.object_types.max(initial=-1)) + 1
    n_pos = max(lang.max_arity, 1) if lang else int(b.edge_position.max(initial=0)) + 1
    ext_graph = np.concatenate([b.object_graph, np.arange(B)])
    cache = {
        "edge_object": SegmentIndex(b.edge_object, N),
        "edge_factor": SegmentIndex(b.edge_factor, b.num_factors),
        "edge_position": SegmentIndex(b.edge_position, n_pos),
        "factor_pred": SegmentIndex(b.factor_preds, n_pred),
        "object_type": SegmentIndex(b.object_types, n_type),
        "object_graph": SegmentIndex(b.object_graph, B),
        "nullary_pred": SegmentIndex(b.nullary_preds, n_pred),
        "nullary": SegmentIndex(b.nullary_graph, B),
        "extended": SegmentIndex(ext_graph, B),
        "extended_mask": b.extended_mask(),
        "nullary_symbols": (np.array([lang.predicate(a).arity == 0
                                      for a in lang.action_symbols], bool)
                            if lang is not None else
                            np.any([m[:, -1] for m in b.masks], axis=0)),
    }
    b._index = cache
    return cache


class Encoder:
    def __init__(self, store, language: Language, dim=16, layers=4, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.language = language
        self.dim = dim
        self.predicate_embedding = store.add(
            "embed.predicate", rng.normal(0.0, 1.0, (len(language.predicates), dim)))
        self.type_embedding = store.add(
            "embed.type", rng.normal(0.0, 1.0, (len(language.types), dim)))
        self.position_embedding = store.add(
            "embed.position", rng.normal(0.0, 1.0, (max(language.max_arity, 1), dim)))
        self.nullary_score = MlpBlock(store, "nullary.score", dim, 1, rng)
        self.nullary_value = MlpBlock(store, "nullary.value", dim, dim, rng)
        self.layers = [MessagePassingLayer(store, f"mp{i}", dim, rng) for i in range(layers)]

    def encode_factors(self, b: Batch, index=None) -> Tensor:
        index = batch_index(b) if index is None else index
        rows = nn.take_rows(self.predicate_embedding, index["factor_pred"])
        return rows * b.factor_values[:, None]

    def aggregate_nullary(self, b: Batch, index=None) -> Tensor:
        """Attention-pooled nullary facts, one row per graph (zeros when none)."""
        index = batch_index(b) if index is None else index
        if len(b.nullary_preds) == 0:
            return Tensor(np.zeros((b.num_graphs, self.dim)))
        k = nn.take_rows(self.predicate_embedding, index["nullary_pred"]) \
            * b.nullary_values[:, None]
        seg = index["nullary"]
        weights = nn.exp(nn.segment_log_softmax(self.nullary_score(k), seg))
        return nn.segment_sum(weights * self.nullary_value(k), seg)

    def encode_objects(self, b: Batch, g: Tensor, index=None) -> Tensor:
        index = batch_index(b) if index is None else index
        return nn.take_rows(self.type_embedding, index["object_type"]) + \
            nn.take_rows(g, index["object_graph"])

    def encode_positions(self, b: Batch, index=None) -> Tensor:
        """Per-edge position embeddings (the layers gather them lazily instead)."""
        index = batch_index(b) if index is None else index
        return nn.take_rows(self.position_embedding, index["edge_position"])

    def encode(self, graphs) -> EncoderOutput:
        b = as_batch(graphs)
        index = batch_index(b)
        K = self.encode_factors(b, index)
        H = self.encode_objects(b, self.aggregate_nullary(b, index), index)
        for layer in self.layers:
            H, K = layer(H, K, self.position_embedding, index)
        return EncoderOutput(H, K, b)


def as_batch(graphs) -> Batch:
    if isinstance(graphs, Batch):
        return graphs
    if isinstance(graphs, FactorGraph):
        return make_batch([graphs])
    return make_batch(graphs)

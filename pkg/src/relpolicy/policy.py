"""Factorized actor head pi(a, u) = pi_A(a) * pi_U(u | a) and the expectation critic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .encoder import batch_index
from .exceptions import IllegalAction, NoLegalAction
from .graph import Batch, FactorGraph
from .nn import Tensor
from .schema import NULL, GroundAction

_LOG_FLOOR = 1e-300


class PolicyHead:
    def __init__(self, store, n_symbols, dim, rng, critic_heads=2):
        bound = 1.0 / np.sqrt(dim)
        self.n_symbols = n_symbols
        self.symbol_weight = store.add(
            "policy.symbol", rng.uniform(-bound, bound, (n_symbols, dim)))
        self.object_weight = store.add("policy.object", rng.uniform(-bound, bound, (dim, 1)))
        self.object_given_symbol = store.add(
            "policy.object_given_symbol", rng.uniform(-bound, bound, (dim, n_symbols)))
        self.q_weights = [
            store.add(f"critic.q{k}", rng.uniform(-bound, bound, (dim, n_symbols)))
            for k in range(critic_heads)
        ]
        self.null_embedding = store.add("policy.null", rng.normal(0.0, 1.0, (1, dim)))

    def __call__(self, H: Tensor, b: Batch) -> "HeadOutput":
        index = batch_index(b)
        seg = index["extended"]
        mask = index["extended_mask"]
        B = b.num_graphs
        ext = nn.concat([H, nn.take_rows(self.null_embedding, np.zeros(B, np.int64))], axis=0)

        # pi_A(a|u) per extended row, pi_U(u) over the rows of each graph. Any row
        # may vote for a nullary symbol; unary symbols only through typed objects.
        vote = mask | index["nullary_symbols"][None, :]
        log_sym_given_obj = nn.log_softmax(nn.matmul(ext, self.symbol_weight.T), vote, axis=1)
        has_symbol = vote.any(axis=1, keepdims=True)
        log_obj = nn.segment_log_softmax(nn.matmul(ext, self.object_weight), seg,
                                         mask=has_symbol)
        p_sym = nn.segment_sum(nn.exp(log_sym_given_obj + log_obj), seg)
        log_obj_given_sym = nn.segment_log_softmax(
            nn.matmul(ext, self.object_given_symbol), seg, mask=mask)
        p_obj_given_sym = nn.exp(log_obj_given_sym)

        q = nn.matmul(ext, self.q_weights[0])
        for w in self.q_weights[1:]:
            q = q + nn.matmul(ext, w)
        q = q * (1.0 / len(self.q_weights))

        log_p_sym = nn.log(p_sym, floor=_LOG_FLOOR)
        q_given_sym = nn.segment_sum(p_obj_given_sym * q, seg)
        value = (p_sym * q_given_sym).sum(axis=1)
        obj_entropy = nn.segment_sum(-(p_obj_given_sym * log_obj_given_sym), seg)
        entropy = (p_sym * (obj_entropy - log_p_sym)).sum(axis=1)
        return HeadOutput(b, p_sym, log_p_sym, p_obj_given_sym, log_obj_given_sym, q,
                          value, entropy)


@dataclass
class HeadOutput:
    """Batched policy/critic tensors. Extended rows are the batch's objects
    followed by one null row per graph."""

    batch: Batch
    p_sym: Tensor
    log_p_sym: Tensor
    p_obj: Tensor
    log_p_obj: Tensor
    q: Tensor
    value: Tensor
    entropy: Tensor

    def log_prob(self, symbols, columns) -> Tensor:
        """Log-probabilities of one (symbol, mask column) choice per graph."""
        symbols = np.asarray(symbols, np.int64)
        rows = np.array([self.batch.extended_row(g, int(c)) for g, c in enumerate(columns)],
                        np.int64)
        g = np.arange(self.batch.num_graphs)
        return self.log_p_sym[g, symbols] + self.log_p_obj[rows, symbols]

    def distributions(self) -> list["ActionDistribution"]:
        b = self.batch
        out = []
        N = b.num_objects
        off = 0
        for g in range(b.num_graphs):
            n = int(b.n_objects[g])
            cols = np.concatenate([np.arange(off, off + n), [N + g]])
            out.append(ActionDistribution(
                p_sym=self.p_sym.data[g].copy(),
                p_obj=self.p_obj.data[cols].T.copy(),
                mask=b.masks[g],
                q=self.q.data[cols].T.copy(),
                value=float(self.value.data[g]),
                entropy=float(self.entropy.data[g]),
                symbols=b.language.action_symbols if b.language else None,
                object_names=b.object_names[g],
            ))
            off += n
        return out


@dataclass
class ActionDistribution:
    """Per-state action distribution.

    ``p_obj`` and ``q`` are ``[|A|, n + 1]`` with the null object in the last
    column; entries outside ``mask`` carry zero probability.
    """

    p_sym: np.ndarray
    p_obj: np.ndarray
    mask: np.ndarray
    q: np.ndarray
    value: float
    entropy: float
    symbols: tuple | None = None
    object_names: tuple = ()

    def joint(self) -> np.ndarray:
        return np.where(self.mask, self.p_sym[:, None] * self.p_obj, 0.0)

    def index(self, action: GroundAction) -> tuple[int, int]:
        s = self.symbols.index(action.symbol)
        c = len(self.object_names) if action.object is NULL else \
            self.object_names.index(action.object)
        if not self.mask[s, c]:
            raise IllegalAction(f"{action} is not legal in this state")
        return s, c

    def action(self, s: int, c: int) -> GroundAction:
        obj = NULL if c == len(self.object_names) else self.object_names[c]
        return GroundAction(self.symbols[s], obj)

    def prob(self, action: GroundAction) -> float:
        s, c = self.index(action)
        return float(self.p_sym[s] * self.p_obj[s, c])

    def log_prob(self, action: GroundAction) -> float:
        s, c = self.index(action)
        return float(np.log(self.p_sym[s]) + np.log(self.p_obj[s, c]))

    def to_dict(self) -> dict:
        joint = self.joint()
        pairs = [
            {"action": str(self.action(s, c)), "p": float(joint[s, c]),
             "p_symbol": float(self.p_sym[s]), "p_object_given_symbol": float(self.p_obj[s, c]),
             "q": float(self.q[s, c])}
            for s, c in zip(*np.nonzero(self.mask))
        ]
        return {"value": self.value, "entropy": self.entropy, "pairs": pairs}


def _pick(p, u):
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, u * c[-1], side="right"), len(p) - 1))


def sample_index(dist: ActionDistribution, rng) -> tuple[int, int, float]:
    p_sym = np.where(dist.mask.any(axis=1), dist.p_sym, 0.0)
    if p_sym.sum() <= 0:
        raise NoLegalAction("no legal action symbol")
    s = _pick(p_sym, rng.random())
    row = np.where(dist.mask[s], dist.p_obj[s], 0.0)
    c = _pick(row, rng.random())
    return s, c, float(np.log(dist.p_sym[s]) + np.log(dist.p_obj[s, c]))


def sample_action(dist: ActionDistribution, rng) -> tuple[GroundAction, float]:
    """Draw a symbol, then an object for it; returns the action and its log-probability."""
    s, c, logp = sample_index(dist, rng)
    return dist.action(s, c), logp


def greedy_index(dist: ActionDistribution) -> tuple[int, int]:
    joint = np.where(dist.mask, dist.p_sym[:, None] * dist.p_obj, -1.0)
    s, c = np.unravel_index(int(np.argmax(joint)), joint.shape)
    return int(s), int(c)


def greedy_action(dist: ActionDistribution) -> GroundAction:
    return dist.action(*greedy_index(dist))


def value_estimate(dist: ActionDistribution) -> float:
    return float((dist.joint() * dist.q).sum())


def entropy(dist: ActionDistribution) -> float:
    p = dist.joint()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def action_index(graph: FactorGraph, action: GroundAction) -> tuple[int, int]:
    lang = graph.language
    s = lang.action_symbols.index(action.symbol)
    c = graph.column_of(action.object)
    if not graph.action_mask[s, c]:
        raise IllegalAction(f"{action} is not legal in this state")
    return s, c

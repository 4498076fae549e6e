from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SplitPlan:
    """Seeded train/test partitions of a domain's instance ids."""

    ids: tuple
    n_train: int = 5
    seeds: tuple = (0, 1, 2, 3, 4)

    def split(self, k: int = 0) -> tuple[list, list]:
        perm = np.random.default_rng(self.seeds[k]).permutation(len(self.ids))
        train = set(perm[: self.n_train].tolist())
        ids = list(self.ids)
        return ([i for j, i in enumerate(ids) if j in train],
                [i for j, i in enumerate(ids) if j not in train])

    def __len__(self):
        return len(self.seeds)


def normalize_scores(agent_returns: dict, baselines: dict) -> dict:
    """IPPC-style per-instance scores in [0, 1].

    ``baselines`` must hold ``"random"`` and ``"noop"`` mean returns. The
    lower bound is the better of the two; the upper bound is the best mean
    return over every agent and baseline given.
    """
    low = np.maximum(np.asarray(baselines["random"], float), np.asarray(baselines["noop"], float))
    everything = [np.asarray(r, float) for r in agent_returns.values()]
    everything += [np.asarray(r, float) for r in baselines.values()]
    high = np.max(np.stack(everything), axis=0)
    span = high - low
    out = {}
    for name, r in agent_returns.items():
        gain = np.maximum(np.asarray(r, float) - low, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[name] = np.where(span > 0, np.minimum(gain / np.where(span > 0, span, 1.0), 1.0),
                                 0.0)
    return out


def permutation_test(scores_a, scores_b, n_perm=1_000_000, rng=None, chunk=20_000):
    """Two-sided permutation test on the difference of means.

    Returns ``(mean(a) - mean(b), p)`` where ``p`` is the fraction of random
    relabelings of the pooled sample whose absolute mean difference is at
    least the observed one.
    """
    a = np.asarray(scores_a, float)
    b = np.asarray(scores_b, float)
    if a.size == 0 or b.size == 0:
        raise ValueError("permutation_test needs two nonempty samples")
    rng = np.random.default_rng(rng)
    observed = a.mean() - b.mean()
    pooled = np.concatenate([a, b])
    na = a.size
    thresh = abs(observed) - 1e-12 * max(1.0, abs(observed))
    hits = 0
    done = 0
    while done < n_perm:
        k = min(chunk, n_perm - done)
        perms = rng.permuted(np.broadcast_to(pooled, (k, pooled.size)), axis=1)
        diff = perms[:, :na].mean(axis=1) - perms[:, na:].mean(axis=1)
        hits += int(np.count_nonzero(np.abs(diff) >= thresh))
        done += k
    return float(observed), hits / n_perm

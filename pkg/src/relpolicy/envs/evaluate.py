"""Baseline policies and batched policy evaluation."""

from __future__ import annotations

import zlib

import numpy as np

from ..graph import build_graph
from ..io import dumps
from ..policy import greedy_index, sample_index
from ..schema import GroundAction, enumerate_actions
from .base import EnvInstance, step


class NoopPolicy:
    name = "noop"

    def act(self, states, rng, instance=None):
        return [GroundAction(s.language.noop) for s in states]


class RandomPolicy:
    """Uniform over the legal ground actions of each state."""

    name = "random"

    def act(self, states, rng, instance=None):
        out = []
        for s in states:
            acts = enumerate_actions(s)
            out.append(acts[int(rng.integers(len(acts)))])
        return out


class ExpertPolicy:
    name = "expert"

    def act(self, states, rng, instance=None):
        from . import dynamics_for

        expert = dynamics_for(instance.domain.dynamics).expert
        return [expert(instance, s) for s in states]


class ModelPolicy:
    """Acts with a :class:`~relpolicy.model.RelationalModel`; ``mode`` is
    ``"greedy"`` (most probable joint action) or ``"sample"``."""

    name = "model"

    def __init__(self, model, mode="greedy"):
        self.model = model
        self.mode = mode

    def act(self, states, rng, instance=None):
        graphs = [build_graph(s) for s in states]
        out = []
        for d in self.model.distributions(graphs):
            s, c = greedy_index(d) if self.mode == "greedy" else sample_index(d, rng)[:2]
            out.append(d.action(s, c))
        return out


def episode_seed(seed, instance_index, episode):
    return np.random.SeedSequence([seed, instance_index, episode])


def run_episodes(policy, instance: EnvInstance, episodes, seed=0, log=None):
    """Run ``episodes`` episodes of one instance in lockstep; returns their returns.

    Episode seeds depend on ``(seed, instance id, episode)`` only.
    """
    instance_index = zlib.crc32(instance.id.encode())
    rngs = [np.random.default_rng(episode_seed(seed, instance_index, e)) for e in range(episodes)]
    policy_rng = np.random.default_rng([seed, instance_index, 1 << 20])
    states = [instance.initial] * episodes
    returns = np.zeros(episodes)
    alive = list(range(episodes))
    t = 0
    while alive:
        actions = policy.act([states[e] for e in alive], policy_rng, instance)
        still = []
        for e, a in zip(alive, actions):
            tr = step(instance, states[e], a, rngs[e], t)
            states[e] = tr.state
            returns[e] += tr.reward
            if log is not None:
                log.write(dumps({"instance": instance.id, "episode": e, "step": t,
                                 "action": a.symbol, "object": a.object, "reward": tr.reward,
                                 "terminated": tr.terminated}) + "\n")
            if not (tr.terminated or tr.truncated):
                still.append(e)
        alive = still
        t += 1
    return returns


def run_episode(policy, instance, seed=0):
    return float(run_episodes(policy, instance, 1, seed)[0])


def evaluate(policy, instances, episodes=100, mode=None, seed=0, log=None) -> dict:
    """Mean/std of returns per instance id: ``{id: {"mean", "std", "episodes"}}``."""
    if mode is not None and isinstance(policy, ModelPolicy):
        policy = ModelPolicy(policy.model, mode)
    out = {}
    for inst in instances:
        r = run_episodes(policy, inst, episodes, seed, log)
        out[inst.id] = {"mean": float(r.mean()), "std": float(r.std()), "episodes": episodes}
    return out

"""Network administration domain: computers fail, rebooting one costs 0.75.

A running computer ``c`` stays up with probability
``base + bonus * (1 + running neighbours) / (1 + neighbours)``; a rebooted
computer is up next step with probability ``reboot_prob``. Reward is the number
of running computers minus the reboot cost when a reboot was issued.
"""

from __future__ import annotations

import numpy as np

from ..schema import GroundAction, Language, StateDb
from .base import HORIZON, Domain, EnvInstance

NAME = "sysadmin"
CONSTANTS = {"base_prob": 0.45, "neighbor_bonus": 0.5, "reboot_cost": 0.75, "reboot_prob": 1.0}
TOPOLOGIES = ("ring", "star", "line")


def language() -> Language:
    return Language.build(
        types=["computer"],
        predicates={"running": ("computer",), "connected": ("computer", "computer")},
        actions={"reboot": ("computer",), "noop": ()},
    )


def make_domain() -> Domain:
    return Domain(NAME, NAME, language(), dict(CONSTANTS))


def topology_edges(n: int, kind: str) -> list[tuple[int, int]]:
    if kind == "ring":
        pairs = [(i, (i + 1) % n) for i in range(n)]
    elif kind == "line":
        pairs = [(i, i + 1) for i in range(n - 1)]
    elif kind == "star":
        pairs = [(0, i) for i in range(1, n)]
    else:
        raise ValueError(f"unknown topology {kind!r}")
    out = []
    for a, b in pairs:
        out += [(a, b), (b, a)]
    return out


def make_instance(n: int, topology: str, domain: Domain | None = None, id=None,
                  running=None, **params) -> EnvInstance:
    domain = make_domain() if domain is None else domain
    names = [f"c{i}" for i in range(n)]
    running = range(n) if running is None else running
    facts = [("running", (names[i],)) for i in running]
    facts += [("connected", (names[a], names[b])) for a, b in topology_edges(n, topology)]
    state = StateDb(domain.language, [(c, "computer") for c in names], facts)
    params = {"topology": topology, **params}
    return EnvInstance(id or f"{NAME}_{topology}_{n}", domain, state, params, HORIZON)


def make_instances(domain: Domain | None = None) -> list[EnvInstance]:
    """Ten instances with 4..13 computers over ring/star/line layouts."""
    domain = make_domain() if domain is None else domain
    return [make_instance(n, TOPOLOGIES[i % 3], domain, id=f"{NAME}_{i:02d}")
            for i, n in enumerate(range(4, 14))]


def _structure(instance: EnvInstance, state: StateDb):
    cached = instance.cache.get("sysadmin")
    if cached is None:
        names = [o.name for o in state.objects]
        index = {c: i for i, c in enumerate(names)}
        neighbors = [[] for _ in names]
        static = {}
        for f in instance.initial.facts:
            if f.predicate == "connected":
                neighbors[index[f.args[0]]].append(index[f.args[1]])
                static[(f.predicate, f.args)] = f.value
        cached = instance.cache["sysadmin"] = (names, neighbors, static)
    return cached


def running_mask(instance: EnvInstance, state: StateDb) -> np.ndarray:
    names, _, _ = _structure(instance, state)
    return np.array([state.holds("running", c) for c in names], bool)


def stay_probabilities(instance: EnvInstance, running: np.ndarray) -> np.ndarray:
    _, neighbors, _ = _structure(instance, instance.initial)
    base = instance.param("base_prob")
    bonus = instance.param("neighbor_bonus")
    out = np.empty(len(running))
    for i, nb in enumerate(neighbors):
        up = sum(running[j] for j in nb)
        out[i] = base + bonus * (1 + up) / (1 + len(nb))
    return out


def transition(instance: EnvInstance, state: StateDb, action: GroundAction, rng):
    names, _, static = _structure(instance, state)
    running = running_mask(instance, state)
    rebooted = action.symbol == "reboot"
    reward = float(running.sum()) - (instance.param("reboot_cost") if rebooted else 0.0)
    u = rng.random(len(names))
    nxt = running & (u < stay_probabilities(instance, running))
    if rebooted:
        i = names.index(action.object)
        nxt[i] = u[i] < instance.param("reboot_prob")
    facts = dict(static)
    for i in np.flatnonzero(nxt):
        facts[("running", (names[i],))] = 1.0
    return state.replace_facts(facts), reward, False


def expert(instance: EnvInstance, state: StateDb) -> GroundAction:
    """Reboot the down computer with the most running neighbours (first by
    object order on ties); no-op when everything runs."""
    names, neighbors, _ = _structure(instance, state)
    running = running_mask(instance, state)
    best, best_up = None, -1
    for i, c in enumerate(names):
        if running[i]:
            continue
        up = sum(running[j] for j in neighbors[i])
        if up > best_up:
            best, best_up = c, up
    return GroundAction("noop") if best is None else GroundAction("reboot", best)

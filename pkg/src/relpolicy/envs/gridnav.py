"""Grid navigation with four nullary move actions.

Each step outside the goal costs 1. Entering the goal ends the episode. After a
step that leaves the agent on a non-goal cell ``c`` it vanishes with
probability ``disappear-prob(c)``; a vanished agent can no longer move and keeps
paying 1 per step until the horizon.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from ..schema import GroundAction, Language, StateDb
from .base import HORIZON, Domain, EnvInstance

NAME = "gridnav"
MOVES = {"north": (0, 1), "south": (0, -1), "east": (1, 0), "west": (-1, 0)}
BLOCK_THRESHOLD = 0.5
SIZES = ((3, 3), (3, 4), (4, 3), (4, 4), (5, 3), (5, 4), (4, 5), (5, 5), (6, 4), (6, 5))


def language() -> Language:
    preds = {"agent-at": ("cell",), "goal": ("cell",), "disappear-prob": (("cell",), True)}
    for d in MOVES:
        preds[f"adjacent-{d}"] = ("cell", "cell")
    return Language.build(types=["cell"], predicates=preds,
                          actions={**{d: () for d in MOVES}, "noop": ()})


def make_domain() -> Domain:
    return Domain(NAME, NAME, language(), {})


def cell(x, y):
    return f"x{x}y{y}"


def make_instance(width, height, probs=None, start=(0, 0), goal=None, domain=None, id=None):
    """``probs`` maps (x, y) -> disappear probability (default 0)."""
    domain = make_domain() if domain is None else domain
    goal = (width - 1, 0) if goal is None else goal
    probs = probs or {}
    objs = [(cell(x, y), "cell") for y in range(height) for x in range(width)]
    facts = [("agent-at", (cell(*start),)), ("goal", (cell(*goal),))]
    for y in range(height):
        for x in range(width):
            for d, (dx, dy) in MOVES.items():
                nx, ny = x + dx, y + dy
                if 0 <= nx < width and 0 <= ny < height:
                    facts.append((f"adjacent-{d}", (cell(x, y), cell(nx, ny))))
    for (x, y), p in sorted(probs.items()):
        if p > 0:
            facts.append(("disappear-prob", (cell(x, y),), float(p)))
    state = StateDb(domain.language, objs, facts)
    params = {"width": width, "height": height}
    return EnvInstance(id or f"{NAME}_{width}x{height}", domain, state, params, HORIZON)


def make_instances(domain: Domain | None = None) -> list[EnvInstance]:
    """Ten grids from 3x3 to 6x5. The bottom row between start and goal is
    dangerous and the danger fades with height."""
    domain = make_domain() if domain is None else domain
    out = []
    for i, (w, h) in enumerate(SIZES):
        rng = np.random.default_rng(1000 + i)
        probs = {}
        for x in range(1, w - 1):
            for y in range(h):
                p = max(0.0, 0.8 - 0.25 * y) + 0.05 * rng.random()
                probs[(x, y)] = round(min(p, 0.95), 3) if p > 0.05 else 0.0
        out.append(make_instance(w, h, probs, domain=domain, id=f"{NAME}_{i:02d}"))
    return out


def _structure(instance: EnvInstance):
    cached = instance.cache.get("gridnav")
    if cached is None:
        adj, probs, goal = {}, {}, None
        for f in instance.initial.facts:
            if f.predicate.startswith("adjacent-"):
                adj[(f.args[0], f.predicate[len("adjacent-"):])] = f.args[1]
            elif f.predicate == "disappear-prob":
                probs[f.args[0]] = f.value
            elif f.predicate == "goal":
                goal = f.args[0]
        static = {k: v for k, v in instance.initial._facts.items() if k[0] != "agent-at"}
        cached = instance.cache["gridnav"] = (adj, probs, goal, static)
    return cached


def agent_cell(state: StateDb):
    for pred, args in state._facts:
        if pred == "agent-at":
            return args[0]
    return None


def transition(instance: EnvInstance, state: StateDb, action: GroundAction, rng):
    adj, probs, goal, static = _structure(instance)
    u = rng.random()
    at = agent_cell(state)
    if at is None:
        return state, -1.0, False
    if at == goal:
        return state, 0.0, True
    if action.symbol in MOVES:
        at = adj.get((at, action.symbol), at)
    facts = dict(static)
    if at == goal:
        facts[("agent-at", (at,))] = 1.0
        return state.replace_facts(facts), -1.0, True
    if u >= probs.get(at, 0.0):
        facts[("agent-at", (at,))] = 1.0
    return state.replace_facts(facts), -1.0, False


def expert(instance: EnvInstance, state: StateDb) -> GroundAction:
    """First move of a shortest path that avoids cells with disappear
    probability above 0.5; no-op when there is none."""
    adj, probs, goal, _ = _structure(instance)
    start = agent_cell(state)
    if start is None or start == goal:
        return GroundAction("noop")
    first = {start: None}
    queue = deque([start])
    while queue:
        c = queue.popleft()
        for d in MOVES:
            n = adj.get((c, d))
            if n is None or n in first:
                continue
            if n != goal and probs.get(n, 0.0) > BLOCK_THRESHOLD:
                continue
            first[n] = d if first[c] is None else first[c]
            if n == goal:
                return GroundAction(first[n])
            queue.append(n)
    return GroundAction("noop")

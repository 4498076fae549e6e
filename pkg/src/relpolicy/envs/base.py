from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from ..exceptions import IllegalAction
from ..schema import GroundAction, Language, StateDb

HORIZON = 40


@dataclass(frozen=True, eq=False)
class Domain:
    name: str
    dynamics: str
    language: Language
    constants: dict = field(default_factory=dict)


@dataclass(eq=False)
class EnvInstance:
    id: str
    domain: Domain
    initial: StateDb
    parameters: dict = field(default_factory=dict)
    horizon: int = HORIZON
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def language(self) -> Language:
        return self.domain.language

    def param(self, name, default=None):
        if name in self.parameters:
            return self.parameters[name]
        return self.domain.constants.get(name, default)


class Transition(NamedTuple):
    state: StateDb
    reward: float
    terminated: bool
    truncated: bool


def is_legal(state: StateDb, action: GroundAction) -> bool:
    lang = state.language
    if action.symbol not in lang.action_symbols:
        return False
    p = lang.predicate(action.symbol)
    if p.arity == 0:
        return action.object is None
    try:
        return state.type_of(action.object) == p.signature[0]
    except KeyError:
        return False


def check_legal(state: StateDb, action: GroundAction):
    if not is_legal(state, action):
        raise IllegalAction(f"{action} is not a legal action")


class Env:
    """One episode lane over an instance: ``reset`` then ``step`` until done.

    Dynamics are looked up from the domain's ``dynamics`` name.
    """

    def __init__(self, instance: EnvInstance, seed=None):
        from . import dynamics_for

        self.instance = instance
        self.dynamics = dynamics_for(instance.domain.dynamics)
        self.rng = np.random.default_rng(seed)
        self.state = None
        self.t = 0

    def reset(self, seed=None) -> StateDb:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = reset(self.instance)
        self.t = 0
        return self.state

    def step(self, action: GroundAction) -> Transition:
        tr = step(self.instance, self.state, action, self.rng, self.t)
        self.state = tr.state
        self.t += 1
        return tr


def reset(instance: EnvInstance, seed: Any = None) -> StateDb:
    """Initial state of an instance; identical for every seed."""
    return instance.initial


def step(instance: EnvInstance, state: StateDb, action: GroundAction, rng, t: int = 0):
    """Advance one step; ``t`` is the number of steps already taken this episode."""
    from . import dynamics_for

    dyn = dynamics_for(instance.domain.dynamics)
    check_legal(state, action)
    nxt, reward, terminated = dyn.transition(instance, state, action, rng)
    truncated = (not terminated) and t + 1 >= instance.horizon
    return Transition(nxt, float(reward), bool(terminated), bool(truncated))

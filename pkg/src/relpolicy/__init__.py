"""Inductive graph neural policies for relational MDPs."""

from .graph import Batch, FactorGraph, batch, build_graph, unbatch
from .model import RelationalModel
from .schema import (
    NULL,
    GroundAction,
    GroundFact,
    Language,
    ObjectRef,
    Predicate,
    StateDb,
    assert_facts,
    enumerate_actions,
    validate_language,
)

__version__ = "0.1.0"

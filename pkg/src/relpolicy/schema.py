"""Typed relational vocabulary, state databases and ground actions.

States follow the closed-world convention: a :class:`StateDb` stores only the
true boolean atoms plus the current value of every asserted function fact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

from .exceptions import (
    LanguageError,
    TypeMismatch,
    UnknownObject,
    UnknownPredicate,
)

NULL = None  # the null object bound by nullary actions


@dataclass(frozen=True)
class Predicate:
    name: str
    signature: tuple[str, ...] = ()
    is_function: bool = False
    is_action: bool = False

    @property
    def arity(self) -> int:
        return len(self.signature)


class Violation(NamedTuple):
    code: str
    message: str


@dataclass(frozen=True)
class Language:
    """The vocabulary of a relational domain.

    ``predicates`` keeps declaration order; that order fixes predicate ids in the
    graph encoding and the order in which actions are enumerated.
    """

    types: tuple[str, ...]
    predicates: tuple[Predicate, ...]
    noop: str = "noop"
    _pred_index: Mapping[str, int] = field(init=False, repr=False, compare=False)
    _type_index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        object.__setattr__(self, "predicates", tuple(self.predicates))
        object.__setattr__(
            self, "_pred_index", {p.name: i for i, p in enumerate(self.predicates)}
        )
        object.__setattr__(self, "_type_index", {t: i for i, t in enumerate(self.types)})

    @classmethod
    def build(cls, types, predicates, actions=(), noop="noop"):
        """Convenience constructor.

        ``predicates`` maps name -> signature or (signature, is_function);
        ``actions`` maps name -> signature. The no-op is appended when absent.
        """
        preds = []
        for name, spec in dict(predicates).items():
            if isinstance(spec, tuple) and len(spec) == 2 and isinstance(spec[1], bool):
                sig, is_fn = spec
            else:
                sig, is_fn = spec, False
            preds.append(Predicate(name, tuple(sig), is_function=is_fn))
        actions = dict(actions)
        if noop not in actions:
            actions[noop] = ()
        for name, sig in actions.items():
            preds.append(Predicate(name, tuple(sig), is_action=True))
        return cls(tuple(types), tuple(preds), noop=noop)

    @property
    def action_symbols(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.predicates if p.is_action)

    @property
    def max_arity(self) -> int:
        return max((p.arity for p in self.predicates), default=0)

    def predicate(self, name: str) -> Predicate:
        try:
            return self.predicates[self._pred_index[name]]
        except KeyError:
            raise UnknownPredicate(f"unknown predicate {name!r}") from None

    def predicate_id(self, name: str) -> int:
        return self._pred_index[name]

    def type_id(self, name: str) -> int:
        return self._type_index[name]

    def action_id(self, name: str) -> int:
        return self.action_symbols.index(name)

    def fingerprint(self) -> tuple:
        """Hashable summary used to detect graphs built from different vocabularies."""
        return (self.types, tuple((p.name, p.signature, p.is_function, p.is_action)
                                  for p in self.predicates), self.noop)


def validate_language(lang: Language) -> list[Violation]:
    """Return every invariant violation of ``lang``; an empty list means valid."""
    out = []
    names = [p.name for p in lang.predicates]
    if len(set(names)) != len(names):
        out.append(Violation("BadSignature", "duplicate predicate names"))
    types = set(lang.types)
    for p in lang.predicates:
        if p.arity != len(p.signature):  # pragma: no cover - arity derives from signature
            out.append(Violation("BadSignature", f"{p.name}: arity/signature mismatch"))
        for t in p.signature:
            if t not in types:
                out.append(Violation("UnknownType", f"{p.name}: undeclared type {t!r}"))
        if p.is_action and p.arity > 1:
            out.append(Violation("BadActionArity", f"{p.name}: action arity {p.arity} > 1"))
        if p.is_action and p.is_function:
            out.append(Violation("BadSignature", f"{p.name}: an action cannot be a function"))
    noop = next((p for p in lang.predicates if p.name == lang.noop), None)
    if noop is None or not noop.is_action or noop.arity != 0:
        out.append(Violation("MissingNoop", f"no nullary action symbol {lang.noop!r}"))
    return out


def check_language(lang: Language) -> Language:
    violations = validate_language(lang)
    if violations:
        raise LanguageError(violations)
    return lang


class ObjectRef(NamedTuple):
    name: str
    type_name: str


class GroundFact(NamedTuple):
    predicate: str
    args: tuple[str, ...] = ()
    value: float = 1.0


class GroundAction(NamedTuple):
    symbol: str
    object: str | None = NULL

    def __str__(self):
        return f"{self.symbol}({'' if self.object is None else self.object})"


class StateDb:
    """Immutable set of objects and true facts over a :class:`Language`.

    Mutation goes through :meth:`assert_facts`, which returns a new database.
    """

    __slots__ = ("language", "_objects", "_types", "_facts", "_hash")

    def __init__(self, language: Language, objects: Iterable = (), facts: Iterable = ()):
        self.language = language
        objs = []
        types = {}
        for o in objects:
            o = ObjectRef(*o)
            if o.name in types:
                raise ValueError(f"duplicate object name {o.name!r}")
            if o.type_name not in language._type_index:
                raise TypeMismatch(f"object {o.name!r} has undeclared type {o.type_name!r}")
            types[o.name] = o.type_name
            objs.append(o)
        self._objects = tuple(objs)
        self._types = types
        self._facts = {}
        self._hash = None
        self._add(facts)

    def _add(self, facts):
        lang = self.language
        for f in facts:
            f = GroundFact(f[0], tuple(f[1]) if len(f) > 1 else (), float(f[2]) if len(f) > 2 else 1.0)
            pred = lang.predicate(f.predicate)
            if len(f.args) != pred.arity:
                raise TypeMismatch(
                    f"{f.predicate} takes {pred.arity} arguments, got {len(f.args)}")
            for arg, want in zip(f.args, pred.signature):
                have = self._types.get(arg)
                if have is None:
                    raise UnknownObject(f"{f.predicate}{f.args}: unknown object {arg!r}")
                if have != want:
                    raise TypeMismatch(
                        f"{f.predicate}{f.args}: {arg!r} is {have}, expected {want}")
            if not pred.is_function and f.value != 1.0:
                raise TypeMismatch(f"boolean atom {f.predicate}{f.args} must have value 1.0")
            self._facts[(f.predicate, f.args)] = f.value

    @property
    def objects(self) -> tuple[ObjectRef, ...]:
        return self._objects

    @property
    def facts(self) -> tuple[GroundFact, ...]:
        return tuple(GroundFact(p, a, v) for (p, a), v in self._facts.items())

    def type_of(self, name: str) -> str:
        return self._types[name]

    def holds(self, predicate: str, *args: str) -> bool:
        return (predicate, tuple(args)) in self._facts

    def value(self, predicate: str, *args: str, default: float = 0.0) -> float:
        return self._facts.get((predicate, tuple(args)), default)

    def assert_facts(self, facts: Iterable) -> "StateDb":
        new = StateDb.__new__(StateDb)
        new.language = self.language
        new._objects = self._objects
        new._types = self._types
        new._facts = dict(self._facts)
        new._hash = None
        new._add(facts)
        return new

    def replace_facts(self, facts: Mapping) -> "StateDb":
        """Same objects, new fact table ``{(predicate, args): value}``.

        No validation: only for dynamics that build facts from already-checked
        pieces of an existing state.
        """
        new = StateDb.__new__(StateDb)
        new.language = self.language
        new._objects = self._objects
        new._types = self._types
        new._facts = dict(facts)
        new._hash = None
        return new

    def _key(self):
        return (self._objects, frozenset(self._facts.items()))

    def __eq__(self, other):
        if not isinstance(other, StateDb):
            return NotImplemented
        return self.language == other.language and self._key() == other._key()

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self._key())
        return self._hash

    def __len__(self):
        return len(self._facts)

    def __repr__(self):
        return f"StateDb({len(self._objects)} objects, {len(self._facts)} facts)"

    def to_dict(self) -> dict:
        return {
            "objects": [[o.name, o.type_name] for o in self._objects],
            "facts": [[p, list(a), v] for (p, a), v in self._facts.items()],
        }

    @classmethod
    def from_dict(cls, language: Language, d: Mapping) -> "StateDb":
        return cls(language, [tuple(o) for o in d["objects"]],
                   [(p, tuple(a), v) for p, a, v in d["facts"]])


def assert_facts(db: StateDb, facts: Iterable) -> StateDb:
    """Return ``db`` extended with ``facts``.

    Boolean atoms are idempotent; a function fact overwrites its previous value.
    """
    return db.assert_facts(facts)


def enumerate_actions(db: StateDb, lang: Language | None = None) -> list[GroundAction]:
    lang = db.language if lang is None else lang
    out = []
    for p in lang.predicates:
        if not p.is_action:
            continue
        if p.arity == 0:
            out.append(GroundAction(p.name, NULL))
        else:
            want = p.signature[0]
            out.extend(GroundAction(p.name, o.name) for o in db.objects if o.type_name == want)
    return out

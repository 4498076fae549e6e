import pytest
from hypothesis import given, settings, strategies as st

from relpolicy import GroundAction, Language, Predicate, StateDb, assert_facts, enumerate_actions
from relpolicy.exceptions import LanguageError, TypeMismatch, UnknownObject, UnknownPredicate
from relpolicy.schema import check_language, validate_language

from factories import LANG


def codes(lang):
    return sorted(v.code for v in validate_language(lang))


def test_valid_language_has_no_violations():
    assert validate_language(LANG) == []
    assert LANG.action_symbols == ("poke", "grab", "wait", "noop")
    assert LANG.max_arity == 3


def test_every_violation_is_reported():
    lang = Language(
        ("t",),
        (Predicate("p", ("u",)), Predicate("move", ("t", "t"), is_action=True)),
    )
    assert codes(lang) == ["BadActionArity", "MissingNoop", "UnknownType"]
    with pytest.raises(LanguageError) as info:
        check_language(lang)
    assert len(info.value.violations) == 3


def test_noop_must_be_nullary_action():
    lang = Language(("t",), (Predicate("noop", ("t",), is_action=True),))
    assert "MissingNoop" in codes(lang)


def test_state_type_checks():
    with pytest.raises(TypeMismatch):
        StateDb(LANG, [("a", "item")], [("on", ("a",))])
    with pytest.raises(UnknownObject):
        StateDb(LANG, [("a", "node")], [("near", ("a", "b"))])
    with pytest.raises(UnknownPredicate):
        StateDb(LANG, [("a", "node")], [("flies", ("a",))])
    with pytest.raises(TypeMismatch):
        StateDb(LANG, [("a", "node")], [("on", ("a", "a"))])
    with pytest.raises(TypeMismatch, match="boolean"):
        StateDb(LANG, [("a", "node")], [("on", ("a",), 0.5)])
    with pytest.raises(TypeMismatch):
        StateDb(LANG, [("a", "blob")])


def test_assert_facts_is_persistent_and_function_facts_overwrite():
    db = StateDb(LANG, [("a", "node"), ("x", "item")], [("weight", ("x",), 2.0)])
    db2 = assert_facts(db, [("on", ("a",)), ("weight", ("x",), 5.0)])
    assert not db.holds("on", "a") and db2.holds("on", "a")
    assert db.value("weight", "x") == 2.0 and db2.value("weight", "x") == 5.0
    assert assert_facts(db2, [("on", ("a",))]) == db2


def test_enumerate_actions_order_and_types():
    db = StateDb(LANG, [("n0", "node"), ("i0", "item"), ("n1", "node")])
    assert enumerate_actions(db) == [
        GroundAction("poke", "n0"), GroundAction("poke", "n1"), GroundAction("grab", "i0"),
        GroundAction("wait"), GroundAction("noop")]
    assert str(GroundAction("poke", "n0")) == "poke(n0)"


def test_round_trip_through_dict():
    db = StateDb(LANG, [("n0", "node"), ("i0", "item")],
                 [("holds", ("n0", "i0")), ("level", (), -1.5), ("alarm", ())])
    again = StateDb.from_dict(LANG, db.to_dict())
    assert again == db and hash(again) == hash(db)


names = st.lists(st.sampled_from(["a", "b", "c", "d"]), unique=True, min_size=1)


@settings(max_examples=50, deadline=None)
@given(names, st.data())
def test_fact_order_does_not_change_the_state(objs, data):
    facts = [("near", (x, y)) for x in objs for y in objs if data.draw(st.booleans())]
    db1 = StateDb(LANG, [(o, "node") for o in objs], facts)
    db2 = StateDb(LANG, [(o, "node") for o in objs], list(reversed(facts)))
    assert db1 == db2
    assert len(db1) == len(set(facts))

"""Domain/instance documents and line-delimited record files.

A domain document is JSON::

    {
      "format": "relpolicy-domain/1",
      "domain": {
        "name": str, "dynamics": str, "noop": str,
        "types": [str, ...],
        "predicates": [{"name": str, "signature": [str, ...],
                        "function": bool, "action": bool}, ...],
        "constants": {str: number, ...}
      },
      "instances": [
        {"id": str, "horizon": int,
         "objects": [[name, type], ...],
         "facts": [[predicate, [arg, ...], value], ...],
         "parameters": {str: number | str, ...}},
        ...
      ]
    }

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from .exceptions import ConfigError
from .schema import Language, Predicate, StateDb, check_language

DOMAIN_FORMAT = "relpolicy-domain/1"

_NAME = {"type": "string", "minLength": 1}
_PREDICATE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "signature"],
    "properties": {
        "name": _NAME,
        "signature": {"type": "array", "items": _NAME},
        "function": {"type": "boolean"},
        "action": {"type": "boolean"},
    },
}
LANGUAGE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["types", "predicates"],
    "properties": {
        "types": {"type": "array", "items": _NAME},
        "predicates": {"type": "array", "items": _PREDICATE},
        "noop": _NAME,
    },
}
DOMAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["format", "domain", "instances"],
    "properties": {
        "format": {"const": DOMAIN_FORMAT},
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name", "dynamics", "types", "predicates"],
            "properties": {
                "name": _NAME,
                "dynamics": _NAME,
                "noop": _NAME,
                "types": LANGUAGE_SCHEMA["properties"]["types"],
                "predicates": LANGUAGE_SCHEMA["properties"]["predicates"],
                "constants": {"type": "object",
                              "additionalProperties": {"type": "number"}},
            },
        },
        "instances": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "objects", "facts"],
                "properties": {
                    "id": _NAME,
                    "horizon": {"type": "integer", "minimum": 1},
                    "objects": {"type": "array", "items": {
                        "type": "array", "prefixItems": [_NAME, _NAME],
                        "minItems": 2, "maxItems": 2}},
                    "facts": {"type": "array", "items": {
                        "type": "array",
                        "prefixItems": [_NAME, {"type": "array", "items": _NAME},
                                        {"type": "number"}],
                        "minItems": 2, "maxItems": 3}},
                    "parameters": {"type": "object", "additionalProperties": {
                        "type": ["number", "string"]}},
                },
            },
        },
    },
}


def language_to_dict(lang: Language) -> dict:
    return {
        "types": list(lang.types),
        "predicates": [{"name": p.name, "signature": list(p.signature),
                        "function": p.is_function, "action": p.is_action}
                       for p in lang.predicates],
        "noop": lang.noop,
    }


def language_from_dict(d: dict) -> Language:
    try:
        jsonschema.validate(d, LANGUAGE_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"bad language document: {e.message}") from None
    return check_language(Language(
        tuple(d["types"]),
        tuple(Predicate(p["name"], tuple(p["signature"]), p.get("function", False),
                        p.get("action", False)) for p in d["predicates"]),
        noop=d.get("noop", "noop"),
    ))


def validate_document(doc: dict) -> dict:
    try:
        jsonschema.validate(doc, DOMAIN_SCHEMA, cls=jsonschema.Draft202012Validator)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"invalid domain document at {where}: {e.message}") from None
    return doc


def state_to_record(db: StateDb) -> dict:
    return db.to_dict()


def state_from_record(lang: Language, rec: dict) -> StateDb:
    return StateDb.from_dict(lang, rec)


def dumps(obj) -> str:
    """Canonical JSON used for every file this package writes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_jsonl(path, records):
    path = Path(path)
    with path.open("w") as fh:
        for r in records:
            fh.write(dumps(r) + "\n")
    return path


def read_jsonl(path):
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]

"""Environments, built-in domains, baselines, evaluation and scoring."""

from __future__ import annotations

import json
from pathlib import Path
from types import ModuleType

from ..exceptions import ConfigError
from ..io import DOMAIN_FORMAT, dumps, validate_document
from ..schema import Language, Predicate, StateDb, check_language
from . import gridnav, sysadmin
from .base import HORIZON, Domain, Env, EnvInstance, Transition, is_legal, reset, step
from .evaluate import (
    ExpertPolicy,
    ModelPolicy,
    NoopPolicy,
    RandomPolicy,
    evaluate,
    run_episode,
)
from .scoring import SplitPlan, normalize_scores, permutation_test

_DYNAMICS: dict[str, ModuleType] = {"sysadmin": sysadmin, "gridnav": gridnav}
BUILTIN = ("sysadmin", "gridnav")


def dynamics_for(name: str) -> ModuleType:
    try:
        return _DYNAMICS[name]
    except KeyError:
        raise ConfigError(f"unknown dynamics {name!r}; known: {sorted(_DYNAMICS)}") from None


def builtin(name: str) -> tuple[Domain, list[EnvInstance]]:
    mod = dynamics_for(name)
    domain = mod.make_domain()
    return domain, mod.make_instances(domain)


def domain_to_document(domain: Domain, instances) -> dict:
    lang = domain.language
    return {
        "format": DOMAIN_FORMAT,
        "domain": {
            "name": domain.name,
            "dynamics": domain.dynamics,
            "noop": lang.noop,
            "types": list(lang.types),
            "predicates": [{"name": p.name, "signature": list(p.signature),
                            "function": p.is_function, "action": p.is_action}
                           for p in lang.predicates],
            "constants": dict(domain.constants),
        },
        "instances": [
            {"id": inst.id, "horizon": inst.horizon,
             "objects": [list(o) for o in inst.initial.objects],
             "facts": [[f.predicate, list(f.args), f.value] for f in inst.initial.facts],
             "parameters": dict(inst.parameters)}
            for inst in instances
        ],
    }


def domain_from_document(doc: dict) -> tuple[Domain, list[EnvInstance]]:
    validate_document(doc)
    d = doc["domain"]
    dynamics_for(d["dynamics"])
    lang = check_language(Language(
        tuple(d["types"]),
        tuple(Predicate(p["name"], tuple(p["signature"]), p.get("function", False),
                        p.get("action", False)) for p in d["predicates"]),
        noop=d.get("noop", "noop"),
    ))
    domain = Domain(d["name"], d["dynamics"], lang, dict(d.get("constants", {})))
    instances = []
    for rec in doc["instances"]:
        state = StateDb(lang, [tuple(o) for o in rec["objects"]],
                        [(f[0], tuple(f[1]), *f[2:]) for f in rec["facts"]])
        instances.append(EnvInstance(rec["id"], domain, state, dict(rec.get("parameters", {})),
                                     rec.get("horizon", HORIZON)))
    ids = [i.id for i in instances]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate instance ids")
    return domain, instances


def save_domain(path, domain: Domain, instances) -> Path:
    path = Path(path)
    path.write_text(json.dumps(domain_to_document(domain, instances), indent=1) + "\n")
    return path


def load_domain(spec) -> tuple[Domain, list[EnvInstance]]:
    """Load a domain document from a path, or a built-in domain by name."""
    if str(spec) in BUILTIN:
        return builtin(str(spec))
    path = Path(spec)
    if not path.is_file():
        raise ConfigError(f"domain file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    return domain_from_document(doc)


__all__ = [
    "BUILTIN", "Domain", "Env", "EnvInstance", "ExpertPolicy", "HORIZON", "ModelPolicy",
    "NoopPolicy", "RandomPolicy", "SplitPlan", "Transition", "builtin", "domain_from_document",
    "domain_to_document", "dumps", "dynamics_for", "evaluate", "is_legal", "load_domain",
    "normalize_scores", "permutation_test", "reset", "run_episode", "save_domain", "step",
]

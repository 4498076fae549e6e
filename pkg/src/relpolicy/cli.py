"""Command-line entry point: ``relpolicy --mode {train,imitate,eval,score,inspect,collect-expert}``.

Exit codes: 0 on success, 2 for configuration problems (bad flags, missing
or corrupt files, illegal labels), 3 for numeric failures during training.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .envs import (
    ExpertPolicy,
    ModelPolicy,
    NoopPolicy,
    RandomPolicy,
    SplitPlan,
    dynamics_for,
    evaluate,
    load_domain,
    normalize_scores,
    permutation_test,
    step,
)
from .envs.evaluate import episode_seed
from .exceptions import ConfigError, NonFiniteGrad, NonFiniteLoss, RelPolicyError
from .graph import build_graph
from .io import dumps, language_to_dict, state_from_record, state_to_record
from .model import RelationalModel
from .schema import GroundAction
from .training import PpoConfig, PpoTrainer, imitation_update, label_indices

log = logging.getLogger("relpolicy")

DATASET_FORMAT = "relpolicy-dataset/1"
MODES = ("train", "imitate", "eval", "score", "inspect", "collect-expert")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relpolicy", description=__doc__.splitlines()[0])
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--domain", default="sysadmin",
                   help="built-in domain name or path to a domain document")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.add_argument("--checkpoint", type=Path, action="append",
                   help="model checkpoint directory (repeatable for score)")
    p.add_argument("--episodes", type=int, default=None,
                   help="evaluation episodes per instance (100), or expert episodes (10)")
    p.add_argument("--dataset", type=Path)
    p.add_argument("--n-train", type=int, default=None,
                   help="training instances in the split (default: half, at most 5)")
    p.add_argument("--agent", choices=("model", "noop", "random", "expert"), default=None)
    p.add_argument("--instance", default=None, help="instance id for inspect")
    p.add_argument("--version", action="version", version=f"relpolicy {__version__}")

    m = p.add_argument_group("model")
    m.add_argument("--dim", type=int, default=16)
    m.add_argument("--layers", type=int, default=4)
    m.add_argument("--critic-heads", type=int, default=2)

    t = p.add_argument_group("ppo")
    defaults = PpoConfig()
    t.add_argument("--total-steps", type=int, default=defaults.total_steps)
    t.add_argument("--anneal-every", type=int, default=defaults.anneal_every)
    t.add_argument("--rollout-steps", type=int, default=defaults.rollout_steps)
    t.add_argument("--num-envs", type=int, default=defaults.num_envs)
    t.add_argument("--update-epochs", type=int, default=defaults.update_epochs)
    t.add_argument("--minibatch-size", type=int, default=defaults.minibatch_size)

    i = p.add_argument_group("imitation")
    i.add_argument("--epochs", type=int, default=1000)
    i.add_argument("--lr", type=float, default=1e-3)
    return p


# ------------------------------------------------------------------ helpers

def git_describe() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def resolve_split(instances, split_seed, n_train=None):
    ids = tuple(i.id for i in instances)
    if n_train is None:
        n_train = min(5, max(1, len(ids) // 2))
    if not 0 < n_train <= len(ids):
        raise ConfigError(f"--n-train must be in 1..{len(ids)}, got {n_train}")
    train_ids, test_ids = SplitPlan(ids, n_train, (split_seed,)).split(0)
    by_id = {i.id: i for i in instances}
    return [by_id[i] for i in train_ids], [by_id[i] for i in test_ids]


def require_out(args) -> Path:
    if args.out is None:
        raise ConfigError(f"--mode {args.mode} needs --out")
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def ppo_config(args) -> PpoConfig:
    return PpoConfig(total_steps=args.total_steps, anneal_every=args.anneal_every,
                     rollout_steps=args.rollout_steps, num_envs=args.num_envs,
                     update_epochs=args.update_epochs, minibatch_size=args.minibatch_size)


def new_model(args, language):
    if min(args.dim, args.layers, args.critic_heads) < 1:
        raise ConfigError("--dim, --layers and --critic-heads must be positive")
    return RelationalModel(language, dim=args.dim, layers=args.layers,
                           critic_heads=args.critic_heads, seed=args.seed)


def load_model(path, language) -> RelationalModel:
    if not (Path(path) / "manifest.json").is_file():
        raise ConfigError(f"no checkpoint at {path}")
    model = RelationalModel.load(path)
    if model.language.fingerprint() != language.fingerprint():
        raise ConfigError(f"checkpoint {path} was trained on a different language")
    return model


def write_manifest(out: Path, args, extra: dict):
    doc = {
        "mode": args.mode,
        "args": {k: (str(v) if isinstance(v, Path) else
                     [str(x) for x in v] if isinstance(v, list) else v)
                 for k, v in sorted(vars(args).items())},
        "seeds": {"seed": args.seed, "split_seed": args.split_seed},
        "code": {"version": __version__, "git": git_describe()},
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def format_table(header, rows) -> str:
    cells = [list(map(str, header))] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in
                               enumerate(zip(r, widths))) for r in cells)


def write_tsv(path, header, rows):
    with Path(path).open("w") as fh:
        fh.write("\t".join(header) + "\n")
        for r in rows:
            fh.write("\t".join(_fmt(c, full=True) for c in r) + "\n")


def _fmt(c, full=False):
    if isinstance(c, float):
        return repr(c) if full else f"{c:.4f}"
    return str(c)


# ------------------------------------------------------------------ expert data

def collect_expert(domain, instances, episodes=10, seed=0):
    """Roll out the scripted expert; yields dataset records in a fixed order."""
    expert = dynamics_for(domain.dynamics).expert
    for k, inst in enumerate(instances):
        for e in range(episodes):
            rng = np.random.default_rng(episode_seed(seed, k, e))
            state, t = inst.initial, 0
            while True:
                a = expert(inst, state)
                yield {"instance": inst.id, "episode": e, "step": t,
                       "state": state_to_record(state),
                       "action": {"symbol": a.symbol, "object": a.object}}
                tr = step(inst, state, a, rng, t)
                state, t = tr.state, t + 1
                if tr.terminated or tr.truncated:
                    break


def write_dataset(path, domain, records) -> int:
    n = 0
    with Path(path).open("w") as fh:
        fh.write(dumps({"format": DATASET_FORMAT, "domain": domain.name,
                        "language": language_to_dict(domain.language)}) + "\n")
        for r in records:
            fh.write(dumps(r) + "\n")
            n += 1
    return n


def read_dataset(path, language):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"dataset not found: {path}")
    with path.open() as fh:
        lines = [json.loads(x) for x in fh if x.strip()]
    if not lines or lines[0].get("format") != DATASET_FORMAT:
        raise ConfigError(f"{path}: not a {DATASET_FORMAT} file")
    if lines[0]["language"] != language_to_dict(language):
        raise ConfigError(f"{path}: dataset language does not match the domain")
    states, actions = [], []
    for r in lines[1:]:
        states.append(state_from_record(language, r["state"]))
        actions.append(GroundAction(r["action"]["symbol"], r["action"]["object"]))
    return states, actions


def agreement(model, states, actions) -> float:
    if not states:
        return float("nan")
    dists = model.distributions([build_graph(s) for s in states])
    from .policy import greedy_action
    return float(np.mean([greedy_action(d) == a for d, a in zip(dists, actions)]))


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    out = require_out(args)
    domain, instances = load_domain(args.domain)
    train, test = resolve_split(instances, args.split_seed, args.n_train)
    cfg = ppo_config(args)
    model = new_model(args, domain.language)
    write_manifest(out, args, {"ppo": asdict(cfg), "train": [i.id for i in train],
                               "test": [i.id for i in test]})
    ckpt = out / "checkpoints"
    with (out / "metrics.jsonl").open("w") as fh:
        def on_metrics(rec):
            fh.write(dumps(rec) + "\n")
            fh.flush()

        def on_stage_end(stage, samples):
            model.save(ckpt / f"stage-{stage}", {"samples": samples, "stage": stage})

        trainer = PpoTrainer(model, train, cfg, seed=args.seed)
        trainer.run(on_metrics=on_metrics, on_stage_end=on_stage_end)
    model.save(ckpt / "final", {"samples": trainer.samples, "stage": cfg.stage(trainer.samples)})
    print(f"trained {trainer.samples} samples; checkpoint {ckpt / 'final'}")
    return 0


def cmd_collect_expert(args) -> int:
    domain, instances = load_domain(args.domain)
    train, _ = resolve_split(instances, args.split_seed, args.n_train)
    path = args.dataset or (require_out(args) / "expert.jsonl")
    path.parent.mkdir(parents=True, exist_ok=True)
    n = write_dataset(path, domain, collect_expert(domain, train, args.episodes or 10, args.seed))
    print(f"wrote {n} samples to {path}")
    return 0


def cmd_imitate(args) -> int:
    out = require_out(args)
    domain, instances = load_domain(args.domain)
    train, test = resolve_split(instances, args.split_seed, args.n_train)
    if args.dataset is not None:
        states, actions = read_dataset(args.dataset, domain.language)
    else:
        recs = list(collect_expert(domain, train, args.episodes or 10, args.seed))
        write_dataset(out / "expert.jsonl", domain, recs)
        states, actions = read_dataset(out / "expert.jsonl", domain.language)
    if not states:
        raise ConfigError("empty dataset")
    graphs = [build_graph(s) for s in states]
    label_indices(graphs, actions)
    held = list(collect_expert(domain, test, 10, args.seed + 1)) if test else []
    held_states = [state_from_record(domain.language, r["state"]) for r in held]
    held_actions = [GroundAction(r["action"]["symbol"], r["action"]["object"]) for r in held]

    model = new_model(args, domain.language)
    write_manifest(out, args, {"train": [i.id for i in train], "test": [i.id for i in test]})
    curve = imitation_update(model, graphs, actions, epochs=args.epochs, lr=args.lr)
    model.save(out / "checkpoints" / "final", {"samples": len(states), "epochs": args.epochs})
    report = {"samples": len(states), "epochs": args.epochs,
              "final_nll": curve[-1] if curve else None,
              "train_agreement": agreement(model, states, actions),
              "heldout_samples": len(held_states),
              "heldout_agreement": agreement(model, held_states, held_actions)}
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    with (out / "loss.jsonl").open("w") as fh:
        for e, v in enumerate(curve):
            fh.write(dumps({"epoch": e, "nll": v}) + "\n")
    print(format_table(["metric", "value"], sorted(report.items())))
    return 0


def _agents(args, language):
    agents = {}
    for k, path in enumerate(args.checkpoint or []):
        name = "model" if len(args.checkpoint) == 1 else f"model{k}"
        agents[name] = ModelPolicy(load_model(path, language))
    baselines = {"noop": NoopPolicy(), "random": RandomPolicy(), "expert": ExpertPolicy()}
    if args.agent not in (None, "model"):
        agents[args.agent] = baselines[args.agent]
    elif args.agent == "model" and not agents:
        raise ConfigError("--agent model needs --checkpoint")
    return agents, baselines


def _returns(args, agents, baselines, instances):
    episodes = args.episodes or 100
    runs = {}
    for name, policy in {**agents, **baselines}.items():
        if name in runs:
            continue
        runs[name] = evaluate(policy, instances, episodes, seed=args.seed)
    return runs


def cmd_eval(args) -> int:
    domain, instances = load_domain(args.domain)
    train, _ = resolve_split(instances, args.split_seed, args.n_train)
    agents, baselines = _agents(args, domain.language)
    baselines = {k: baselines[k] for k in ("random", "noop")}
    runs = _returns(args, agents, baselines, instances)
    train_ids = {i.id for i in train}
    rows = [(i.id, "train" if i.id in train_ids else "test", name, r[i.id]["mean"],
             r[i.id]["std"], r[i.id]["episodes"])
            for name, r in runs.items() for i in instances]
    header = ["instance", "split", "agent", "mean", "std", "episodes"]
    if args.out:
        write_tsv(require_out(args) / "eval.tsv", header, rows)
    print(format_table(header, rows))
    return 0


def cmd_score(args) -> int:
    domain, instances = load_domain(args.domain)
    train, _ = resolve_split(instances, args.split_seed, args.n_train)
    agents, baselines = _agents(args, domain.language)
    if not agents:
        agents = {"noop": NoopPolicy()}
    runs = _returns(args, agents, baselines, instances)
    ids = [i.id for i in instances]
    mean = {k: np.array([r[i]["mean"] for i in ids]) for k, r in runs.items()}
    scored = {k: mean[k] for k in {**agents, "expert": None}}
    scores = normalize_scores(scored, {"random": mean["random"], "noop": mean["noop"]})
    is_train = np.array([i in {x.id for x in train} for i in ids])
    rows = [(iid, "train" if is_train[j] else "test", name, float(mean[name][j]),
             float(scores[name][j]))
            for name in scores for j, iid in enumerate(ids)]
    header = ["instance", "split", "agent", "mean_return", "score"]
    summary = []
    rng = np.random.default_rng(args.seed)
    for name, s in scores.items():
        tr, te = s[is_train], s[~is_train]
        if tr.size and te.size:
            diff, p = permutation_test(te, tr, rng=rng)
        else:
            diff, p = float("nan"), float("nan")
        summary.append((name, float(tr.mean()) if tr.size else float("nan"),
                        float(te.mean()) if te.size else float("nan"), diff, p))
    sheader = ["agent", "train_score", "test_score", "test_minus_train", "p_value"]
    if args.out:
        out = require_out(args)
        write_tsv(out / "scores.tsv", header, rows)
        write_tsv(out / "summary.tsv", sheader, summary)
    print(format_table(header, rows))
    print()
    print(format_table(sheader, summary))
    return 0


def cmd_inspect(args) -> int:
    domain, instances = load_domain(args.domain)
    model = load_model(args.checkpoint[0], domain.language) if args.checkpoint else \
        new_model(args, domain.language)
    by_id = {i.id: i for i in instances}
    inst = by_id.get(args.instance or instances[0].id)
    if inst is None:
        raise ConfigError(f"unknown instance {args.instance!r}")
    dist = model.distributions([build_graph(inst.initial)])[0]
    print(json.dumps({"instance": inst.id, "distribution": dist.to_dict()}, indent=1,
                     sort_keys=True))
    return 0


COMMANDS = {"train": cmd_train, "imitate": cmd_imitate, "eval": cmd_eval, "score": cmd_score,
            "inspect": cmd_inspect, "collect-expert": cmd_collect_expert}


def main(argv=None) -> int:
    level = os.environ.get("RELPOLICY_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    try:
        return COMMANDS[args.mode](args)
    except (NonFiniteLoss, NonFiniteGrad, FloatingPointError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    except RelPolicyError as e:
        print(f"error: {e.code}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

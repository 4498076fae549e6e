import itertools
import json

import numpy as np
import pytest

from relpolicy.envs import (Env, ExpertPolicy, NoopPolicy, RandomPolicy, SplitPlan, builtin,
                            domain_from_document, domain_to_document, evaluate, gridnav,
                            is_legal, load_domain, normalize_scores, permutation_test,
                            save_domain, step, sysadmin)
from relpolicy.exceptions import ConfigError, IllegalAction
from relpolicy.schema import GroundAction, enumerate_actions


@pytest.fixture(scope="module")
def sys_domain():
    return builtin("sysadmin")


def test_sysadmin_reward_and_reboot(sys_domain):
    dom, _ = sys_domain
    inst = sysadmin.make_instance(4, "ring", dom, running=[0, 1])
    rng = np.random.default_rng(0)
    tr = step(inst, inst.initial, GroundAction("reboot", "c3"), rng)
    assert tr.reward == 2 - 0.75
    assert tr.state.holds("running", "c3")  # reboot_prob is 1
    assert not tr.state.holds("running", "c2")  # down machines stay down
    assert tr.state.holds("connected", "c0", "c1")


def test_sysadmin_stay_probability_by_simulation(sys_domain):
    dom, _ = sys_domain
    inst = sysadmin.make_instance(5, "star", dom, running=[0, 1, 2])
    p = sysadmin.stay_probabilities(inst, sysadmin.running_mask(inst, inst.initial))
    # hub c0 has 4 neighbours, 2 running; leaf c1 has the running hub
    assert p[0] == pytest.approx(0.45 + 0.5 * 3 / 5)
    assert p[1] == pytest.approx(0.45 + 0.5 * 2 / 2)
    rng = np.random.default_rng(1)
    n = 20000
    hits = np.zeros(5)
    for _ in range(n):
        s = step(inst, inst.initial, GroundAction("noop"), rng).state
        hits += sysadmin.running_mask(inst, s)
    np.testing.assert_allclose(hits[:3] / n, np.minimum(p[:3], 1.0), atol=0.015)
    assert hits[3:].sum() == 0


def test_sysadmin_expert_prefers_well_connected_down_machine(sys_domain):
    dom, _ = sys_domain
    inst = sysadmin.make_instance(5, "line", dom, running=[0, 1, 3])
    # c2 has two running neighbours, c4 has one
    assert sysadmin.expert(inst, inst.initial) == GroundAction("reboot", "c2")
    full = sysadmin.make_instance(3, "ring", dom)
    assert sysadmin.expert(full, full.initial) == GroundAction("noop")


def test_sysadmin_never_terminates_and_truncates_at_horizon(sys_domain):
    _, insts = sys_domain
    env = Env(insts[0], seed=0)
    env.reset()
    flags = [env.step(GroundAction("noop")) for _ in range(40)]
    assert not any(t.terminated for t in flags)
    assert [t.truncated for t in flags] == [False] * 39 + [True]


def test_illegal_actions_rejected(sys_domain):
    _, insts = sys_domain
    s = insts[0].initial
    assert not is_legal(s, GroundAction("reboot"))
    assert not is_legal(s, GroundAction("noop", "c0"))
    assert not is_legal(s, GroundAction("fly"))
    with pytest.raises(IllegalAction):
        step(insts[0], s, GroundAction("reboot", "zz"), np.random.default_rng())


def test_gridnav_goal_and_disappearance():
    inst = gridnav.make_instance(3, 1, {(1, 0): 1.0})
    rng = np.random.default_rng(0)
    tr = step(inst, inst.initial, GroundAction("east"), rng)
    assert gridnav.agent_cell(tr.state) is None and not tr.terminated and tr.reward == -1
    tr2 = step(inst, tr.state, GroundAction("east"), rng, 1)
    assert tr2.reward == -1 and not tr2.terminated
    safe = gridnav.make_instance(2, 1)
    tr = step(safe, safe.initial, GroundAction("east"), rng)
    assert tr.terminated and tr.reward == -1
    assert gridnav.agent_cell(tr.state) == "x1y0"


def test_gridnav_expert_detours_around_danger():
    _, insts = builtin("gridnav")
    for inst in insts:
        probs = {f.args[0]: f.value for f in inst.initial.facts if f.predicate == "disappear-prob"}
        # follow the expert on a risk-free copy to read off its path
        s, path = inst.initial, []
        rng = np.random.default_rng(0)
        safe = gridnav.make_instance(inst.parameters["width"], inst.parameters["height"])
        for t in range(40):
            tr = step(safe, s, gridnav.expert(inst, s), rng, t)
            s = tr.state
            if tr.terminated:
                break
            path.append(gridnav.agent_cell(s))
        assert tr.terminated, inst.id
        assert all(probs.get(c, 0.0) <= gridnav.BLOCK_THRESHOLD for c in path), inst.id
        w, h = inst.parameters["width"], inst.parameters["height"]
        assert len(path) + 1 <= w + 2 * h, inst.id

        def mean_return(agent, n=200):
            rng = np.random.default_rng(1)
            out = []
            for _ in range(n):
                s, total = inst.initial, 0.0
                for t in range(40):
                    tr = step(inst, s, agent(s), rng, t)
                    s, total = tr.state, total + tr.reward
                    if tr.terminated:
                        break
                out.append(total)
            return np.mean(out)

        straight = mean_return(lambda s: GroundAction("east"))
        assert mean_return(lambda s: gridnav.expert(inst, s)) > straight, inst.id


def test_gridnav_walls_keep_agent_in_place():
    inst = gridnav.make_instance(2, 2)
    tr = step(inst, inst.initial, GroundAction("south"), np.random.default_rng(0))
    assert gridnav.agent_cell(tr.state) == "x0y0"


def test_expert_actions_are_always_legal():
    for name in ("sysadmin", "gridnav"):
        _, insts = builtin(name)
        for inst in insts:
            rng = np.random.default_rng(0)
            s = inst.initial
            for t in range(40):
                a = ExpertPolicy().act([s], rng, inst)[0]
                assert a in enumerate_actions(s)
                tr = step(inst, s, a, rng, t)
                s = tr.state
                if tr.terminated:
                    break


def test_evaluation_is_deterministic_and_ordered(sys_domain):
    _, insts = sys_domain
    a = evaluate(RandomPolicy(), insts[:3], episodes=5, seed=3)
    b = evaluate(RandomPolicy(), list(reversed(insts[:3])), episodes=5, seed=3)
    assert a == b
    noop = evaluate(NoopPolicy(), insts[:1], episodes=4)
    assert noop[insts[0].id]["episodes"] == 4


def test_split_plan():
    plan = SplitPlan(tuple(f"i{k}" for k in range(10)))
    train, test = plan.split(0)
    assert len(train) == 5 and sorted(train + test) == sorted(plan.ids)
    assert plan.split(0) == plan.split(0) and plan.split(0) != plan.split(1)


def test_score_normalization_endpoints():
    base = {"random": np.array([10.0, 5.0]), "noop": np.array([2.0, 8.0])}
    agents = {"best": np.array([20.0, 18.0]), "low": np.array([10.0, 8.0]),
              "bad": np.array([3.0, -4.0]), "mid": np.array([15.0, 13.0])}
    s = normalize_scores(agents, base)
    assert s["best"].tolist() == [1.0, 1.0]
    assert s["low"].tolist() == [0.0, 0.0]
    assert s["bad"].tolist() == [0.0, 0.0]
    assert s["mid"].tolist() == [0.5, 0.5]
    flat = normalize_scores({"noop": np.array([1.0])}, {"random": [1.0], "noop": [1.0]})
    assert flat["noop"].tolist() == [0.0]


def exhaustive_p(a, b):
    pooled = np.concatenate([a, b])
    obs = abs(a.mean() - b.mean())
    hits = total = 0
    for idx in itertools.combinations(range(len(pooled)), len(a)):
        mask = np.zeros(len(pooled), bool)
        mask[list(idx)] = True
        d = abs(pooled[mask].mean() - pooled[~mask].mean())
        hits += d >= obs - 1e-12
        total += 1
    return hits / total


def test_permutation_test_matches_enumeration():
    rng = np.random.default_rng(0)
    a = rng.normal(0.6, 0.2, 4)
    b = rng.normal(0.3, 0.2, 4)
    obs, p = permutation_test(a, b, n_perm=50_000, rng=1)
    assert obs == pytest.approx(a.mean() - b.mean())
    assert abs(p - exhaustive_p(a, b)) < 0.02
    _, same = permutation_test(a, a, n_perm=10_000, rng=2)
    assert same == 1.0


def test_domain_document_round_trip(tmp_path, sys_domain):
    dom, insts = sys_domain
    path = save_domain(tmp_path / "d.json", dom, insts)
    dom2, insts2 = load_domain(path)
    assert dom2.language == dom.language
    assert [i.initial for i in insts2] == [i.initial for i in insts]
    assert domain_to_document(dom2, insts2) == domain_to_document(dom, insts)


def test_domain_document_rejects_unknown_keys(tmp_path, sys_domain):
    doc = domain_to_document(*sys_domain)
    doc["domain"]["colour"] = "red"
    with pytest.raises(ConfigError, match="domain"):
        domain_from_document(doc)
    doc = domain_to_document(*sys_domain)
    doc["domain"]["dynamics"] = "chess"
    with pytest.raises(ConfigError):
        domain_from_document(doc)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_domain(bad)
    with pytest.raises(ConfigError):
        load_domain(tmp_path / "missing.json")
    json.dumps(domain_to_document(*builtin("gridnav")))

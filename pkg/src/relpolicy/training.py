"""PPO with symlog critic targets and return-range advantage scaling, plus
behaviour cloning from expert (state, action) pairs."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .encoder import as_batch
from .envs.base import EnvInstance, step as env_step
from .exceptions import ConfigError, LabelNotLegal, NonFiniteLoss
from .graph import build_graph
from .policy import action_index, sample_index

log = logging.getLogger(__name__)


def symlog(x):
    x = np.asarray(x, float)
    return np.sign(x) * np.log1p(np.abs(x))


def symexp(y):
    y = np.asarray(y, float)
    return np.sign(y) * np.expm1(np.abs(y))


@dataclass
class PpoConfig:
    clip: float = 0.2
    critic_coef: float = 1.0
    entropy_coefs: tuple = (0.1, 0.001, 0.0001)
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rates: tuple = (1e-3, 1e-4, 1e-5)
    anneal_every: int = 500_000
    total_steps: int = 1_500_000
    rollout_steps: int = 1024
    update_epochs: int = 10
    minibatch_size: int = 16
    num_envs: int = 16
    max_grad_norm: float = 1.0
    ema_alpha: float = 0.99

    def __post_init__(self):
        self.entropy_coefs = tuple(float(c) for c in self.entropy_coefs)
        self.learning_rates = tuple(float(c) for c in self.learning_rates)
        self.validate()

    def validate(self):
        if len(self.entropy_coefs) != 3 or len(self.learning_rates) != 3:
            raise ConfigError("learning-rate and entropy schedules need exactly 3 stages")
        values = asdict(self)
        for name, v in values.items():
            items = v if isinstance(v, tuple) else (v,)
            if any(not np.isfinite(x) or x <= 0 for x in items):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        if not 0 < self.gamma <= 1 or not 0 < self.gae_lambda <= 1 or not 0 < self.ema_alpha < 1:
            raise ConfigError("gamma, gae_lambda must lie in (0, 1] and ema_alpha in (0, 1)")
        for name in ("anneal_every", "total_steps", "rollout_steps", "update_epochs",
                     "minibatch_size", "num_envs"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ConfigError(f"{name} must be an integer")
        return self

    def stage(self, samples: int) -> int:
        return min(int(samples) // self.anneal_every, 2)

    def learning_rate(self, samples: int) -> float:
        return self.learning_rates[self.stage(samples)]

    def entropy_coef(self, samples: int) -> float:
        return self.entropy_coefs[self.stage(samples)]


def compute_gae(rewards, values, terminated, truncated, next_values, gamma, lam):
    """Generalized advantage estimates over arrays shaped ``[T]`` or ``[T, lanes]``.

    ``values``/``next_values`` are in reward units. ``next_values[t]`` is the
    value of the state reached after step ``t``; it is ignored when that step
    terminated. Accumulation stops at every terminated or truncated step.
    """
    r = np.asarray(rewards, float)
    v = np.asarray(values, float)
    nv = np.asarray(next_values, float)
    term = np.asarray(terminated, bool)
    done = term | np.asarray(truncated, bool)
    adv = np.zeros_like(r)
    running = np.zeros_like(r[0])
    for t in range(len(r) - 1, -1, -1):
        delta = r[t] + gamma * nv[t] * (~term[t]) - v[t]
        running = delta + gamma * lam * (~done[t]) * running
        adv[t] = running
    return adv, adv + v


class EmaRangeScaler:
    """Exponential moving average of the 5th-95th percentile spread of returns."""

    def __init__(self, alpha=0.99):
        self.alpha = alpha
        self.scale = None

    def update(self, returns) -> float:
        lo, hi = np.percentile(np.asarray(returns, float), [5, 95])
        spread = float(hi - lo)
        self.scale = spread if self.scale is None else \
            self.alpha * self.scale + (1 - self.alpha) * spread
        return self.scale

    @property
    def divisor(self) -> float:
        return max(1.0, self.scale or 0.0)


def scale_advantages(advantages, returns, scaler: EmaRangeScaler):
    scaler.update(returns)
    return np.asarray(advantages, float) / scaler.divisor


@dataclass
class RolloutBuffer:
    """Steps of ``num_envs`` lanes, arrays shaped ``[T, lanes]``.

    ``values`` and ``next_values`` hold critic outputs in symlog space.
    """

    graphs: list
    symbols: np.ndarray
    columns: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    episode_ids: np.ndarray
    instance_ids: np.ndarray
    finished: list = field(default_factory=list)  # (instance id, episode return)

    def __len__(self):
        return self.rewards.size


class Lane:
    def __init__(self, instances, rng, seed_seq):
        self.instances = instances
        self.sampler = rng
        self.rng = np.random.default_rng(seed_seq)
        self.episode = -1
        self.start()

    def start(self):
        self.instance_index = int(self.sampler.integers(len(self.instances)))
        self.instance: EnvInstance = self.instances[self.instance_index]
        self.state = self.instance.initial
        self.t = 0
        self.ret = 0.0
        self.episode += 1


class RolloutCollector:
    """Keeps ``num_envs`` episode lanes alive across successive rollouts.

    Every new episode draws its instance uniformly from ``instances``.
    """

    def __init__(self, instances, num_envs=16, seed=0):
        if not instances:
            raise ConfigError("no training instances")
        ss = np.random.SeedSequence(seed)
        children = ss.spawn(num_envs + 2)
        self.sampler = np.random.default_rng(children[0])
        self.action_rng = np.random.default_rng(children[1])
        self.lanes = [Lane(list(instances), self.sampler, c) for c in children[2:]]
        self.instance_ids = [i.id for i in instances]

    def collect(self, model, steps) -> RolloutBuffer:
        E = len(self.lanes)
        shape = (steps, E)
        graphs = []
        sym = np.zeros(shape, np.int64)
        col = np.zeros(shape, np.int64)
        logp = np.zeros(shape)
        rew = np.zeros(shape)
        val = np.zeros(shape)
        nval = np.zeros(shape)
        term = np.zeros(shape, bool)
        trunc = np.zeros(shape, bool)
        eps = np.zeros(shape, np.int64)
        inst = np.zeros(shape, np.int64)
        finished = []
        current = [build_graph(lane.state) for lane in self.lanes]
        for t in range(steps):
            graphs.append(current)
            dists = model.distributions(current)
            boot = []
            for e, (lane, d) in enumerate(zip(self.lanes, dists)):
                s, c, lp = sample_index(d, self.action_rng)
                tr = env_step(lane.instance, lane.state, d.action(s, c), lane.rng, lane.t)
                sym[t, e], col[t, e], logp[t, e] = s, c, lp
                rew[t, e], val[t, e] = tr.reward, d.value
                term[t, e], trunc[t, e] = tr.terminated, tr.truncated
                eps[t, e], inst[t, e] = lane.episode, lane.instance_index
                lane.ret += tr.reward
                lane.t += 1
                lane.state = tr.state
                if tr.terminated or tr.truncated:
                    finished.append((lane.instance.id, lane.ret))
                    if tr.truncated:
                        boot.append((e, build_graph(tr.state)))
                    lane.start()
            if boot:
                for (e, _), d in zip(boot, model.distributions([g for _, g in boot])):
                    nval[t, e] = d.value
            current = [build_graph(lane.state) for lane in self.lanes]
            if t > 0:
                cont = ~(term[t - 1] | trunc[t - 1])
                nval[t - 1, cont] = val[t, cont]
        last = model.distributions(current)
        cont = ~(term[-1] | trunc[-1])
        nval[-1, cont] = np.array([d.value for d in last])[cont]
        return RolloutBuffer(graphs, sym, col, logp, rew, val, nval, term, trunc, eps, inst,
                             finished)


def collect_rollout(envs, model, rng=None, steps=1024) -> RolloutBuffer:
    """Convenience wrapper: ``envs`` is a :class:`RolloutCollector`."""
    return envs.collect(model, steps)


def ppo_loss(out, symbols, columns, old_log_probs, advantages, target_returns, clip,
             critic_coef, entropy_coef):
    """Scalar to minimize (the negated PPO objective) and its parts."""
    logp = out.log_prob(symbols, columns)
    ratio = nn.exp(logp - old_log_probs)
    surrogate = nn.minimum(ratio * advantages, nn.clip(ratio, 1 - clip, 1 + clip) * advantages)
    actor = surrogate.mean()
    critic = nn.square(out.value - symlog(target_returns)).mean()
    ent = out.entropy.mean()
    loss = -actor + critic_coef * critic - entropy_coef * ent
    return loss, {"actor": actor.item(), "critic": critic.item(), "entropy": ent.item(),
                  "ratio": ratio.data}


def ppo_update(model, buffer: RolloutBuffer, config: PpoConfig, scaler: EmaRangeScaler,
               samples_seen: int, rng) -> dict:
    """Run ``update_epochs`` passes of minibatch PPO over one rollout."""
    values = symexp(buffer.values)
    next_values = symexp(buffer.next_values)
    adv, ret = compute_gae(buffer.rewards, values, buffer.terminated, buffer.truncated,
                           next_values, config.gamma, config.gae_lambda)
    adv = scale_advantages(adv, ret, scaler)

    flat_graphs = [g for row in buffer.graphs for g in row]
    sym = buffer.symbols.ravel()
    col = buffer.columns.ravel()
    old = buffer.log_probs.ravel()
    adv = adv.ravel()
    ret = ret.ravel()
    lr = config.learning_rate(samples_seen)
    c_h = config.entropy_coef(samples_seen)
    n = len(flat_graphs)
    stats = {"actor": 0.0, "critic": 0.0, "entropy": 0.0, "clip_fraction": 0.0}
    updates = 0
    for _ in range(config.update_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.minibatch_size):
            idx = order[lo:lo + config.minibatch_size]
            out = model.forward(as_batch([flat_graphs[i] for i in idx]))
            loss, parts = ppo_loss(out, sym[idx], col[idx], old[idx], adv[idx], ret[idx],
                                   config.clip, config.critic_coef, c_h)
            if not np.isfinite(loss.data):
                raise NonFiniteLoss(f"non-finite PPO loss on minibatch samples {idx.tolist()}")
            loss.backward()
            nn.optimizer_step(model.store, lr, config.max_grad_norm)
            for k in ("actor", "critic", "entropy"):
                stats[k] += parts[k]
            stats["clip_fraction"] += float(np.mean(np.abs(parts["ratio"] - 1) > config.clip))
            updates += 1
    stats = {k: v / max(updates, 1) for k, v in stats.items()}
    stats.update(lr=lr, entropy_coef=c_h, return_scale=scaler.scale, updates=updates)
    return stats


def label_indices(graphs, actions):
    out = []
    for i, (g, a) in enumerate(zip(graphs, actions)):
        try:
            out.append(action_index(g, a))
        except Exception as e:
            raise LabelNotLegal(f"sample {i}: expert action {a} is not legal ({e})", i) from None
    return np.array(out, np.int64).reshape(-1, 2)


def imitation_update(model, graphs, actions, epochs=1000, lr=1e-3, max_grad_norm=1.0,
                     callback=None) -> list[float]:
    """Full-batch behaviour cloning: minimize the mean negative log-likelihood
    of the expert actions. Returns the loss per epoch."""
    idx = label_indices(graphs, actions)
    b = as_batch(list(graphs))
    curve = []
    for epoch in range(epochs):
        out = model.forward(b)
        loss = -out.log_prob(idx[:, 0], idx[:, 1]).mean()
        if not np.isfinite(loss.data):
            raise NonFiniteLoss(f"non-finite imitation loss at epoch {epoch}")
        loss.backward()
        nn.optimizer_step(model.store, lr, max_grad_norm)
        curve.append(loss.item())
        if callback is not None:
            callback(epoch, curve[-1])
    return curve


class PpoTrainer:
    """Alternates rollout collection and PPO updates until ``total_steps`` samples."""

    def __init__(self, model, instances, config: PpoConfig | None = None, seed=0):
        self.model = model
        self.config = config or PpoConfig()
        self.collector = RolloutCollector(instances, self.config.num_envs, seed)
        self.update_rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
        self.scaler = EmaRangeScaler(self.config.ema_alpha)
        self.samples = 0

    def run(self, on_metrics=None, on_stage_end=None):
        cfg = self.config
        history = []
        while self.samples < cfg.total_steps:
            stage = cfg.stage(self.samples)
            remaining = cfg.total_steps - self.samples
            steps = min(cfg.rollout_steps, -(-remaining // cfg.num_envs))
            buf = self.collector.collect(self.model, steps)
            self.samples += len(buf)
            stats = ppo_update(self.model, buf, cfg, self.scaler, self.samples - len(buf),
                               self.update_rng)
            per_inst = {}
            for iid, r in buf.finished:
                per_inst.setdefault(iid, []).append(r)
            rec = {"step": self.samples,
                   "mean_return": {k: float(np.mean(v)) for k, v in sorted(per_inst.items())},
                   "episodes": len(buf.finished), **stats}
            history.append(rec)
            log.info("step %d  return %.2f  entropy %.3f", self.samples,
                     np.mean([r for _, r in buf.finished]) if buf.finished else float("nan"),
                     stats["entropy"])
            if on_metrics is not None:
                on_metrics(rec)
            if on_stage_end is not None and cfg.stage(self.samples) != stage:
                on_stage_end(stage, self.samples)
        return history

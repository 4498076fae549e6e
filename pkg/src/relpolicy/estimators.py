"""scikit-learn style wrappers around the relational policy.

States play the role of ``X`` (a sequence of :class:`~relpolicy.schema.StateDb`)
and ground actions the role of ``y``. The estimators follow the usual
conventions: constructor arguments are stored untouched, learned attributes
end in an underscore, and ``get_params``/``set_params``/``clone`` work.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, MixedLanguage
from .graph import build_graph
from .model import RelationalModel
from .policy import greedy_action
from .schema import GroundAction, StateDb
from .training import PpoConfig, PpoTrainer, imitation_update


def check_states(X, language=None) -> list[StateDb]:
    """Coerce ``X`` to a nonempty list of states that share one language."""
    if isinstance(X, StateDb):
        raise ConfigError("expected a sequence of states, got a single StateDb")
    states = list(X)
    if not states:
        raise ConfigError("need at least one state")
    for i, s in enumerate(states):
        if not isinstance(s, StateDb):
            raise ConfigError(f"X[{i}] is {type(s).__name__}, not StateDb")
    fp = (language or states[0].language).fingerprint()
    for i, s in enumerate(states):
        if s.language.fingerprint() != fp:
            raise MixedLanguage(f"X[{i}] uses a different language")
    return states


def check_actions(y, n: int) -> list[GroundAction]:
    actions = list(y)
    if len(actions) != n:
        raise ConfigError(f"got {len(actions)} actions for {n} states")
    out = []
    for i, a in enumerate(actions):
        if isinstance(a, str):
            a = GroundAction(a)
        elif isinstance(a, tuple) and not isinstance(a, GroundAction):
            a = GroundAction(*a)
        if not isinstance(a, GroundAction):
            raise ConfigError(f"y[{i}] is not a ground action")
        out.append(a)
    return out


class _PolicyMixin:
    def _check_input(self, X):
        check_is_fitted(self, "model_")
        return [build_graph(s) for s in check_states(X, self.language_)]

    def predict(self, X) -> list[GroundAction]:
        """Most probable ground action for each state."""
        return [greedy_action(d) for d in self.predict_distribution(X)]

    def predict_distribution(self, X):
        """One :class:`~relpolicy.policy.ActionDistribution` per state."""
        graphs = self._check_input(X)
        return self.model_.distributions(graphs)

    def predict_value(self, X) -> np.ndarray:
        return np.array([d.value for d in self.predict_distribution(X)])

    def score(self, X, y) -> float:
        """Fraction of states where the greedy action equals the label."""
        pred = self.predict(X)
        y = check_actions(y, len(pred))
        return float(np.mean([p == t for p, t in zip(pred, y)]))

    def _new_model(self, language):
        return RelationalModel(language, dim=self.dim, layers=self.layers,
                               critic_heads=self.critic_heads, seed=self.random_state)


class ImitationPolicy(_PolicyMixin, BaseEstimator):
    """Behaviour cloning: full-batch NLL of labelled expert actions."""

    def __init__(self, dim=16, layers=4, critic_heads=2, epochs=1000, learning_rate=1e-3,
                 max_grad_norm=1.0, random_state=0):
        self.dim = dim
        self.layers = layers
        self.critic_heads = critic_heads
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.max_grad_norm = max_grad_norm
        self.random_state = random_state

    def fit(self, X, y):
        states = check_states(X)
        actions = check_actions(y, len(states))
        if int(self.epochs) < 0 or not self.learning_rate > 0:
            raise ConfigError("epochs must be >= 0 and learning_rate > 0")
        self.language_ = states[0].language
        self.model_ = self._new_model(self.language_)
        self.loss_curve_ = imitation_update(
            self.model_, [build_graph(s) for s in states], actions, epochs=int(self.epochs),
            lr=self.learning_rate, max_grad_norm=self.max_grad_norm)
        self.n_samples_ = len(states)
        return self


class PpoPolicy(_PolicyMixin, BaseEstimator):
    """Model-free PPO on a list of environment instances.

    ``fit`` takes :class:`~relpolicy.envs.EnvInstance` objects in place of
    ``X``; there are no labels.
    """

    def __init__(self, dim=16, layers=4, critic_heads=2, total_steps=1_500_000,
                 anneal_every=500_000, rollout_steps=1024, num_envs=16, update_epochs=10,
                 minibatch_size=16, random_state=0):
        self.dim = dim
        self.layers = layers
        self.critic_heads = critic_heads
        self.total_steps = total_steps
        self.anneal_every = anneal_every
        self.rollout_steps = rollout_steps
        self.num_envs = num_envs
        self.update_epochs = update_epochs
        self.minibatch_size = minibatch_size
        self.random_state = random_state

    def config(self) -> PpoConfig:
        return PpoConfig(total_steps=self.total_steps, anneal_every=self.anneal_every,
                         rollout_steps=self.rollout_steps, num_envs=self.num_envs,
                         update_epochs=self.update_epochs, minibatch_size=self.minibatch_size)

    def fit(self, instances, y=None, on_metrics=None):
        instances = list(instances)
        if not instances:
            raise ConfigError("need at least one training instance")
        self.language_ = instances[0].language
        check_states([i.initial for i in instances], self.language_)
        self.model_ = self._new_model(self.language_)
        trainer = PpoTrainer(self.model_, instances, self.config(), seed=self.random_state)
        self.history_ = trainer.run(on_metrics=on_metrics)
        self.n_samples_ = trainer.samples
        return self

"""Encoder + policy head bundled with their parameter store."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import nn
from .encoder import Encoder, as_batch
from .io import language_from_dict, language_to_dict
from .policy import ActionDistribution, HeadOutput, PolicyHead
from .schema import Language, check_language


class RelationalModel:
    """Inductive graph policy for one domain language.

    Parameter count depends on the vocabulary only, never on the number of
    objects in a state.
    """

    def __init__(self, language: Language, dim=16, layers=4, critic_heads=2, seed=0):
        check_language(language)
        self.language = language
        self.dim = dim
        self.layers = layers
        self.critic_heads = critic_heads
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.store = nn.ParamStore()
        self.encoder = Encoder(self.store, language, dim, layers, rng)
        self.head = PolicyHead(self.store, len(language.action_symbols), dim, rng, critic_heads)
        self.store.pack()

    def forward(self, graphs) -> HeadOutput:
        b = as_batch(graphs)
        out = self.encoder.encode(b)
        return self.head(out.H, b)

    def distributions(self, graphs) -> list[ActionDistribution]:
        with nn.no_grad():
            return self.forward(graphs).distributions()

    def config(self) -> dict:
        return {"dim": self.dim, "layers": self.layers, "critic_heads": self.critic_heads,
                "seed": self.seed, "language": language_to_dict(self.language)}

    def save(self, path, extra=None):
        meta = {"model": self.config()}
        if extra:
            meta.update(extra)
        return nn.save_checkpoint(path, self.store, meta)

    @classmethod
    def load(cls, path) -> "RelationalModel":
        manifest, arrays = nn.read_checkpoint(Path(path))
        cfg = manifest["meta"]["model"]
        model = cls(language_from_dict(cfg["language"]), dim=cfg["dim"], layers=cfg["layers"],
                    critic_heads=cfg["critic_heads"], seed=cfg["seed"])
        nn.load_into(model.store, manifest, arrays)
        return model

"""Bipartite fact/object graphs and disjoint-union batching."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import MixedLanguage
from .schema import Language, StateDb

_I = np.int64


@dataclass(eq=False)
class FactorGraph:
    """Graph of one state.

    Factor nodes are facts of arity >= 1; nullary facts are kept apart in
    ``nullary_preds``/``nullary_values``. ``action_mask`` has one row per action
    symbol and one column per object plus a final column for the null object.
    ``object_names`` is carried only to decode actions; it never feeds a feature.
    """

    object_types: np.ndarray
    factor_preds: np.ndarray
    factor_values: np.ndarray
    edge_factor: np.ndarray
    edge_object: np.ndarray
    edge_position: np.ndarray
    nullary_preds: np.ndarray
    nullary_values: np.ndarray
    action_mask: np.ndarray
    object_names: tuple = ()
    language: Language | None = field(default=None, repr=False)

    @property
    def num_objects(self) -> int:
        return len(self.object_types)

    @property
    def num_factors(self) -> int:
        return len(self.factor_preds)

    @property
    def num_edges(self) -> int:
        return len(self.edge_factor)

    def equals(self, other: "FactorGraph") -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in _ARRAY_FIELDS
        ) and tuple(self.object_names) == tuple(other.object_names)

    def column_of(self, obj):
        """Mask column of an object name (``None`` maps to the null column)."""
        if obj is None:
            return self.num_objects
        return self.object_names.index(obj)

    def dump(self) -> str:
        lang = self.language
        pname = (lambda i: lang.predicates[i].name) if lang else str
        tname = (lambda i: lang.types[i]) if lang else str
        names = self.object_names or tuple(f"u{i}" for i in range(self.num_objects))
        lines = [f"objects ({self.num_objects}):"]
        lines += [f"  [{i}] {names[i]}: {tname(t)}" for i, t in enumerate(self.object_types)]
        lines.append(f"factors ({self.num_factors}):")
        for j, (p, v) in enumerate(zip(self.factor_preds, self.factor_values)):
            args = [names[o] for f, o in zip(self.edge_factor, self.edge_object) if f == j]
            lines.append(f"  [{j}] {pname(p)}({', '.join(args)}) = {v:g}")
        lines.append(f"edges ({self.num_edges}):")
        lines += [f"  f{f} - u{o} @ {p}" for f, o, p in
                  zip(self.edge_factor, self.edge_object, self.edge_position)]
        lines.append("nullary: " + ", ".join(
            f"{pname(p)}={v:g}" for p, v in zip(self.nullary_preds, self.nullary_values)))
        return "\n".join(lines)


_ARRAY_FIELDS = ("object_types", "factor_preds", "factor_values", "edge_factor",
                 "edge_object", "edge_position", "nullary_preds", "nullary_values",
                 "action_mask")


def action_mask_for(lang: Language, object_types: np.ndarray) -> np.ndarray:
    symbols = [lang.predicate(a) for a in lang.action_symbols]
    mask = np.zeros((len(symbols), len(object_types) + 1), dtype=bool)
    for i, p in enumerate(symbols):
        if p.arity == 0:
            mask[i, -1] = True
        else:
            mask[i, :-1] = object_types == lang.type_id(p.signature[0])
    return mask


def build_graph(db: StateDb, lang: Language | None = None) -> FactorGraph:
    lang = db.language if lang is None else lang
    index = {o.name: i for i, o in enumerate(db.objects)}
    object_types = np.fromiter((lang.type_id(o.type_name) for o in db.objects), _I,
                               len(db.objects))
    fp, fv, ef, eo, ep, np_, nv = [], [], [], [], [], [], []
    for f in db.facts:
        pid = lang.predicate_id(f.predicate)
        if not f.args:
            np_.append(pid)
            nv.append(f.value)
            continue
        j = len(fp)
        fp.append(pid)
        fv.append(f.value)
        for pos, arg in enumerate(f.args):
            ef.append(j)
            eo.append(index[arg])
            ep.append(pos)
    return FactorGraph(
        object_types=object_types,
        factor_preds=np.array(fp, _I),
        factor_values=np.array(fv, float),
        edge_factor=np.array(ef, _I),
        edge_object=np.array(eo, _I),
        edge_position=np.array(ep, _I),
        nullary_preds=np.array(np_, _I),
        nullary_values=np.array(nv, float),
        action_mask=action_mask_for(lang, object_types),
        object_names=tuple(o.name for o in db.objects),
        language=lang,
    )


@dataclass(eq=False)
class Batch:
    """Disjoint union of graphs with node indices offset per graph."""

    object_types: np.ndarray
    factor_preds: np.ndarray
    factor_values: np.ndarray
    edge_factor: np.ndarray
    edge_object: np.ndarray
    edge_position: np.ndarray
    nullary_preds: np.ndarray
    nullary_values: np.ndarray
    object_graph: np.ndarray
    factor_graph: np.ndarray
    nullary_graph: np.ndarray
    n_objects: np.ndarray
    n_factors: np.ndarray
    n_edges: np.ndarray
    n_nullary: np.ndarray
    masks: list
    object_names: list
    language: Language | None = field(default=None, repr=False)

    @property
    def num_graphs(self) -> int:
        return len(self.n_objects)

    @property
    def num_objects(self) -> int:
        return len(self.object_types)

    @property
    def num_factors(self) -> int:
        return len(self.factor_preds)

    @property
    def object_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.n_objects)[:-1]]).astype(_I)

    @property
    def graph_assignment(self) -> np.ndarray:
        """Source graph of every node: objects first, then factors."""
        return np.concatenate([self.object_graph, self.factor_graph])

    def extended_mask(self) -> np.ndarray:
        """Mask over extended rows: all objects, then one null row per graph.

        Shape ``[num_objects + num_graphs, |A|]``.
        """
        n_sym = self.masks[0].shape[0] if self.masks else 0
        out = np.zeros((self.num_objects + self.num_graphs, n_sym), dtype=bool)
        off = 0
        for g, m in enumerate(self.masks):
            n = m.shape[1] - 1
            out[off:off + n] = m[:, :-1].T
            out[self.num_objects + g] = m[:, -1]
            off += n
        return out

    def extended_row(self, graph: int, column: int) -> int:
        """Row in the extended layout of a mask column of one graph."""
        n = int(self.n_objects[graph])
        if column == n:
            return self.num_objects + graph
        return int(self.object_offsets[graph]) + column


def batch(graphs) -> Batch:
    graphs = list(graphs)
    if graphs:
        fp = graphs[0].language.fingerprint() if graphs[0].language else None
        for g in graphs[1:]:
            other = g.language.fingerprint() if g.language else None
            if other != fp:
                raise MixedLanguage("graphs were built from different languages")
    n_obj = np.array([g.num_objects for g in graphs], _I)
    n_fac = np.array([g.num_factors for g in graphs], _I)
    n_edge = np.array([g.num_edges for g in graphs], _I)
    n_null = np.array([len(g.nullary_preds) for g in graphs], _I)
    obj_off = np.concatenate([[0], np.cumsum(n_obj)[:-1]]).astype(_I)
    fac_off = np.concatenate([[0], np.cumsum(n_fac)[:-1]]).astype(_I)
    gid = np.arange(len(graphs), dtype=_I)

    def cat(name, dtype):
        if not graphs:
            return np.zeros(0, dtype)
        return np.concatenate([getattr(g, name) for g in graphs]).astype(dtype, copy=False)

    return Batch(
        object_types=cat("object_types", _I),
        factor_preds=cat("factor_preds", _I),
        factor_values=cat("factor_values", float),
        edge_factor=cat("edge_factor", _I) + np.repeat(fac_off, n_edge),
        edge_object=cat("edge_object", _I) + np.repeat(obj_off, n_edge),
        edge_position=cat("edge_position", _I),
        nullary_preds=cat("nullary_preds", _I),
        nullary_values=cat("nullary_values", float),
        object_graph=np.repeat(gid, n_obj),
        factor_graph=np.repeat(gid, n_fac),
        nullary_graph=np.repeat(gid, n_null),
        n_objects=n_obj,
        n_factors=n_fac,
        n_edges=n_edge,
        n_nullary=n_null,
        masks=[g.action_mask for g in graphs],
        object_names=[tuple(g.object_names) for g in graphs],
        language=graphs[0].language if graphs else None,
    )


def unbatch(b: Batch) -> list[FactorGraph]:
    out = []
    o = f = e = n = 0
    for g in range(b.num_graphs):
        no, nf, ne, nn = (int(b.n_objects[g]), int(b.n_factors[g]),
                          int(b.n_edges[g]), int(b.n_nullary[g]))
        out.append(FactorGraph(
            object_types=b.object_types[o:o + no].copy(),
            factor_preds=b.factor_preds[f:f + nf].copy(),
            factor_values=b.factor_values[f:f + nf].copy(),
            edge_factor=b.edge_factor[e:e + ne] - f,
            edge_object=b.edge_object[e:e + ne] - o,
            edge_position=b.edge_position[e:e + ne].copy(),
            nullary_preds=b.nullary_preds[n:n + nn].copy(),
            nullary_values=b.nullary_values[n:n + nn].copy(),
            action_mask=b.masks[g].copy(),
            object_names=b.object_names[g],
            language=b.language,
        ))
        o, f, e, n = o + no, f + nf, e + ne, n + nn
    return out

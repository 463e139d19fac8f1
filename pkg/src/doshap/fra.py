"""Frontier-reducibility: map a coalition to its unique irreducible subset.

Given a graph projected onto the target's ancestors, a coalition member ``X``
is superfluous when the coalition members after ``X`` (topologically) block
every directed path from ``X`` to the target. Dropping all superfluous members
leaves a coalition with the same interventional value that cannot be reduced
further.

Two implementations are kept side by side: :func:`reduce_set` works on Python
sets and mirrors the textbook procedure; :func:`reduce_bits` works on ``int``
bitmasks and is the one the Shapley engine uses. Both fill the same
:class:`FrontierCache`, whose entries stay valid for every explanation on the
same graph.

Coalitions are encoded as ``sum(1 << node_id)``. Python ints are unbounded, so
there is no cap on the number of features; the highest member is found with
``int.bit_length``.
"""

from __future__ import annotations

import json
from collections.abc import Iterable
from pathlib import Path

from .graph import CausalGraph, GraphError, bits_of, mask_of

SCHEMA_VERSION = 1


class CacheMismatch(ValueError):
    pass


class FrontierCache:
    """Map from an encoded key ``T`` to "is T's first member removable given the rest".

    ``T`` is ``(P' - Z) | {X}`` for the node ``X`` under test, ``P'`` the later
    coalition members that descend from ``X`` and ``Z`` the members already found
    superfluous. Entries are only ever added. Plain dict assignment is atomic
    under the GIL, and concurrent writers always agree on the value, so sharing
    one cache between threads needs no lock.
    """

    def __init__(self, graph: CausalGraph | None = None):
        self.graph_hash = graph.content_hash() if graph is not None else None
        self.data: dict[int, bool] = {}

    def __len__(self) -> int:
        return len(self.data)

    def __contains__(self, key: int) -> bool:
        return key in self.data

    def __getitem__(self, key: int) -> bool:
        return self.data[key]

    def get(self, key: int, default=None):
        return self.data.get(key, default)

    def add(self, key: int, value: bool) -> bool:
        return self.data.setdefault(key, value)

    def items(self):
        return self.data.items()

    def bind(self, graph: CausalGraph) -> None:
        h = graph.content_hash()
        if self.graph_hash is None:
            self.graph_hash = h
        elif self.graph_hash != h:
            raise CacheMismatch("frontier cache belongs to a different graph")

    def save(self, path) -> None:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "graph_hash": self.graph_hash,
            "entries": {str(k): v for k, v in sorted(self.data.items())},
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path, graph: CausalGraph) -> "FrontierCache":
        doc = json.loads(Path(path).read_text())
        if doc.get("graph_hash") != graph.content_hash():
            raise CacheMismatch(f"{path}: snapshot was built for a different graph")
        cache = cls(graph)
        cache.data = {int(k): bool(v) for k, v in doc["entries"].items()}
        return cache


def _require_projected(g: CausalGraph) -> None:
    if not g.is_projected:
        raise GraphError("coalition reduction needs a graph projected onto the target's ancestors")


class FraTables:
    """Per-graph bitmask tables for :func:`reduce_bits`.

    Bits are laid out by topological position, so the highest set bit is always
    the topologically-last member. When node ids already follow a topological
    order (true for generated and built-in graphs) positions and ids coincide and
    no translation happens.
    """

    def __init__(self, g: CausalGraph):
        _require_projected(g)
        self.graph = g
        order = g.topo_order()
        self.node_at = list(order)
        self.pos_of = [0] * len(order)
        for pos, v in enumerate(order):
            self.pos_of[v] = pos
        self.identity = self.node_at == list(range(len(order)))
        self.y = 1 << self.pos_of[g.target]
        self.pa_y = self.to_pos(g.parent_mask[g.target])
        self.de = [self.to_pos(g.descendant_mask[v]) for v in order]
        self.ch = [self.to_pos(g.child_mask[v]) for v in order]

    def to_pos(self, mask: int) -> int:
        if self.identity:
            return mask
        return mask_of(self.pos_of[v] for v in bits_of(mask))

    def to_node(self, mask: int) -> int:
        if self.identity:
            return mask
        return mask_of(self.node_at[p] for p in bits_of(mask))


def reduce_bits(s: int, cache: FrontierCache, tables: FraTables) -> int:
    """Irreducible subset of the encoded coalition ``s`` (integer formulation)."""
    identity = tables.identity
    if not identity:
        s = tables.to_pos(s)
    pa_y, de, ch, y = tables.pa_y, tables.de, tables.ch, tables.y
    fr = cache.data
    p = 0
    z = 0
    while s:
        k = s.bit_length() - 1
        x = 1 << k
        if not x & pa_y:
            pp = p & de[k]
            t = (pp & ~z) | x
            key = t if identity else tables.to_node(t)
            hit = fr.get(key)
            if hit is None:
                c = x
                while c and not c & y:
                    pp |= c
                    nxt = 0
                    while c:
                        i = c.bit_length() - 1
                        nxt |= ch[i]
                        c ^= 1 << i
                    c = nxt & ~pp
                hit = c == 0
                fr[key] = hit
            if hit:
                z |= x
        p |= x
        s ^= x
    out = p & ~z
    return out if identity else tables.to_node(out)


class _SetTables:
    def __init__(self, g: CausalGraph):
        _require_projected(g)
        self.rank = {v: i for i, v in enumerate(g.topo_order())}
        self.pa_y = g.parents(g.target)
        self.de = {v: g.descendants(v) for v in range(len(g))}
        self.ch = {v: g.children(v) for v in range(len(g))}


def _set_tables(g: CausalGraph) -> _SetTables:
    tabs = g.__dict__.get("_fra_set_tables")
    if tabs is None:
        tabs = g.__dict__["_fra_set_tables"] = _SetTables(g)
    return tabs


def reduce_set(s: Iterable[int], cache: FrontierCache, g: CausalGraph) -> frozenset[int]:
    """Irreducible subset of ``s`` (set formulation, the readable reference)."""
    tabs = _set_tables(g)
    y = g.target
    members = sorted(s, key=tabs.rank.__getitem__)
    posterior: set[int] = set()
    removed: set[int] = set()
    for x in reversed(members):
        if x not in tabs.pa_y:
            frontier = posterior & tabs.de[x]
            key = mask_of((frontier - removed) | {x})
            if key not in cache:
                explored = set(frontier)
                layer = {x}
                while layer and y not in layer:
                    explored |= layer
                    layer = set().union(*(tabs.ch[c] for c in layer)) - explored
                cache.add(key, not layer)
            if cache[key]:
                removed.add(x)
        posterior.add(x)
    return frozenset(members) - removed


def irreducible_oracle(s: Iterable[int], g: CausalGraph) -> frozenset[int]:
    """``S`` intersected with the target's ancestors once every edge into ``S`` is cut.

    Independent of the frontier search; used to cross-check both reductions.
    """
    _require_projected(g)
    s = frozenset(s)
    seen = {g.target}
    stack = [g.target]
    while stack:
        v = stack.pop()
        if v in s:
            continue
        for p in g.parents(v):
            if p not in seen:
                seen.add(p)
                stack.append(p)
    return s & seen


def is_irreducible(s: Iterable[int], g: CausalGraph) -> bool:
    s = frozenset(s)
    return not any(g.is_frontier(x, s - {x}) for x in s)


def decode_entry(key: int, g: CausalGraph) -> tuple[int, frozenset[int]]:
    """Split a frontier-cache key into (node under test, candidate frontier)."""
    rank = {v: i for i, v in enumerate(g.topo_order())}
    members = bits_of(key)
    x = min(members, key=rank.__getitem__)
    return x, frozenset(members) - {x}

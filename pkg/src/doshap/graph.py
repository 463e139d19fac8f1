"""Causal DAGs over dense integer node ids, with bitmask reachability.

Every node set is also available as a Python ``int`` bitmask (bit ``k`` set iff
node ``k`` belongs to the set); masks are what the coalition-reduction code
consumes.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np


class GraphError(ValueError):
    pass


class CycleError(GraphError):
    def __init__(self, cycle: Sequence[str]):
        self.cycle = list(cycle)
        super().__init__("directed edges contain the cycle " + "->".join(self.cycle))


class UnknownNode(GraphError, KeyError):
    def __str__(self):
        return ValueError.__str__(self)


class DuplicateLabel(GraphError):
    pass


class RejectionBudgetExceeded(RuntimeError):
    pass


def bits_of(mask: int) -> list[int]:
    """Indices of the set bits of ``mask``, ascending."""
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


def mask_of(nodes: Iterable[int]) -> int:
    mask = 0
    for k in nodes:
        mask |= 1 << k
    return mask


class CausalGraph:
    """A DAG of measured nodes, optional bidirected confounder pairs, and a target.

    Nodes are addressed by dense integer ids ``0..n-1``; labels are metadata.
    Edges and the target may be given either as labels or as ids.

    The graph is immutable after construction. Parent, child, ancestor and
    descendant sets are precomputed as bitmasks; the ancestor and descendant
    sets include the node itself.
    """

    def __init__(self, nodes: Sequence[str], edges: Iterable = (), target=None, confounders: Iterable = ()):
        self.labels: tuple[str, ...] = tuple(str(n) for n in nodes)
        self._index: dict[str, int] = {}
        for i, lab in enumerate(self.labels):
            if lab in self._index:
                raise DuplicateLabel(f"duplicate node label {lab!r}")
            self._index[lab] = i
        n = len(self.labels)

        edge_set: set[tuple[int, int]] = set()
        for u, v in edges:
            u, v = self.index(u), self.index(v)
            if u == v:
                raise GraphError(f"self-loop on {self.labels[u]!r}")
            if (u, v) in edge_set:
                raise GraphError(f"duplicate edge {self.labels[u]}->{self.labels[v]}")
            edge_set.add((u, v))
        self.edges: frozenset[tuple[int, int]] = frozenset(edge_set)

        conf_set: set[tuple[int, int]] = set()
        for a, b in confounders:
            a, b = self.index(a), self.index(b)
            if a == b:
                raise GraphError(f"confounder pair needs two distinct nodes, got {self.labels[a]!r} twice")
            pair = (min(a, b), max(a, b))
            if pair in conf_set:
                raise GraphError(f"duplicate confounder {self.labels[a]}<->{self.labels[b]}")
            conf_set.add(pair)
        self.confounders: frozenset[tuple[int, int]] = frozenset(conf_set)

        if target is None:
            raise GraphError("a target node is required")
        self.target: int = self.index(target)

        self.parent_mask = [0] * n
        self.child_mask = [0] * n
        for u, v in self.edges:
            self.child_mask[u] |= 1 << v
            self.parent_mask[v] |= 1 << u

        self._order = self._toposort()
        self.ancestor_mask = [0] * n
        self.descendant_mask = [0] * n
        for v in self._order:
            m = 1 << v
            for p in bits_of(self.parent_mask[v]):
                m |= self.ancestor_mask[p]
            self.ancestor_mask[v] = m
        for v in reversed(self._order):
            m = 1 << v
            for c in bits_of(self.child_mask[v]):
                m |= self.descendant_mask[c]
            self.descendant_mask[v] = m

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "CausalGraph":
        return cls(
            doc["nodes"],
            [tuple(e) for e in doc.get("edges", [])],
            doc["target"],
            [tuple(c) for c in doc.get("confounders", [])],
        )

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.labels),
            "edges": [[self.labels[u], self.labels[v]] for u, v in sorted(self.edges)],
            "confounders": [[self.labels[a], self.labels[b]] for a, b in sorted(self.confounders)],
            "target": self.labels[self.target],
        }

    @classmethod
    def load(cls, path) -> "CausalGraph":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- basic queries --------------------------------------------------------

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CausalGraph):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(self.content_hash())

    def __repr__(self) -> str:
        arcs = ", ".join(f"{self.labels[u]}->{self.labels[v]}" for u, v in sorted(self.edges))
        return f"CausalGraph([{arcs}], target={self.labels[self.target]!r})"

    def index(self, node) -> int:
        if isinstance(node, (int, np.integer)) and not isinstance(node, bool):
            if 0 <= node < len(self.labels):
                return int(node)
            raise UnknownNode(f"node id {node} out of range")
        try:
            return self._index[node]
        except KeyError:
            raise UnknownNode(f"unknown node {node!r}") from None

    def label(self, node: int) -> str:
        return self.labels[self.index(node)]

    def parents(self, x) -> frozenset[int]:
        return frozenset(bits_of(self.parent_mask[self.index(x)]))

    def children(self, x) -> frozenset[int]:
        return frozenset(bits_of(self.child_mask[self.index(x)]))

    def ancestors(self, x) -> frozenset[int]:
        return frozenset(bits_of(self.ancestor_mask[self.index(x)]))

    def descendants(self, x) -> frozenset[int]:
        return frozenset(bits_of(self.descendant_mask[self.index(x)]))

    def confounded_with(self, x) -> frozenset[int]:
        x = self.index(x)
        return frozenset(b if a == x else a for a, b in self.confounders if x in (a, b))

    @property
    def is_markovian(self) -> bool:
        return not self.confounders

    @property
    def is_projected(self) -> bool:
        full = (1 << len(self.labels)) - 1
        return self.ancestor_mask[self.target] == full

    @property
    def features(self) -> tuple[int, ...]:
        """All non-target nodes, in topological order."""
        return tuple(v for v in self._order if v != self.target)

    def topo_order(self) -> tuple[int, ...]:
        """Kahn order with ties broken by ascending node id."""
        return self._order

    def is_topologically_indexed(self) -> bool:
        return all(u < v for u, v in self.edges)

    def _toposort(self) -> tuple[int, ...]:
        import heapq

        n = len(self.labels)
        indeg = [self.parent_mask[v].bit_count() for v in range(n)]
        heap = [v for v in range(n) if indeg[v] == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            v = heapq.heappop(heap)
            order.append(v)
            for c in bits_of(self.child_mask[v]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(heap, c)
        if len(order) < n:
            raise CycleError([self.labels[v] for v in self._find_cycle(set(range(n)) - set(order))])
        return tuple(order)

    def _find_cycle(self, remaining: set[int]) -> list[int]:
        # every node left after Kahn's pass lies on or downstream of a cycle
        start = min(remaining)
        path, seen = [start], {start: 0}
        v = start
        while True:
            v = next(p for p in bits_of(self.parent_mask[v]) if p in remaining)
            if v in seen:
                cyc = path[seen[v]:] + [v]
                return cyc[::-1]
            seen[v] = len(path)
            path.append(v)

    # -- frontier test --------------------------------------------------------

    def is_frontier(self, x, s) -> bool:
        """True iff every directed path from ``x`` to the target meets ``s``.

        ``s`` is an iterable of node ids or an int bitmask. Uses the layered child
        expansion from ``x``: the set is a frontier iff the expansion, filtered by
        ``s`` and by already-visited nodes, dies out before reaching the target.
        """
        x = self.index(x)
        if x == self.target:
            raise GraphError("the target has no frontier")
        blocked = s if isinstance(s, int) else mask_of(self.index(v) for v in s)
        if blocked >> x & 1:
            raise GraphError("x must not belong to the candidate frontier")
        y = 1 << self.target
        layer = 1 << x
        while layer and not layer & y:
            blocked |= layer
            nxt = 0
            for c in bits_of(layer):
                nxt |= self.child_mask[c]
            layer = nxt & ~blocked
        return layer == 0

    # -- projection --------------------------------------------------------------

    def project(self, keep: Iterable) -> "CausalGraph":
        """Latent projection onto a node subset.

        A directed edge u->v is kept iff some directed path u->...->v has every
        internal node outside ``keep``. A bidirected edge joins two kept nodes iff a
        divergent path between them (two directed paths out of a shared source, or
        out of the endpoints of a confounder pair) has every internal node outside
        ``keep``.
        """
        keep_ids = sorted({self.index(v) for v in keep} | {self.target})
        keep_mask = mask_of(keep_ids)
        n = len(self.labels)

        # out_via[w]: kept nodes reachable from w by a directed path whose internal
        # nodes are all dropped
        out_via = [0] * n
        for w in reversed(self._order):
            m = 0
            for c in bits_of(self.child_mask[w]):
                if keep_mask >> c & 1:
                    m |= 1 << c
                else:
                    m |= out_via[c]
            out_via[w] = m

        def reach(w: int) -> int:
            # kept nodes hit first along directed paths starting at w
            return 1 << w if keep_mask >> w & 1 else out_via[w]

        edges = set()
        for u in keep_ids:
            for v in bits_of(out_via[u]):
                edges.add((u, v))

        conf = set()
        for w in range(n):
            if keep_mask >> w & 1:
                continue
            # dropped common cause: both branches leave w through dropped nodes
            kids = bits_of(self.child_mask[w])
            for i, c1 in enumerate(kids):
                for c2 in kids[i + 1:]:
                    for a in bits_of(reach(c1)):
                        for b in bits_of(reach(c2)):
                            if a != b:
                                conf.add((min(a, b), max(a, b)))
        for a, b in self.confounders:
            for ea in bits_of(reach(a)):
                for eb in bits_of(reach(b)):
                    if ea != eb:
                        conf.add((min(ea, eb), max(ea, eb)))

        relabel = {old: new for new, old in enumerate(keep_ids)}
        return CausalGraph(
            [self.labels[v] for v in keep_ids],
            [(relabel[u], relabel[v]) for u, v in sorted(edges)],
            relabel[self.target],
            [(relabel[a], relabel[b]) for a, b in sorted(conf)],
        )

    def project_to_target(self) -> "CausalGraph":
        """Restriction to the ancestors of the target (the identity if already there)."""
        if self.is_projected:
            return self
        return self.project(bits_of(self.ancestor_mask[self.target]))


def build_graph(doc) -> CausalGraph:
    """Build a validated graph from a dict, a JSON string, or a path to a JSON file."""
    if isinstance(doc, CausalGraph):
        return doc
    if isinstance(doc, (str, Path)):
        text = str(doc)
        if text.lstrip().startswith("{"):
            return CausalGraph.from_dict(json.loads(text))
        return CausalGraph.load(doc)
    return CausalGraph.from_dict(doc)


def _accepted(adj: np.ndarray, k: int) -> np.ndarray:
    """Row-wise acceptance of a batch of upper-triangular adjacency matrices."""
    reach = np.zeros(adj.shape[:2], dtype=bool)
    reach[:, k] = True
    for i in range(k - 1, -1, -1):
        reach[:, i] = (adj[:, i, i + 1:] & reach[:, i + 1:]).any(axis=1)
    all_ancestors = reach[:, :k].all(axis=1)
    proper_parents = ~adj[:, :k, k].all(axis=1)
    return all_ancestors & proper_parents


def sample_random_graph(k: int, p: float, seed=None, max_tries: int = 10_000, batch: int = 4096,
                        return_attempts: bool = False):
    """Draw a graph uniformly from the random family with ``k`` features and edge probability ``p``.

    Nodes are ``V0..V{k-1}`` followed by the target ``Y``; every edge ``Vi -> Vj``
    with ``i < j`` appears independently with probability ``p``. Draws are rejected
    unless every feature is an ancestor of ``Y`` and ``Y``'s parents are a proper
    subset of the features. Candidates are generated in batches, but the accepted
    graph depends on the seed only.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if not 0 < p < 1:
        raise ValueError("p must lie strictly between 0 and 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = k + 1
    iu = np.triu_indices(n, 1)
    tried = 0
    while tried < max_tries:
        b = min(batch, max_tries - tried)
        draws = rng.random((b, len(iu[0]))) < p
        adj = np.zeros((b, n, n), dtype=bool)
        adj[:, iu[0], iu[1]] = draws
        ok = np.flatnonzero(_accepted(adj, k))
        if ok.size:
            first = int(ok[0])
            a = adj[first]
            tried += first + 1
            labels = [f"V{i}" for i in range(k)] + ["Y"]
            edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(a))]
            g = CausalGraph(labels, edges, k)
            return (g, tried) if return_attempts else g
        tried += b
    raise RejectionBudgetExceeded(f"no acceptable graph for k={k}, p={p} within {max_tries} draws")

"""Authenticated fractional cascading over a catalog DAG.

Every node ``v`` of a DAG with a single source holds a sorted catalog ``C_v``.
A query ``(x, Q)`` asks, for every node of the connected subgraph ``Q``, for
the smallest catalog key ``>= x``.  The augmented catalogs ``A_v`` contain
the proper keys plus non-proper bridge endpoints; bridges pair equal-valued
elements across an edge so that one binary search at the source and
``O(d)`` steps per further node locate ``x`` everywhere.

Authentication hashes each block's lower side into a small accumulator and
links neighbouring blocks through an inter-block accumulator whose root is
the source block.  A separate traversal digest authenticates the DAG shape
and the routing key ``(id, min, max)`` of each node.
"""
from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from . import hashcore as hc
from .accumulator import AccProof, AccTree, PathSchema, evaluate_proof
from .errors import Rejected, StructureError
from .hashcore import INT64_MAX, INT64_MIN, Digest, Id

NEG_INF = INT64_MIN
POS_INF = INT64_MAX

# intra-block leaves: (position, node, value, proper successor value)
BLOCK_SCHEMA = PathSchema("fc-block", lambda n: (), ())
# inter-block leaves: (position, child label, parent block digest)
LINK_SCHEMA = PathSchema("fc-link", lambda n: (), ())


class CatalogGraph:
    """A DAG with one source; each node carries a strictly increasing int64 catalog."""

    def __init__(
        self,
        catalogs: Mapping[int, Sequence[int]],
        edges: Iterable[tuple[int, int]],
        d: int | None = None,
    ):
        self.catalogs: dict[int, tuple[int, ...]] = {}
        for v, cat in catalogs.items():
            cat = tuple(int(c) for c in cat)
            for c in cat:
                if not NEG_INF < c < POS_INF:
                    raise ValueError(f"catalog key {c} of node {v} is outside the finite int64 range")
            if any(a >= b for a, b in zip(cat, cat[1:])):
                raise ValueError(f"catalog of node {v} is not strictly increasing")
            self.catalogs[int(v)] = cat
        self.children: dict[int, list[int]] = {v: [] for v in self.catalogs}
        self.parents: dict[int, list[int]] = {v: [] for v in self.catalogs}
        seen = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u not in self.catalogs or v not in self.catalogs:
                raise ValueError(f"edge ({u}, {v}) names an unknown node")
            if u == v or (u, v) in seen:
                raise ValueError(f"edge ({u}, {v}) is a loop or a duplicate")
            seen.add((u, v))
            self.children[u].append(v)
            self.parents[v].append(u)
        for lst in self.children.values():
            lst.sort()
        for lst in self.parents.values():
            lst.sort()
        sources = [v for v in self.catalogs if not self.parents[v]]
        if len(sources) != 1:
            raise ValueError(f"graph must have exactly one source, found {len(sources)}")
        self.source = sources[0]
        self.order = self._topological()
        deg = max([len(c) for c in self.children.values()] + [len(p) for p in self.parents.values()] + [1])
        if d is None:
            d = deg
        elif d < deg:
            raise ValueError(f"degree bound {d} is below the actual degree {deg}")
        self.d = d

    def _topological(self) -> list[int]:
        indeg = {v: len(p) for v, p in self.parents.items()}
        ready = [v for v, k in indeg.items() if k == 0]
        out = []
        while ready:
            ready.sort(reverse=True)
            v = ready.pop()
            out.append(v)
            for c in self.children[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(out) != len(self.catalogs):
            raise ValueError("catalog graph has a cycle")
        return out

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in sorted(self.children) for v in self.children[u]]

    def proper_count(self) -> int:
        return sum(len(c) for c in self.catalogs.values())

    def routing(self, v: int) -> tuple:
        cat = self.catalogs[v]
        return (Id(v), cat[0], cat[-1]) if cat else (Id(v), None, None)

    def check_query(self, q: Iterable[int]) -> frozenset:
        """Validate a query subgraph: contains the source, every other node has an in-``Q`` parent."""
        q = frozenset(int(v) for v in q)
        if self.source not in q:
            raise ValueError("query subgraph must contain the source")
        for v in q:
            if v not in self.catalogs:
                raise ValueError(f"query names unknown node {v}")
            if v != self.source and not any(p in q for p in self.parents[v]):
                raise ValueError(f"query node {v} has no parent inside the query")
        return q


class _Elem:
    """One augmented-catalog entry; bridge endpoints share ``seq`` and point at each other."""

    __slots__ = ("value", "proper", "seq", "node", "other", "partner", "pos", "succ_value", "bidx")

    def __init__(self, value: int, proper: bool, seq: int, node: int, other: int = -1):
        self.value = value
        self.proper = proper
        self.seq = seq
        self.node = node
        self.other = other  # node at the far end of the bridge
        self.partner: _Elem | None = None
        self.pos = -1
        self.succ_value = POS_INF
        self.bidx = -1  # index among the bridges of its edge

    def key(self) -> tuple[int, int, int]:
        # non-proper before proper on ties, so the last element <= x is proper when x is a key
        return (self.value, 1 if self.proper else 0, self.seq)

    def nprop(self) -> tuple:
        return (Id(self.pos), Id(self.node), self.value, self.succ_value)

    def __repr__(self) -> str:
        tag = "P" if self.proper else f"B{self.other}"
        return f"<{self.node}:{self.pos} {self.value} {tag}>"


@dataclass
class _Block:
    """Span between two consecutive bridges of edge ``(u, v)``; ``u == -1`` marks the source block."""

    u: int
    v: int
    index: int
    lo: tuple[int, int]  # (position in A_u, position in A_v) of the lower bridge
    hi: tuple[int, int]
    acc: AccTree | None = None
    digest: Digest | None = None
    children: list | None = None  # ordered list of child _Block objects
    links: AccTree | None = None
    label: Digest | None = None

    @property
    def first(self) -> int:
        return self.lo[1]

    @property
    def last(self) -> int:
        return self.hi[1]

    def size(self) -> int:
        if self.u < 0:
            return self.hi[1] - self.lo[1] + 1
        return (self.hi[0] - self.lo[0] - 1) + (self.hi[1] - self.lo[1] - 1)


def routing_digest(routing: tuple) -> Digest:
    return hc.hash_bytes(hc.D_ROUTING, hc.encode(routing))


def traversal_label(child_labels: Sequence[bytes], routing: tuple) -> Digest:
    return hc.hash_bytes(hc.D_TRAVERSAL, b"".join(child_labels) + routing_digest(routing))


def traversal_digest(g: CatalogGraph) -> Digest:
    """Bottom-up label of the DAG: children in id order, then the node's routing key."""
    return _traversal_labels(g)[g.source]


def _traversal_labels(g: CatalogGraph) -> dict[int, Digest]:
    labels: dict[int, Digest] = {}
    for v in reversed(g.order):
        labels[v] = traversal_label([labels[c] for c in g.children[v]], g.routing(v))
    return labels


class FCStructure:
    """Augmented catalogs, blocks and their labels for one :class:`CatalogGraph`."""

    def __init__(self, g: CatalogGraph, gap: int | None = None, limit: int | None = None):
        self.g = g
        self.d = g.d
        self.up_rate = 2 * self.d
        self.gap = gap if gap is not None else 3 * self.d
        self.limit = limit if limit is not None else 6 * self.d
        self._seq = 0
        self.A: dict[int, list[_Elem]] = {}
        self.vals: dict[int, list[int]] = {}
        self.bridges: dict[tuple[int, int], list[_Elem]] = {}  # u-side endpoints in order
        self.blocks: dict[tuple[int, int], list[_Block]] = {}
        self._sample()
        self._repair()
        self._make_blocks()
        self._label()
        self.trav = _traversal_labels(g)

    # ---- augmentation

    def _bridge(self, u: int, v: int, value: int, pending: dict[int, list[_Elem]]) -> _Elem:
        self._seq += 1
        y = _Elem(value, False, self._seq, u, v)
        z = _Elem(value, False, self._seq, v, u)
        y.partner, z.partner = z, y
        pending[v].append(z)
        return y

    def _sample(self) -> None:
        g = self.g
        elems: dict[int, list[_Elem]] = {v: [_Elem(c, True, 0, v) for c in g.catalogs[v]] for v in g.catalogs}
        # upward pass: every up_rate-th finite element of base(v) is copied into each parent
        for v in reversed(g.order):
            base = sorted(elems[v], key=_Elem.key)
            for u in g.parents[v]:
                elems[u].append(self._bridge(u, v, NEG_INF, elems))
                for k in range(self.up_rate - 1, len(base), self.up_rate):
                    elems[u].append(self._bridge(u, v, base[k].value, elems))
                elems[u].append(self._bridge(u, v, POS_INF, elems))
        # downward pass: bound the upper side of every block by seeding extra bridges
        for u in g.order:
            cur = sorted(elems[u], key=_Elem.key)
            kids = g.children[u]
            if kids:
                count = dict.fromkeys(kids, 0)
                out: list[_Elem] = []
                for e in cur:
                    out.append(e)
                    fresh = [e]
                    while fresh:
                        f = fresh.pop()
                        for c in kids:
                            if not f.proper and f.other == c and f.node == u:
                                count[c] = 0
                            else:
                                count[c] += 1
                                if count[c] >= self.gap and NEG_INF < e.value < POS_INF:
                                    y = self._bridge(u, c, e.value, elems)
                                    out.append(y)
                                    fresh.append(y)
                cur = sorted(out, key=_Elem.key)
            elems[u] = cur
        self.A = elems

    def _repair(self, max_rounds: int = 64) -> None:
        """Split every block above the size limit with a median bridge until none is left."""
        for _ in range(max_rounds):
            self._finalize()
            pending: dict[int, list[_Elem]] = {v: [] for v in self.A}
            for (u, v), br in self.bridges.items():
                au, av = self.A[u], self.A[v]
                for a, b in zip(br, br[1:]):
                    if (b.pos - a.pos - 1) + (b.partner.pos - a.partner.pos - 1) <= self.limit:
                        continue
                    inner = sorted(au[a.pos + 1:b.pos] + av[a.partner.pos + 1:b.partner.pos], key=_Elem.key)
                    inner = [e for e in inner if e.value < b.value and NEG_INF < e.value]
                    if inner:
                        pending[u].append(self._bridge(u, v, inner[len(inner) // 2].value, pending))
            if not any(pending.values()):
                return
            for v, extra in pending.items():
                if extra:
                    self.A[v] = sorted(self.A[v] + extra, key=_Elem.key)
        raise StructureError("block repair did not converge")

    def _finalize(self) -> None:
        g = self.g
        for v in g.order:
            a = self.A[v]
            nxt = POS_INF
            for i in range(len(a) - 1, -1, -1):
                e = a[i]
                e.pos = i
                if e.proper:
                    nxt = e.value
                e.succ_value = nxt
            self.vals[v] = [e.value for e in a]
            for c in g.children[v]:
                self.bridges[(v, c)] = []
            for e in a:
                if not e.proper and (v, e.other) in self.bridges:
                    lst = self.bridges[(v, e.other)]
                    e.bidx = e.partner.bidx = len(lst)
                    lst.append(e)

    def _make_blocks(self) -> None:
        g = self.g
        for (u, v), br in self.bridges.items():
            self.blocks[(u, v)] = [
                _Block(u, v, i, (a.pos, a.partner.pos), (b.pos, b.partner.pos))
                for i, (a, b) in enumerate(zip(br, br[1:]))
            ]
        s = g.source
        self.source_block = _Block(-1, s, 0, (-1, 0), (-1, len(self.A[s]) - 1))
        for blist in self.blocks.values():
            for b in blist:
                self._hash_side(b)
        self._hash_side(self.source_block)
        self._his = {e: [x.hi[0] for x in bl] for e, bl in self.blocks.items()}

    def _hash_side(self, b: _Block) -> None:
        a = self.A[b.v]
        if b.last < b.first:
            b.acc, b.digest = None, hc.empty_digest()
            return
        b.acc = AccTree.build([a[p].nprop() for p in range(b.first, b.last + 1)], BLOCK_SCHEMA, indexed=False)
        b.digest = b.acc.digest()

    def _overlapping(self, b: _Block) -> list[_Block]:
        """Blocks of the edges leaving ``b.v`` whose upper span meets the hash side of ``b``."""
        out = []
        for c in self.g.children[b.v]:
            blist = self.blocks[(b.v, c)]
            his = self._his[(b.v, c)]
            k = bisect.bisect_left(his, b.first)
            while k < len(blist) and blist[k].lo[0] <= b.last:
                out.append(blist[k])
                k += 1
        return out

    def _label(self) -> None:
        g = self.g
        order = [blk for v in reversed(g.order) for u in g.parents[v] for blk in self.blocks[(u, v)]]
        order.append(self.source_block)
        for b in order:
            b.children = self._overlapping(b)
            if b.children:
                props = [(Id(i), c.label, b.digest) for i, c in enumerate(b.children)]
                b.links = AccTree.build(props, LINK_SCHEMA, indexed=False)
                b.label = hc.hash_bytes(hc.D_INTERBLOCK, b.links.digest())
            else:
                b.label = b.digest
        self.D = self.source_block.label

    # ---- digests and counts

    def fc_digest(self) -> Digest:
        return self.D

    def traversal_digest(self) -> Digest:
        return self.trav[self.g.source]

    def digest(self) -> Digest:
        return hc.hash_top(self.D, self.traversal_digest())

    def nonproper_count(self) -> int:
        return sum(1 for a in self.A.values() for e in a if not e.proper)

    def augmented_size(self) -> int:
        return sum(len(a) for a in self.A.values())

    def block_count(self) -> int:
        return sum(len(b) for b in self.blocks.values()) + 1

    def max_block_size(self) -> int:
        return max((b.size() for bl in self.blocks.values() for b in bl), default=0)

    # ---- audits

    def audit(self) -> None:
        """Full structural check plus from-scratch label recomputation."""
        g = self.g
        for v, a in self.A.items():
            keys = [e.key() for e in a]
            if keys != sorted(keys) or len(set(keys)) != len(keys):
                raise StructureError(f"augmented catalog {v} is not sorted")
            if [e.value for e in a if e.proper] != list(g.catalogs[v]):
                raise StructureError(f"augmented catalog {v} lost proper elements")
            nxt = POS_INF
            for i in range(len(a) - 1, -1, -1):
                e = a[i]
                if e.pos != i or e.node != v:
                    raise StructureError(f"stale position in catalog {v}")
                if e.proper:
                    nxt = e.value
                if e.succ_value != nxt:
                    raise StructureError(f"proper link broken in catalog {v}")
                if e.proper:
                    continue
                p = e.partner
                if p is None or p.partner is not e or p.value != e.value or p.seq != e.seq or p.proper:
                    raise StructureError(f"bridge pairing broken at {e!r}")
                if p.node != e.other or not (e.other in g.children[v] or e.other in g.parents[v]):
                    raise StructureError(f"bridge {e!r} does not follow an edge")
        for (u, v), br in self.bridges.items():
            if not br or br[0].value != NEG_INF or br[-1].value != POS_INF:
                raise StructureError(f"edge ({u}, {v}) lacks its sentinel bridges")
            for i, e in enumerate(br):
                if e.bidx != i or e.partner.bidx != i:
                    raise StructureError(f"bridge index broken on edge ({u}, {v})")
            for b in self.blocks[(u, v)]:
                if b.size() > self.limit:
                    raise StructureError(f"block {b.index} of edge ({u}, {v}) has size {b.size()} > {self.limit}")
        if self.recompute_digest() != self.digest():
            raise StructureError("labels differ from a from-scratch recomputation")

    def recompute_digest(self) -> Digest:
        """Recompute both digest levels from the augmented catalogs alone, without the stored trees."""
        g = self.g
        memo: dict[tuple, Digest] = {}

        def side(v: int, first: int, last: int) -> Digest:
            a = self.A[v]
            if last < first:
                return hc.empty_digest()
            return AccTree.build([a[p].nprop() for p in range(first, last + 1)], BLOCK_SCHEMA, indexed=False).digest()

        def spans(u: int, c: int) -> list[tuple[int, int, int, int]]:
            br = [e for e in self.A[u] if not e.proper and e.other == c]
            return [(a.pos, b.pos, a.partner.pos, b.partner.pos) for a, b in zip(br, br[1:])]

        def label(v: int, first: int, last: int) -> Digest:
            key = (v, first, last)
            if key in memo:
                return memo[key]
            hb = side(v, first, last)
            kids = []
            for c in g.children[v]:
                for ulo, uhi, vlo, vhi in spans(v, c):
                    if ulo <= last and uhi >= first:
                        kids.append(label(c, vlo, vhi))
            if kids:
                acc = AccTree.build([(Id(i), lab, hb) for i, lab in enumerate(kids)], LINK_SCHEMA, indexed=False)
                out = hc.hash_bytes(hc.D_INTERBLOCK, acc.digest())
            else:
                out = hb
            memo[key] = out
            return out

        s = g.source
        D = label(s, 0, len(self.A[s]) - 1)
        return hc.hash_top(D, traversal_digest(g))

    def target_tree(self, x: int, q: Iterable[int]) -> dict[int, int]:
        """Tree-parent map of the target blocks; raises unless they form a tree under block adjacency."""
        x = _check_x(x)
        q = self.g.check_query(q)
        zpos, parent, target, seen = self._walk(x, q)
        if len({id(b) for b in target.values()}) != len(q):
            raise StructureError("target blocks are not distinct")
        for v, u in parent.items():
            if target[v] not in target[u].children:
                raise StructureError(f"target block of {v} is not adjacent to that of {u}")
            b = target[v]
            if not (b.first <= zpos[v] <= b.last and b.first <= zpos[v] - 1):
                raise StructureError(f"target element of {v} lies outside its block")
        return parent

    # ---- location

    def _walk(self, x: int, q: frozenset) -> tuple[dict[int, int], dict[int, int], dict[int, _Block], list[int]]:
        """Run the location process; returns (z positions, tree parents, target blocks, visit order)."""
        g = self.g
        zpos = {g.source: bisect.bisect_right(self.vals[g.source], x)}
        parent: dict[int, int] = {}
        target = {g.source: self.source_block}
        seen = [g.source]
        rank = {g.source: 0}
        for v in g.order:
            if v not in q or v == g.source:
                continue
            u = min((p for p in g.parents[v] if p in rank), key=rank.__getitem__)
            au = self.A[u]
            p = zpos[u]
            while au[p].proper or au[p].other != v:
                p += 1
            e = au[p]
            vals = self.vals[v]
            k = e.partner.pos
            while vals[k] > x:
                k -= 1
            zpos[v] = k + 1
            parent[v] = u
            target[v] = self.blocks[(u, v)][e.bidx - 1]
            rank[v] = len(seen)
            seen.append(v)
        return zpos, parent, target, seen

    def _answer(self, x: int, v: int, z: int) -> int | None:
        a = self.A[v]
        if z > 0 and a[z - 1].value == x:
            r = a[z - 1].succ_value
        else:
            r = a[z].succ_value if z < len(a) else POS_INF
        return None if r == POS_INF else r

    def locate_all(self, x: int, q: Iterable[int]) -> dict[int, int | None]:
        """Smallest key ``>= x`` in each catalog of ``q`` (``None`` when there is none)."""
        x = _check_x(x)
        q = self.g.check_query(q)
        zpos, _, _, _ = self._walk(x, q)
        return {v: self._answer(x, v, z) for v, z in zpos.items()}

    # ---- proofs

    def query(self, x: int, q: Iterable[int]) -> tuple[dict[int, int | None], "FCProof"]:
        """Answers for every node of ``q`` plus a proof against :meth:`digest`."""
        x = _check_x(x)
        q = self.g.check_query(q)
        zpos, parent, target, seen = self._walk(x, q)
        kids: dict[int, list[int]] = {v: [] for v in seen}
        for v, u in parent.items():
            kids[u].append(v)

        def node(v: int) -> tuple:
            b = target[v]
            if b.acc is None:
                intra = None
            else:
                z = zpos[v]
                k = min(z, b.last) - b.first
                intra = b.acc.prove(opens=[k]).to_value()
            subs = []
            opens = []
            for c in kids[v]:
                i = b.children.index(target[c])
                opens.append(i)
                subs.append((Id(i), node(c)))
            if b.links is None:
                inter = None
            else:
                inter = b.links.prove(opens=opens or [0]).to_value()
            subs.sort(key=lambda t: t[0])
            return ("T", Id(v), intra, inter, tuple(subs))

        answers = {v: self._answer(x, v, zpos[v]) for v in seen}
        trav = []
        for v in sorted(q):
            trav.append((Id(v), self.g.routing(v),
                         tuple(Id(c) if c in q else self.trav[c] for c in self.g.children[v])))
        return answers, FCProof(node(self.g.source), tuple(trav))

    def fc_proof(self, x: int, q: Iterable[int]) -> "FCProof":
        return self.query(x, q)[1]


def _is_id(x: Any) -> bool:
    return type(x) is Id


def _check_x(x: int) -> int:
    if isinstance(x, bool) or not isinstance(x, int) or not NEG_INF < x < POS_INF:
        raise ValueError("query key must be a finite int64 value")
    return int(x)


def build_fc(g: CatalogGraph, **kw) -> FCStructure:
    return FCStructure(g, **kw)


@dataclass(frozen=True)
class FCProof:
    """Nested target-block proofs plus the routing data of the visited nodes.

    ``tree`` nodes are ``("T", node, block_proof|None, link_proof|None, ((i, child), ...))``;
    ``traversal`` lists ``(node, routing, children)`` where each child is its
    id when visited and its traversal label otherwise.
    """

    tree: tuple
    traversal: tuple

    def to_value(self) -> tuple:
        return (self.tree, self.traversal)

    @classmethod
    def from_value(cls, value: Any) -> "FCProof":
        if not (isinstance(value, tuple) and len(value) == 2):
            raise Rejected("malformed-proof", "catalog proof must be a pair")
        return cls(value[0], value[1])

    def _acc_proofs(self) -> list[tuple]:
        out, stack = [], [self.tree]
        while stack:
            t = stack.pop()
            out.extend(p for p in (t[2], t[3]) if p is not None)
            stack.extend(c for _, c in t[4])
        return out

    def entry_count(self) -> int:
        n = sum(AccProof(p).entry_count() for p in self._acc_proofs())
        return n + sum(1 for _, _, ch in self.traversal for c in ch if isinstance(c, Digest))

    def size_bytes(self) -> int:
        return len(hc.encode(self.to_value()))


def _block_items(v: int, proof: Any, x: int, is_source: bool) -> tuple[Digest, int | None]:
    """Check one target-block proof; returns (hash-side digest, located successor)."""
    if proof is None:
        if not is_source:
            raise Rejected("malformed-proof", f"node {v} needs a block proof")
        return hc.empty_digest(), None
    ev = evaluate_proof(AccProof.from_value(proof), BLOCK_SCHEMA)
    opened = [it for it in ev.items if it.kind == "F"]
    if len(opened) != 1:
        raise Rejected("malformed-proof", f"node {v}: exactly one element must be opened")
    it = opened[0]
    if it.in_run:
        raise Rejected("malformed-proof", f"node {v}: unexpected run flag")
    for p in (it.pred, it.nprop, it.succ):
        if p is not None:
            if len(p) != 4 or not all(isinstance(t, int) for t in p) or p[1] != v:
                raise Rejected("predicate-violation", f"node {v}: element does not belong to this catalog")
    cur = it.nprop
    if cur[2] > x:
        y, z = it.pred, cur
    else:
        y, z = cur, it.succ
    if y is not None and not y[2] <= x:
        raise Rejected("predicate-violation", f"node {v}: y > x")
    if z is not None and not x < z[2]:
        raise Rejected("predicate-violation", f"node {v}: z <= x")
    if (y is None or z is None) and not is_source:
        # only the source block spans a whole augmented catalog
        raise Rejected("predicate-violation", f"node {v}: missing neighbour inside a block")
    if y is not None and y[2] == x:
        r = y[3]
    else:
        r = z[3] if z is not None else POS_INF
    return ev.label, (None if r == POS_INF else r)


def _link_items(v: int, proof: Any, hb: Digest) -> tuple[Digest, dict[int, Digest]]:
    ev = evaluate_proof(AccProof.from_value(proof), LINK_SCHEMA)
    opened = {}
    for it in ev.items:
        if it.kind != "F":
            continue
        n = it.nprop
        if it.in_run or len(n) != 3 or not _is_id(n[0]) or not isinstance(n[1], Digest) or n[2] != hb:
            raise Rejected("digest-mismatch", f"node {v}: link leaf does not bind the block")
        opened[int(n[0])] = n[1]
    if not opened:
        raise Rejected("malformed-proof", f"node {v}: link proof opens nothing")
    return hc.hash_bytes(hc.D_INTERBLOCK, ev.label), opened


def fc_proof_digest(x: int, q: Iterable[int], answers: Mapping[int, int | None], proof: FCProof) -> Digest:
    """Recompute the top digest from a catalog proof, checking every answer on the way."""
    x = _check_x(x)
    q = frozenset(int(v) for v in q)
    if not isinstance(answers, Mapping) or set(answers) != set(q):
        raise Rejected("malformed-proof", "answers must cover exactly the query nodes")
    reached: dict[int, int | None] = {}
    edges: set[tuple[int, int]] = set()

    def rec(t: Any, parent: int | None, depth: int) -> Digest:
        if depth > len(q) or not (isinstance(t, tuple) and len(t) == 5 and t[0] == "T"):
            raise Rejected("malformed-proof", "bad target-tree node")
        _, v, intra, inter, subs = t
        if not _is_id(v) or v not in q or v in reached or not isinstance(subs, tuple):
            raise Rejected("malformed-proof", "target tree must visit each query node once")
        if parent is not None:
            edges.add((parent, v))
        hb, a = _block_items(v, intra, x, parent is None)
        reached[v] = a
        if answers[v] != a:
            raise Rejected("predicate-violation", f"node {v}: answer does not match the located element")
        if inter is None:
            if subs:
                raise Rejected("malformed-proof", f"node {v}: children without a link proof")
            return hb
        label, opened = _link_items(v, inter, hb)
        idx = [s[0] if isinstance(s, tuple) and s else None for s in subs]
        if not all(_is_id(i) for i in idx) or idx != sorted(set(idx)):
            raise Rejected("malformed-proof", f"node {v}: children must be listed by link position")
        for s in subs:
            if not (isinstance(s, tuple) and len(s) == 2):
                raise Rejected("malformed-proof", "bad target-tree edge")
            i, child = s
            if opened.get(int(i)) != rec(child, v, depth + 1):
                raise Rejected("digest-mismatch", f"node {v}: child label does not match link leaf {i}")
        return label

    D = rec(proof.tree, None, 0)
    if set(reached) != set(q):
        raise Rejected("malformed-proof", "target tree does not span the query")
    source = int(proof.tree[1])
    return hc.hash_top(D, _traversal_from_proof(source, q, edges, proof.traversal))


def _traversal_from_proof(source: int, q: frozenset, edges: set, traversal: Any) -> Digest:
    if not isinstance(traversal, tuple):
        raise Rejected("malformed-proof", "traversal data")
    info: dict[int, tuple] = {}
    order = [ent[0] if isinstance(ent, tuple) and ent else None for ent in traversal]
    if not all(_is_id(v) for v in order) or order != sorted(set(order)):
        raise Rejected("malformed-proof", "traversal entries must be listed by node id")
    for ent in traversal:
        if not (isinstance(ent, tuple) and len(ent) == 3 and isinstance(ent[2], tuple)):
            raise Rejected("malformed-proof", "traversal entry")
        v, routing, ch = ent
        if v not in q or not isinstance(routing, tuple) or not routing or not _is_id(routing[0]) or routing[0] != v:
            raise Rejected("malformed-proof", "traversal entry")
        pairs = []
        for c in ch:
            if _is_id(c) and c in q:
                pairs.append((c, None))
            elif isinstance(c, Digest):
                pairs.append((None, c))
            else:
                raise Rejected("malformed-proof", "traversal child")
        ids = [c for c in ch if _is_id(c)]
        if ids != sorted(set(ids)):
            raise Rejected("malformed-proof", "children must be listed in id order")
        info[int(v)] = (routing, tuple(pairs))
    if set(info) != set(q):
        raise Rejected("malformed-proof", "traversal data must cover the query")
    for u, v in edges:
        if v not in {c for c, _ in info[u][1] if c is not None}:
            raise Rejected("malformed-proof", f"target-tree edge ({u}, {v}) is not a graph edge")
    return verify_traversal(source, info)


def verify_traversal(source: int, visited: Mapping[int, tuple], digest: bytes | None = None) -> Digest:
    """Recompute the traversal digest from the visited nodes.

    ``visited[v] = (routing, ((child, label|None), ...))``; unvisited children
    carry their label, visited ones are recomputed.  Raises on a mismatch with
    ``digest`` when one is given.
    """
    labels: dict[int, Digest] = {}
    active: set[int] = set()

    def rec(v: int) -> Digest:
        if v in labels:
            return labels[v]
        if v in active:
            raise Rejected("malformed-proof", "traversal data has a cycle")
        if v not in visited:
            raise Rejected("malformed-proof", f"node {v} lacks traversal data")
        active.add(v)
        routing, ch = visited[v]
        out = [lab if lab is not None else rec(int(c)) for c, lab in ch]
        active.discard(v)
        labels[v] = traversal_label(out, routing)
        return labels[v]

    top = rec(source)
    if digest is not None and top != digest:
        raise Rejected("digest-mismatch", "traversal digest")
    return top


def verify_fc(
    x: int,
    q: Iterable[int],
    answers: Mapping[int, int | None],
    proof: FCProof,
    sd: hc.SignedDigest,
    pk: bytes,
    now: int,
    max_age: int = hc.DEFAULT_MAX_AGE,
) -> dict[int, int | None]:
    """Accept the answers of a catalog query or raise :class:`Rejected`."""
    hc.verify_signed_digest(sd, pk, now, max_age=max_age)
    try:
        top = fc_proof_digest(x, q, answers, proof)
    except (TypeError, IndexError, AttributeError) as exc:
        raise Rejected("malformed-proof", str(exc)) from None
    if top != sd.digest:
        raise Rejected("digest-mismatch")
    return dict(answers)

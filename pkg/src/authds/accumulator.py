"""Path hash accumulator.

A path (sequence of node properties) is stored in a treap whose in-order
is the path order.  Each treap node ``x`` is expanded into a leaf-oriented
binary tree: the leaf for ``x`` plus at most two internal nodes joining it
with the subtrees of its treap children.  Labels follow the leaf
(pred, cur, succ) rule and the internal (property, left, right) rule, with
an optional prehashed property digest.

Priorities are ``(bit_length(weight), H(id))``.  With unit weights this is
a plain treap; with weights it keeps a leaf of weight ``w`` within
``O(log W/w)`` levels of the root in expectation.  Both are deterministic
functions of the ids and weights, so replicas applying the same operations
agree byte for byte.

Proofs are pruned copies of the leaf-oriented tree (see :func:`evaluate_proof`).
"""
from __future__ import annotations

import bisect
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Sequence

from . import hashcore as hc
from .errors import NotFound, OrderError, Rejected, SchemaError, StructureError
from .hashcore import Digest, Id

ID_RECORD = 13  # encode(Id(x)) is always 13 bytes
_I64 = struct.Struct(">q")


class ThreadCount(int):
    """In-tree stand-in for a node-id list attribute: only its length is stored."""

    __slots__ = ()


# --------------------------------------------------------------------------- schemas


def concat_ids(a, b):
    if isinstance(a, ThreadCount):
        return ThreadCount(int(a) + int(b))
    return tuple(a) + tuple(b)


class PathSchema:
    """Node/path property layout and its concatenation function.

    A path property is ``(head, tail, *attrs)``.  ``lift`` maps a node
    property to the attrs of the single-node path; ``combiners`` fold attrs
    pairwise.  ``threaded`` names the attr index (within attrs) holding the
    node-id list, which is never stored at internal nodes.
    """

    def __init__(
        self,
        name: str,
        lift: Callable[[tuple], tuple],
        combiners: Sequence[Callable[[Any, Any], Any]],
        prehashed: bool = False,
        threaded: int | None = None,
    ):
        if threaded is not None and not prehashed:
            raise SchemaError("a variable-size attribute requires prehashed mode")
        self.name = name
        self._lift = lift
        self.combiners = tuple(combiners)
        self.prehashed = prehashed
        self.threaded = threaded

    @property
    def arity(self) -> int:
        return 2 + len(self.combiners)

    def lift(self, nprop: tuple) -> tuple:
        v = nprop[0]
        attrs = tuple(self._lift(nprop))
        if len(attrs) != len(self.combiners):
            raise SchemaError(f"{self.name}: lift produced {len(attrs)} attrs, expected {len(self.combiners)}")
        return (v, v) + attrs

    def concat(self, p: tuple, q: tuple) -> tuple:
        return (p[0], q[1]) + tuple(f(a, b) for f, a, b in zip(self.combiners, p[2:], q[2:]))

    def fold(self, props: Iterable[tuple]) -> tuple:
        it = iter(props)
        acc = next(it)
        for p in it:
            acc = self.concat(acc, p)
        return acc

    # views: tuples of (revealed: bool, value-or-digest)
    def full_view(self, prop: tuple) -> tuple:
        return tuple((True, a) for a in prop)

    def view_digest(self, view: tuple) -> Digest:
        return hc.hash_property_digests(hc.hash_attribute(v) if shown else v for shown, v in view)

    def prop_digest(self, prop: tuple) -> Digest:
        return hc.hash_property(prop)

    def fold_views(self, views: Sequence[tuple]) -> tuple:
        acc = list(views[0])
        for view in views[1:]:
            nxt = [(True, acc[0][1] if acc[0][0] else None), view[1]]
            for i, f in enumerate(self.combiners, start=2):
                (sa, a), (sb, b) = acc[i], view[i]
                nxt.append((True, f(a, b)) if sa and sb else (False, None))
            acc = nxt
        return tuple(acc)

    def check_view(self, view: Any) -> None:
        if not isinstance(view, tuple) or len(view) != self.arity:
            raise Rejected("malformed-proof", "property view arity")
        for item in view:
            if not (isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], bool)):
                raise Rejected("malformed-proof", "property view entry")
            if not item[0] and not isinstance(item[1], Digest):
                raise Rejected("malformed-proof", "hidden attribute without digest")
        if not (view[0][0] and view[1][0]):
            raise Rejected("malformed-proof", "head/tail must be revealed")


def minmax_sum_schema(prehashed: bool = False) -> PathSchema:
    """Node property ``(id, value)``; path attrs (min, max, sum)."""
    return PathSchema(
        "minmax-sum",
        lambda n: (n[1], n[1], n[1]),
        (min, max, lambda a, b: a + b),
        prehashed=prehashed,
    )


def membership_schema() -> PathSchema:
    """Sorted id sets: node property ``(id,)``; head/tail give the range."""
    return PathSchema("membership", lambda n: (), ())


# --------------------------------------------------------------------------- search queries


class SuccessorSelect:
    """Select the first node whose value is >= q on a (min, max, ...) schema."""

    def __init__(self, q: int, max_index: int = 3):
        self.q = q
        self.max_index = max_index

    def __call__(self, lp: tuple, rp: tuple) -> str:
        return "left" if lp[self.max_index] >= self.q else "right"


class RangeAdvance:
    """Subpath of nodes whose value lies in [lo, hi] on a sorted (min, max) path."""

    def __init__(self, lo: int, hi: int, min_index: int = 2, max_index: int = 3):
        self.lo, self.hi = lo, hi
        self.mi, self.ma = min_index, max_index

    def _touches(self, p: tuple) -> bool:
        return p[self.ma] >= self.lo and p[self.mi] <= self.hi

    def __call__(self, lp: tuple, rp: tuple) -> set:
        return {side for side, p in (("left", lp), ("right", rp)) if self._touches(p)}

    def holds(self, prop: tuple) -> bool:
        return self.lo <= prop[self.mi] and prop[self.ma] <= self.hi

    def select(self) -> SuccessorSelect:
        return SuccessorSelect(self.lo, self.ma)


# --------------------------------------------------------------------------- tree nodes


def _priority_hash(key: int) -> int:
    return int.from_bytes(hashlib.sha256(b"ads-treap" + hc.encode(Id(key))).digest()[:8], "big")


class _Node:
    __slots__ = (
        "key", "nprop", "weight", "prio", "hprio",
        "left", "right", "parent", "prev", "next",
        "cnt", "wsum", "dirty", "thread",
        "leaf_prop", "leaf_label",
        "comp", "b_prop", "b_pd", "b_label", "a_prop", "a_pd", "a_label", "owner", "enc",
    )

    def __init__(self, nprop: tuple, weight: int):
        self.key = nprop[0]
        self.nprop = nprop
        self.enc = hc.encode(nprop)
        self.hprio = _priority_hash(self.key)
        self.set_weight(weight)
        self.left = self.right = self.parent = self.prev = self.next = None
        self.cnt = 1
        self.wsum = weight
        self.dirty = True
        self.thread = hc.encode(Id(self.key))
        self.leaf_prop = self.leaf_label = None
        self.comp = 0
        self.b_prop = self.b_pd = self.b_label = None
        self.a_prop = self.a_pd = self.a_label = None
        self.owner = None

    def set_weight(self, weight: int) -> None:
        if weight <= 0:
            raise ValueError("weights must be positive")
        self.weight = weight
        self.prio = (weight.bit_length(), self.hprio, self.key)


def _cnt(x):
    return x.cnt if x is not None else 0


def _wsum(x):
    return x.wsum if x is not None else 0


def _upd(x: _Node) -> None:
    x.cnt = 1 + _cnt(x.left) + _cnt(x.right)
    x.wsum = x.weight + _wsum(x.left) + _wsum(x.right)
    x.dirty = True


def _join(a, b):
    if a is None:
        return b
    if b is None:
        return a
    if a.prio > b.prio:
        r = _join(a.right, b)
        a.right = r
        r.parent = a
        _upd(a)
        return a
    l = _join(a, b.left)
    b.left = l
    l.parent = b
    _upd(b)
    return b


def _split(t, k):
    """Split into (first k leaves, rest)."""
    if t is None:
        return None, None
    lc = _cnt(t.left)
    if k <= lc:
        l, r = _split(t.left, k)
        t.left = r
        if r is not None:
            r.parent = t
        if l is not None:
            l.parent = None
        _upd(t)
        t.parent = None
        return l, t
    l, r = _split(t.right, k - lc - 1)
    t.right = l
    if l is not None:
        l.parent = t
    if r is not None:
        r.parent = None
    _upd(t)
    t.parent = None
    return t, r


def _mark_up(x: _Node | None) -> None:
    while x is not None:
        x.dirty = True
        x = x.parent


def _rank(x: _Node) -> int:
    r = _cnt(x.left)
    while x.parent is not None:
        p = x.parent
        if p.right is x:
            r += _cnt(p.left) + 1
        x = p
    return r


def _root_of(x: _Node) -> _Node:
    while x.parent is not None:
        x = x.parent
    return x


# virtual binary nodes: (kind, treap node); kind 'L' leaf, 'B' inner join, 'A' subtree
def _vA(x: _Node) -> tuple:
    return ("L", x) if x.comp == 0 else ("A", x)


def _vchildren(vn: tuple) -> tuple[tuple, tuple]:
    kind, x = vn
    c = x.comp
    if kind == "A":
        if c == 1:
            return _vA(x.left), ("L", x)
        if c == 2:
            return ("L", x), _vA(x.right)
        if c == 3:
            return _vA(x.left), ("B", x)
        return ("B", x), _vA(x.right)
    if kind == "B":
        if c == 3:
            return ("L", x), _vA(x.right)
        return _vA(x.left), ("L", x)
    raise ValueError("leaf has no children")


def _vcnt(vn: tuple) -> int:
    kind, x = vn
    if kind == "L":
        return 1
    if kind == "A":
        return x.cnt
    return 1 + (_cnt(x.right) if x.comp == 3 else _cnt(x.left))


def _vprop(vn):
    kind, x = vn
    return x.leaf_prop if kind == "L" else (x.a_prop if kind == "A" else x.b_prop)


def _vlabel(vn):
    kind, x = vn
    return x.leaf_label if kind == "L" else (x.a_label if kind == "A" else x.b_label)


def _vpd(vn):
    kind, x = vn
    return None if kind == "L" else (x.a_pd if kind == "A" else x.b_pd)


def _nb(x) -> tuple | None:
    return x.nprop if x is not None else None


def _seq_header(count: int) -> bytes:
    return bytes((hc.TAG_SEQ,)) + struct.pack(">I", count * ID_RECORD)


def _ids_from_records(buf) -> tuple:
    return tuple(Id(_I64.unpack_from(buf, i + 5)[0]) for i in range(0, len(buf), ID_RECORD))


# --------------------------------------------------------------------------- AccTree


class AccTree:
    """Accumulator over one path.

    With ``indexed=True`` (the default) nodes are addressed by id.  Callers
    that keep their own references (the forest) pass ``indexed=False`` and
    use the ``*_handle`` methods.
    """

    def __init__(self, schema: PathSchema, biased: bool = False, indexed: bool = True):
        self.schema = schema
        self.biased = biased
        self.root: _Node | None = None
        self.head: _Node | None = None
        self.tail: _Node | None = None
        self._index: dict[int, _Node] | None = {} if indexed else None
        self._buf = bytearray() if schema.threaded is not None else None
        self._stale = False

    # ---- construction

    @classmethod
    def build(
        cls,
        props: Sequence[tuple],
        schema: PathSchema,
        weights: Sequence[int] | None = None,
        biased: bool | None = None,
        indexed: bool = True,
    ) -> "AccTree":
        if len(props) == 0:
            raise ValueError("cannot build an accumulator over an empty path")
        if weights is not None and len(weights) != len(props):
            raise ValueError("one weight per node is required")
        if biased is None:
            biased = weights is not None
        t = cls(schema, biased=biased, indexed=indexed)
        t._bulk(props, weights)
        return t

    def _new_node(self, nprop: tuple, weight: int) -> _Node:
        if not isinstance(nprop, tuple) or not nprop:
            raise SchemaError("node property must be a non-empty tuple starting with the node id")
        return _Node(nprop, weight if self.biased else 1)

    def _bulk(self, props, weights) -> None:
        nodes = [self._new_node(tuple(p), weights[i] if weights is not None else 1) for i, p in enumerate(props)]
        if self._index is not None:
            for x in nodes:
                if x.key in self._index:
                    raise StructureError(f"duplicate node id {x.key}")
                self._index[x.key] = x
        for a, b in zip(nodes, nodes[1:]):
            a.next, b.prev = b, a
        # Cartesian tree by priority
        stack: list[_Node] = []
        for x in nodes:
            last = None
            while stack and stack[-1].prio < x.prio:
                last = stack.pop()
            x.left = last
            if last is not None:
                last.parent = x
            if stack:
                stack[-1].right = x
                x.parent = stack[-1]
            stack.append(x)
        self.root = stack[0]
        self.root.parent = None
        self.head, self.tail = nodes[0], nodes[-1]
        if self._buf is not None:
            self._buf = bytearray(b"".join(x.thread for x in nodes))
        self._fix_counts(self.root)
        self._stale = True
        self._own()

    def _own(self) -> None:
        if self.root is not None:
            self.root.owner = self

    def _fix_counts(self, x: _Node) -> None:
        # iterative post-order, trees can be deep-ish in biased mode
        order, stack = [], [x]
        while stack:
            y = stack.pop()
            order.append(y)
            if y.left is not None:
                stack.append(y.left)
            if y.right is not None:
                stack.append(y.right)
        for y in reversed(order):
            _upd(y)

    # ---- basic accessors

    def __len__(self) -> int:
        return _cnt(self.root)

    def is_empty(self) -> bool:
        return self.root is None

    def handle(self, v: int) -> _Node:
        if self._index is None:
            raise StructureError("tree is not indexed by id")
        try:
            return self._index[v]
        except KeyError:
            raise NotFound(f"node {v} is not on this path") from None

    def __contains__(self, v: int) -> bool:
        return self._index is not None and v in self._index

    def ids(self) -> list[int]:
        out, x = [], self.head
        while x is not None:
            out.append(x.key)
            x = x.next
        return out

    def nodes(self) -> Iterator[_Node]:
        x = self.head
        while x is not None:
            yield x
            x = x.next

    def node_props(self) -> list[tuple]:
        return [x.nprop for x in self.nodes()]

    def weight_of(self, x: _Node) -> int:
        return x.weight

    def total_weight(self) -> int:
        return _wsum(self.root)

    @staticmethod
    def tree_of(x: _Node) -> "AccTree":
        """The path currently holding leaf ``x``."""
        return _root_of(x).owner

    def contains_handle(self, x: _Node) -> bool:
        return self.root is not None and _root_of(x) is self.root

    def rank(self, x: _Node) -> int:
        return _rank(x)

    def accumulator_nodes(self) -> int:
        """Leaves plus internal nodes of the leaf-oriented tree."""
        n = len(self)
        return 2 * n - 1 if n else 0

    # ---- hashing

    def _leaf_prop(self, nprop: tuple) -> tuple:
        p = self.schema.lift(nprop)
        t = self.schema.threaded
        if t is not None:
            p = p[: 2 + t] + (ThreadCount(1),) + p[3 + t :]
        return p

    def _attr_digest(self, i: int, a: Any, start: int) -> Digest:
        t = self.schema.threaded
        if t is not None and i == 2 + t and isinstance(a, ThreadCount):
            lo = start * ID_RECORD
            seg = memoryview(self._buf)[lo : lo + int(a) * ID_RECORD]
            return hc.hash_attribute_encoded(_seq_header(int(a)) + bytes(seg))
        return hc.hash_attribute(a)

    def _prop_digest(self, prop: tuple, start: int) -> Digest:
        return hc.hash_property_digests(self._attr_digest(i, a, start) for i, a in enumerate(prop))

    def _combine(self, lp, ll, rp, rl, start):
        prop = self.schema.concat(lp, rp)
        if self.schema.prehashed:
            pd = self._prop_digest(prop, start)
            return prop, pd, hc.hash_internal_prehashed(pd, ll, rl)
        return prop, None, hc.hash_internal(prop, ll, rl)

    def _refresh(self, x: _Node, off: int) -> None:
        if not x.dirty:
            return
        L, R = x.left, x.right
        if L is not None:
            self._refresh(L, off)
        pos = off + _cnt(L)
        if R is not None:
            self._refresh(R, pos + 1)
        x.leaf_label = hc.hash_leaf_encoded(
            x.prev.enc if x.prev is not None else None,
            x.enc,
            x.next.enc if x.next is not None else None,
        )
        x.leaf_prop = self._leaf_prop(x.nprop)
        lf = (x.leaf_prop, x.leaf_label)
        if L is None and R is None:
            x.comp = 0
            x.b_prop = x.b_pd = x.b_label = None
            x.a_prop, x.a_pd, x.a_label = x.leaf_prop, None, x.leaf_label
        elif R is None:
            x.comp = 1
            x.b_prop = x.b_pd = x.b_label = None
            x.a_prop, x.a_pd, x.a_label = self._combine(L.a_prop, L.a_label, *lf, off)
        elif L is None:
            x.comp = 2
            x.b_prop = x.b_pd = x.b_label = None
            x.a_prop, x.a_pd, x.a_label = self._combine(*lf, R.a_prop, R.a_label, pos)
        elif L.wsum >= R.wsum:
            x.comp = 3
            x.b_prop, x.b_pd, x.b_label = self._combine(*lf, R.a_prop, R.a_label, pos)
            x.a_prop, x.a_pd, x.a_label = self._combine(L.a_prop, L.a_label, x.b_prop, x.b_label, off)
        else:
            x.comp = 4
            x.b_prop, x.b_pd, x.b_label = self._combine(L.a_prop, L.a_label, *lf, off)
            x.a_prop, x.a_pd, x.a_label = self._combine(x.b_prop, x.b_label, R.a_prop, R.a_label, off)
        x.dirty = False

    def refresh(self) -> None:
        if self._stale and self.root is not None:
            self._refresh(self.root, 0)
        self._stale = False

    def digest(self) -> Digest:
        if self.root is None:
            return hc.empty_digest()
        self.refresh()
        return self.root.a_label

    def root_property(self) -> tuple:
        self.refresh()
        return self._public_prop(self.root.a_prop, 0)

    def _public_prop(self, prop: tuple, start: int) -> tuple:
        t = self.schema.threaded
        if t is None or not isinstance(prop[2 + t], ThreadCount):
            return prop
        c = int(prop[2 + t])
        ids = _ids_from_records(self._buf[start * ID_RECORD : (start + c) * ID_RECORD])
        return prop[: 2 + t] + (ids,) + prop[3 + t :]

    def thread_ids(self, start: int, count: int) -> tuple:
        """Ids of ``count`` consecutive leaves from position ``start`` (thread walk)."""
        if self._buf is None:
            out, x = [], self.leaf_at(start)
            while x is not None and len(out) < count:
                out.append(Id(x.key))
                x = x.next
            return tuple(out)
        return _ids_from_records(self._buf[start * ID_RECORD : (start + count) * ID_RECORD])

    def leaf_at(self, k: int) -> _Node:
        x = self.root
        if x is None or not 0 <= k < x.cnt:
            raise IndexError(k)
        while True:
            lc = _cnt(x.left)
            if k < lc:
                x = x.left
            elif k == lc:
                return x
            else:
                k -= lc + 1
                x = x.right

    # ---- updates

    def _check_compatible(self, other: "AccTree") -> None:
        if other.schema is not self.schema and (
            other.schema.name != self.schema.name
            or other.schema.arity != self.schema.arity
            or other.schema.prehashed != self.schema.prehashed
        ):
            raise SchemaError("cannot concatenate paths with different property schemas")
        if (self._index is None) != (other._index is None):
            raise SchemaError("cannot mix indexed and unindexed paths")

    def concatenate(self, other: "AccTree") -> "AccTree":
        """Append ``other`` to this path in place; ``other`` is left empty."""
        self._check_compatible(other)
        if other.root is None:
            return self
        if self.root is None:
            self._take(other)
            return self
        a_tail, b_head = self.tail, other.head
        if self._index is not None:
            small, big = sorted((self._index, other._index), key=len)
            dup = [k for k in small if k in big]
            if dup:
                raise StructureError(f"node {min(dup)} would appear twice on the path")
            if len(other._index) > len(self._index):
                other._index.update(self._index)
                self._index = other._index
            else:
                self._index.update(other._index)
        a_tail.next, b_head.prev = b_head, a_tail
        self.root = _join(self.root, other.root)
        self.root.parent = None
        self.tail = other.tail
        if self._buf is not None:
            self._buf += other._buf
        _mark_up(a_tail)
        _mark_up(b_head)
        self._stale = True
        other._clear()
        self._own()
        return self

    def _take(self, other: "AccTree") -> None:
        self.root, self.head, self.tail = other.root, other.head, other.tail
        self._index, self._buf, self._stale = other._index, other._buf, other._stale
        other._clear()
        self._own()

    def _clear(self) -> None:
        self.root = self.head = self.tail = None
        self._index = {} if self._index is not None else None
        self._buf = bytearray() if self._buf is not None else None
        self._stale = False

    def split_handle(self, x: _Node) -> "AccTree":
        """Cut immediately before ``x``; this tree keeps the prefix, the suffix is returned.

        Splitting before the head is allowed here (the prefix becomes empty).
        """
        k = _rank(x)
        right = AccTree(self.schema, biased=self.biased, indexed=self._index is not None)
        if k == 0:
            right._take(self)
            return right
        l, r = _split(self.root, k)
        prev = x.prev
        prev.next, x.prev = None, None
        right.root, right.head, right.tail = r, x, self.tail
        self.root, self.tail = l, prev
        if self._buf is not None:
            right._buf = self._buf[k * ID_RECORD :]
            del self._buf[k * ID_RECORD :]
        if self._index is not None:
            # move the smaller side
            n_right = len(self._index) - k
            if n_right <= k:
                for y in right.nodes():
                    right._index[y.key] = self._index.pop(y.key)
            else:
                keep = {}
                for y in self.nodes():
                    keep[y.key] = self._index.pop(y.key)
                right._index, self._index = self._index, keep
        _mark_up(prev)
        _mark_up(x)
        self._stale = right._stale = True
        self._own()
        right._own()
        return right

    def split(self, v: int) -> tuple["AccTree", "AccTree"]:
        """Split into (p', p'') with ``v = head(p'')``.  This tree becomes p'."""
        x = self.handle(v)
        if x is self.head:
            raise OrderError("cannot split before the head: the prefix would be empty")
        right = self.split_handle(x)
        return self, right

    def insert_handle(self, nprop: tuple, weight: int = 1, before: _Node | None = None) -> _Node:
        """Insert a node before ``before`` (append when None)."""
        x = self._new_node(tuple(nprop), weight)
        if self._index is not None:
            if x.key in self._index:
                raise StructureError(f"duplicate node id {x.key}")
            self._index[x.key] = x
        self._place(x, before)
        return x

    def _place(self, x: _Node, before: _Node | None) -> None:
        k = _rank(before) if before is not None else len(self)
        prev = before.prev if before is not None else self.tail
        x.prev, x.next = prev, before
        if prev is not None:
            prev.next = x
        else:
            self.head = x
        if before is not None:
            before.prev = x
        else:
            self.tail = x
        l, r = _split(self.root, k)
        self.root = _join(_join(l, x), r)
        self.root.parent = None
        if self._buf is not None:
            self._buf[k * ID_RECORD : k * ID_RECORD] = x.thread
        for y in (prev, x, before):
            _mark_up(y)
        self._stale = True
        self._own()

    def _unplace(self, x: _Node) -> _Node | None:
        """Detach ``x``; returns its old successor."""
        k = _rank(x)
        l, r = _split(self.root, k)
        _, r = _split(r, 1)
        self.root = _join(l, r)
        if self.root is not None:
            self.root.parent = None
        prev, nxt = x.prev, x.next
        if prev is not None:
            prev.next = nxt
        else:
            self.head = nxt
        if nxt is not None:
            nxt.prev = prev
        else:
            self.tail = prev
        x.prev = x.next = x.parent = x.left = x.right = None
        _upd(x)
        if self._buf is not None:
            del self._buf[k * ID_RECORD : (k + 1) * ID_RECORD]
        _mark_up(prev)
        _mark_up(nxt)
        self._stale = True
        self._own()
        return nxt

    def insert_sorted(self, nprop: tuple, weight: int = 1) -> _Node:
        """Insert keeping ids in increasing order (membership sets)."""
        key = nprop[0]
        x, succ = self.root, None
        while x is not None:
            if key < x.key:
                succ, x = x, x.left
            elif key > x.key:
                x = x.right
            else:
                raise StructureError(f"duplicate node id {key}")
        return self.insert_handle(nprop, weight, before=succ)

    def remove_handle(self, x: _Node) -> None:
        self._unplace(x)
        if self._index is not None:
            self._index.pop(x.key, None)

    def remove(self, v: int) -> None:
        self.remove_handle(self.handle(v))

    def find_sorted(self, key: int) -> tuple[_Node | None, _Node | None]:
        """(largest node with id <= key, smallest node with id > key) on an id-sorted path."""
        x, lo, hi = self.root, None, None
        while x is not None:
            if x.key <= key:
                lo, x = x, x.right
            else:
                hi, x = x, x.left
        return lo, hi

    def update_handle(self, x: _Node, nprop: tuple | None = None, weight: int | None = None) -> None:
        if nprop is not None:
            nprop = tuple(nprop)
            if nprop[0] != x.key:
                raise StructureError("updating a node property cannot change its id")
            x.nprop = nprop
            x.enc = hc.encode(nprop)
            _mark_up(x)
            if x.prev is not None:
                _mark_up(x.prev)
            if x.next is not None:
                _mark_up(x.next)
            self._stale = True
        if weight is not None and self.biased and weight != x.weight and weight > 0 and weight.bit_length() == x.weight.bit_length():
            # same rank class, same priority: only weight sums move
            x.set_weight(weight)
            y = x
            while y is not None:
                _upd(y)
                y = y.parent
            self._stale = True
        elif weight is not None and self.biased and weight != x.weight:
            # priority changes: take the node out and put it back
            nxt = self._unplace(x)
            x.set_weight(weight)
            x.wsum = weight
            self._place(x, nxt)
        elif weight is not None and weight <= 0:
            raise ValueError("weights must be positive")

    def update(self, v: int, nprop: tuple | None = None, weight: int | None = None) -> None:
        self.update_handle(self.handle(v), nprop, weight)

    # ---- audit

    def audit(self) -> None:
        """Recompute every label from scratch and check the tree invariants."""
        if self.root is None:
            return
        self.refresh()
        if self.root.parent is not None:
            raise StructureError("root has a parent")
        order: list[_Node] = []
        stack, x = [], self.root
        while stack or x is not None:
            while x is not None:
                stack.append(x)
                x = x.left
            x = stack.pop()
            order.append(x)
            x = x.right
        if order[0] is not self.head or order[-1] is not self.tail:
            raise StructureError("head/tail pointers out of date")
        for a, b in zip(order, order[1:]):
            if a.next is not b or b.prev is not a:
                raise StructureError("leaf threads out of order")
        saved = {}
        for y in order:
            for c in (y.left, y.right):
                if c is not None:
                    if c.parent is not y:
                        raise StructureError("bad parent pointer")
                    if c.prio > y.prio:
                        raise StructureError("heap order violated")
            saved[id(y)] = (y.cnt, y.wsum, y.leaf_label, y.a_label, y.b_label)
            y.dirty = True
        if self._buf is not None and bytes(self._buf) != b"".join(y.thread for y in order):
            raise StructureError("thread buffer out of date")
        if self._index is not None and len(self._index) != len(order):
            raise StructureError("index out of date")
        self._fix_counts(self.root)
        self._refresh(self.root, 0)
        for y in order:
            if saved[id(y)] != (y.cnt, y.wsum, y.leaf_label, y.a_label, y.b_label):
                raise StructureError(f"stale label at node {y.key}")

    def depth_of(self, x: _Node) -> int:
        """Depth of the leaf of ``x`` in the leaf-oriented tree."""
        self.refresh()
        d, vn = 0, _vA(self.root)
        target = _rank(x)
        lo = 0
        while vn[0] != "L":
            l, r = _vchildren(vn)
            lc = _vcnt(l)
            if target < lo + lc:
                vn = l
            else:
                lo += lc
                vn = r
            d += 1
        return d

    # ---- queries

    def _view(self, vn: tuple, lo: int, reveal: frozenset | None) -> tuple:
        prop = _vprop(vn)
        public = self._public_prop(prop, lo)
        if not self.schema.prehashed or reveal is None:
            return self.schema.full_view(public)
        out = []
        for i, a in enumerate(prop):
            if i < 2 or (i - 2) in reveal:
                out.append((True, public[i]))
            else:
                out.append((False, self._attr_digest(i, a, lo)))
        return tuple(out)

    def _opaque(self, vn: tuple, lo: int, reveal, with_props: bool) -> tuple[tuple, bool]:
        """Off-path subtree: bare label, or a self-authenticating node when its property is needed."""
        if not with_props and self.schema.prehashed:
            return ("O", _vlabel(vn)), False
        kind, x = vn
        if kind == "L":
            return ("E", x.nprop, _nb(x.prev), _nb(x.next)), True
        view = self._view(vn, lo, reveal)
        l, r = _vchildren(vn)
        return ("S", view, _vlabel(l), _vlabel(r)), all(shown for shown, _ in view)

    def _prove_at(self, vn, lo, run, opens, reveal, with_props) -> tuple[tuple, bool]:
        """(pruned subtree, whether the verifier learns its full property)."""
        hi = lo + _vcnt(vn)
        i = bisect.bisect_left(opens, lo)
        has_open = i < len(opens) and opens[i] < hi
        inside = run is not None and run[0] <= lo and hi - 1 <= run[1]
        touches = run is not None and lo <= run[1] and hi - 1 >= run[0]
        kind, x = vn
        if kind == "L":
            if has_open or touches:
                return ("F", x.nprop, _nb(x.prev), _nb(x.next), inside), True
            return self._opaque(vn, lo, reveal, with_props)
        if inside and not has_open:
            l, r = _vchildren(vn)
            view = self._view(vn, lo, reveal)
            return ("P", view, _vlabel(l), _vlabel(r)), all(shown for shown, _ in view)
        if not has_open and not touches:
            return self._opaque(vn, lo, reveal, with_props)
        l, r = _vchildren(vn)
        lt, lk = self._prove_at(l, lo, run, opens, reveal, with_props)
        rt, rk = self._prove_at(r, lo + _vcnt(l), run, opens, reveal, with_props)
        # a digest the verifier can recompute is left out, so no proof byte goes unchecked
        pd = _vpd(vn) if self.schema.prehashed and not (lk and rk) else None
        return ("N", pd, lt, rt), lk and rk

    def prove(
        self,
        run: tuple[int, int] | None = None,
        opens: Iterable[int] = (),
        reveal: Iterable[int] | None = None,
        with_props: bool = False,
    ) -> "AccProof":
        """Proof covering leaf positions ``run`` (inclusive) and opening ``opens``.

        ``reveal`` selects which attrs (0-based, after head/tail) are shown at
        allocation nodes in prehashed mode; the rest are replaced by digests.
        """
        if self.root is None:
            raise StructureError("empty path has no proofs")
        self.refresh()
        n = len(self)
        opens = sorted(set(opens))
        if run is not None and not (0 <= run[0] <= run[1] < n):
            raise IndexError(run)
        if opens and not (0 <= opens[0] and opens[-1] < n):
            raise IndexError(opens)
        rv = frozenset(reveal) if reveal is not None else None
        return AccProof(self._prove_at(_vA(self.root), 0, run, opens, rv, with_props)[0])

    def property_subpath(self, v: int, u: int, reveal: Iterable[int] | None = None) -> tuple[tuple, "AccProof"]:
        i, j = _rank(self.handle(v)), _rank(self.handle(u))
        return self.property_range(i, j, reveal)

    def property_range(self, i: int, j: int, reveal: Iterable[int] | None = None) -> tuple[tuple, "AccProof"]:
        if i > j:
            raise OrderError("subpath start comes after its end")
        proof = self.prove(run=(i, j), reveal=reveal)
        return self._answer_of(self._fold_positions(i, j), i, reveal), proof

    def _answer_of(self, prop: tuple, start: int, reveal) -> tuple:
        public = self._public_prop(prop, start)
        if reveal is None or not self.schema.prehashed:
            return public
        rv = set(reveal)
        return tuple(a if i < 2 or (i - 2) in rv else HIDDEN for i, a in enumerate(public))

    def _fold_positions(self, i: int, j: int) -> tuple:
        """Path property of leaves i..j via the allocation nodes."""
        self.refresh()
        parts: list[tuple] = []

        def walk(vn, lo):
            hi = lo + _vcnt(vn)
            if hi - 1 < i or lo > j:
                return
            if i <= lo and hi - 1 <= j:
                parts.append(_vprop(vn))
                return
            l, r = _vchildren(vn)
            walk(l, lo)
            walk(r, lo + _vcnt(l))

        walk(_vA(self.root), 0)
        return self.schema.fold(parts)

    def property_node(self, v: int) -> tuple[tuple, "AccProof"]:
        x = self.handle(v)
        k = _rank(x)
        return x.nprop, self.prove(run=(k, k), opens=(k,))

    def _locate_pos(self, select: Callable[[tuple, tuple], str]) -> int:
        self.refresh()
        vn, lo = _vA(self.root), 0
        while vn[0] != "L":
            l, r = _vchildren(vn)
            side = select(self._public_prop(_vprop(l), lo), self._public_prop(_vprop(r), lo + _vcnt(l)))
            if side == "left":
                vn = l
            elif side == "right":
                lo += _vcnt(l)
                vn = r
            else:
                raise ValueError(f"select returned {side!r}")
        return lo

    def locate(self, select: Callable[[tuple, tuple], str]) -> tuple[int, "AccProof"]:
        k = self._locate_pos(select)
        return self.leaf_at(k).key, self.prove(run=(k, k), opens=(k,), with_props=True)

    def _search_end(self, advance, first: bool) -> int | None:
        self.refresh()
        lift = self.schema.lift

        def rec(vn, lo):
            kind, x = vn
            if kind == "L":
                return lo if advance.holds(lift(x.nprop)) else None
            if advance.holds(self._public_prop(_vprop(vn), lo)):
                return lo if first else lo + _vcnt(vn) - 1
            l, r = _vchildren(vn)
            lp = self._public_prop(_vprop(l), lo)
            rp = self._public_prop(_vprop(r), lo + _vcnt(l))
            sides = advance(lp, rp)
            order = (("left", l, lo), ("right", r, lo + _vcnt(l)))
            if not first:
                order = order[::-1]
            for side, c, clo in order:
                if side in sides:
                    got = rec(c, clo)
                    if got is not None:
                        return got
            return None

        return rec(_vA(self.root), 0)

    def subpath(self, advance) -> tuple[tuple[int, int] | None, "AccProof"]:
        """Maximal subpath selected by ``advance``; ``None`` when empty."""
        i = self._search_end(advance, True)
        if i is None:
            k = self._locate_pos(advance.select())
            return None, self.prove(opens=(k,), with_props=True)
        j = self._search_end(advance, False)
        n = len(self)
        opens = [p for p in (i - 1, j + 1) if 0 <= p < n]
        proof = self.prove(run=(i, j), opens=opens, with_props=True)
        return (self.leaf_at(i).key, self.leaf_at(j).key), proof


class _Hidden:
    __slots__ = ()

    def __repr__(self) -> str:
        return "HIDDEN"


HIDDEN = _Hidden()


def prop_to_value(prop: tuple) -> tuple:
    """Wire form of a property that may contain HIDDEN attributes."""
    return tuple((False, None) if a is HIDDEN else (True, a) for a in prop)


def prop_from_value(value: Any) -> tuple:
    if not isinstance(value, tuple):
        raise Rejected("malformed-proof", "property layout")
    out = []
    for item in value:
        if not (isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], bool)):
            raise Rejected("malformed-proof", "property entry layout")
        if not item[0] and item[1] is not None:
            raise Rejected("malformed-proof", "hidden entries carry no value")
        out.append(item[1] if item[0] else HIDDEN)
    return tuple(out)


# --------------------------------------------------------------------------- proofs


@dataclass(frozen=True)
class AccProof:
    """Pruned copy of the accumulator tree.

    Node forms (nested tuples):

    * ``("O", label)``: untouched subtree whose property is not needed.
    * ``("S", view, left_label, right_label)``: sibling whose property is needed.
    * ``("E", N, N_pred|None, N_succ|None)``: sibling leaf whose property is needed.
    * ``("P", view, left_label, right_label)``: allocation node inside the run.
    * ``("F", N, N_pred|None, N_succ|None, in_run)``: opened leaf.
    * ``("N", prop_digest|None, left, right)``: internal node on a search path.
    """

    tree: tuple

    def to_value(self) -> tuple:
        return self.tree

    @classmethod
    def from_value(cls, value: Any) -> "AccProof":
        if not isinstance(value, tuple):
            raise Rejected("malformed-proof", "proof is not a sequence")
        return cls(value)

    def entry_count(self) -> int:
        n, stack = 0, [self.tree]
        while stack:
            t = stack.pop()
            if isinstance(t, tuple) and t and t[0] == "N" and len(t) == 4:
                stack.extend((t[2], t[3]))
            else:
                n += 1
        return n

    def size_bytes(self) -> int:
        return len(hc.encode(self.tree))


@dataclass
class ProofItem:
    kind: str  # "O", "S", "E", "P" or "F"
    in_run: bool
    view: tuple | None  # property view (always full for "F")
    nprop: tuple | None = None
    pred: tuple | None = None
    succ: tuple | None = None
    label: Digest | None = None


@dataclass
class Evaluated:
    label: Digest
    items: list[ProofItem]
    root: Any = field(repr=False, default=None)
    props: dict = field(repr=False, default_factory=dict)

    def run(self) -> tuple[int, list[ProofItem]]:
        """(index of first run item, run items); rejects a non-contiguous run."""
        idx = [k for k, it in enumerate(self.items) if it.in_run]
        if not idx:
            return -1, []
        if idx[-1] - idx[0] + 1 != len(idx):
            raise Rejected("fold-mismatch", "allocation nodes are not contiguous")
        return idx[0], [self.items[k] for k in idx]


def _is_digest(x) -> bool:
    return isinstance(x, Digest)


def _check_nprop(x) -> None:
    if not isinstance(x, tuple) or not x or not isinstance(x[0], int):
        raise Rejected("malformed-proof", "bad node property")


def _leaf_checked(schema: PathSchema, nprop, pred, succ) -> tuple:
    _check_nprop(nprop)
    for nb in (pred, succ):
        if nb is not None:
            _check_nprop(nb)
    try:
        return schema.lift(nprop)
    except Rejected:
        raise
    except Exception as exc:
        raise Rejected("malformed-proof", f"node property does not fit the schema: {exc}") from None


def evaluate_proof(proof: AccProof | tuple, schema: PathSchema) -> Evaluated:
    """Recompute the root label of a pruned tree and list its leaf-level items in order."""
    tree = proof.tree if isinstance(proof, AccProof) else proof
    items: list[ProofItem] = []
    props: dict[int, tuple | None] = {}

    def rec(t, depth):
        if depth > 4096:
            raise Rejected("malformed-proof", "proof too deep")
        if not isinstance(t, tuple) or not t or not isinstance(t[0], str):
            raise Rejected("malformed-proof", "bad proof node")
        kind = t[0]
        if kind == "O" and len(t) == 2:
            label = t[1]
            if not _is_digest(label):
                raise Rejected("malformed-proof", "opaque label")
            if not schema.prehashed:
                raise Rejected("malformed-proof", "plain mode needs sibling properties")
            items.append(ProofItem("O", False, None, label=label))
            props[id(t)] = None
            return label, None
        if kind in ("P", "S") and len(t) == 4:
            _, view, ll, rl = t
            schema.check_view(view)
            if not (_is_digest(ll) and _is_digest(rl)):
                raise Rejected("malformed-proof", "child labels")
            full = all(shown for shown, _ in view)
            prop = tuple(v for _, v in view) if full else None
            if schema.prehashed:
                label = hc.hash_internal_prehashed(schema.view_digest(view), ll, rl)
            else:
                if not full:
                    raise Rejected("malformed-proof", "plain mode cannot hide attributes")
                label = hc.hash_internal(prop, ll, rl)
            items.append(ProofItem(kind, kind == "P", view, label=label))
            props[id(t)] = prop
            return label, prop
        if kind == "E" and len(t) == 4:
            _, nprop, pred, succ = t
            prop = _leaf_checked(schema, nprop, pred, succ)
            label = hc.hash_leaf(pred, nprop, succ)
            items.append(ProofItem("E", False, schema.full_view(prop), nprop, pred, succ, label))
            props[id(t)] = prop
            return label, prop
        if kind == "F" and len(t) == 5:
            _, nprop, pred, succ, in_run = t
            if not isinstance(in_run, bool):
                raise Rejected("malformed-proof", "run flag")
            prop = _leaf_checked(schema, nprop, pred, succ)
            label = hc.hash_leaf(pred, nprop, succ)
            items.append(ProofItem("F", in_run, schema.full_view(prop), nprop, pred, succ, label))
            props[id(t)] = prop
            return label, prop
        if kind == "N" and len(t) == 4:
            _, pd, left, right = t
            ll, lp = rec(left, depth + 1)
            rl, rp = rec(right, depth + 1)
            prop = None
            if lp is not None and rp is not None:
                try:
                    prop = schema.concat(lp, rp)
                except Exception as exc:
                    raise Rejected("malformed-proof", f"cannot fold properties: {exc}") from None
            props[id(t)] = prop
            if not schema.prehashed:
                if prop is None:
                    raise Rejected("malformed-proof", "plain mode needs both child properties")
                if pd is not None:
                    raise Rejected("malformed-proof", "unexpected property digest")
                return hc.hash_internal(prop, ll, rl), prop
            if prop is not None:
                if pd is not None:
                    raise Rejected("malformed-proof", "redundant property digest")
                pd = schema.prop_digest(prop)
            elif not _is_digest(pd):
                raise Rejected("malformed-proof", "missing property digest")
            return hc.hash_internal_prehashed(pd, ll, rl), prop
        raise Rejected("malformed-proof", f"unknown proof node {kind!r}")

    label, _ = rec(tree, 0)
    return Evaluated(label, items, tree, props)


def _descend(ev: Evaluated, select: Callable[[tuple, tuple], str]) -> tuple:
    """Follow ``select`` from the root of an evaluated proof; returns the leaf reached."""
    t = ev.root
    while t[0] == "N":
        lp, rp = ev.props.get(id(t[2])), ev.props.get(id(t[3]))
        if lp is None or rp is None:
            raise Rejected("malformed-proof", "search path lacks sibling properties")
        side = select(lp, rp)
        t = t[2] if side == "left" else t[3]
    if t[0] != "F":
        raise Rejected("endpoint-mismatch", "search does not end at an opened leaf")
    return t


def check_answer_view(schema: PathSchema, folded: tuple, answer: Any) -> None:
    """Compare a claimed path property with a folded view; HIDDEN exactly where the view hides."""
    if not isinstance(answer, tuple) or len(answer) != schema.arity:
        raise Rejected("fold-mismatch", "answer arity")
    for (shown, val), claim in zip(folded, answer):
        if (claim is HIDDEN) == shown:
            raise Rejected("fold-mismatch", "answer hides a different attribute set")
        if shown and (val != claim or type(val) is not type(claim)):
            raise Rejected("fold-mismatch")


def verify_acc_proof(
    query: tuple,
    answer: Any,
    proof: AccProof,
    sd: hc.SignedDigest,
    pk: bytes,
    now: int,
    schema: PathSchema,
    max_age: int = hc.DEFAULT_MAX_AGE,
) -> Any:
    """Check an accumulator answer against a signed digest.

    ``query`` is one of ``("subpath", v, u)``, ``("node", v)``,
    ``("locate", select)`` or ``("range", advance)``.  Returns the answer on
    success and raises :class:`Rejected` otherwise.
    """
    hc.verify_signed_digest(sd, pk, now, max_age=max_age)
    if not isinstance(proof, AccProof):
        raise Rejected("malformed-proof", "not an accumulator proof")
    ev = evaluate_proof(proof, schema)
    if ev.label != sd.digest:
        raise Rejected("digest-mismatch")
    check_query(query, answer, ev, schema)
    return answer


def check_query(query: tuple, answer: Any, ev: Evaluated, schema: PathSchema) -> None:
    """Query-specific checks on an already evaluated proof."""
    kind = query[0]
    start, run = ev.run()
    if kind == "subpath":
        _, v, u = query
        if not run:
            raise Rejected("fold-mismatch", "no allocation nodes")
        folded = schema.fold_views([it.view for it in run])
        if folded[0][1] != v or folded[1][1] != u:
            raise Rejected("endpoint-mismatch")
        check_answer_view(schema, folded, answer)
        return
    if kind == "node":
        v = query[1]
        if len(run) != 1 or run[0].kind != "F":
            raise Rejected("fold-mismatch", "node proof must open exactly one leaf")
        if run[0].nprop[0] != v:
            raise Rejected("endpoint-mismatch")
        if run[0].nprop != answer:
            raise Rejected("fold-mismatch")
        return
    if kind == "locate":
        leaf = _descend(ev, query[1])
        if len(run) != 1 or run[0].kind != "F" or run[0].nprop is not leaf[1]:
            raise Rejected("endpoint-mismatch", "run is not the located leaf")
        if answer != leaf[1][0]:
            raise Rejected("endpoint-mismatch")
        return
    if kind == "range":
        adv = query[1]
        if answer is None:
            if run:
                raise Rejected("fold-mismatch", "empty answer with a non-empty run")
            leaf = _descend(ev, adv.select())
            if adv.holds(schema.lift(leaf[1])):
                raise Rejected("fold-mismatch", "a matching node exists")
            return
        if not run:
            raise Rejected("fold-mismatch", "no allocation nodes")
        folded = schema.fold_views([it.view for it in run])
        if not all(shown for shown, _ in folded):
            raise Rejected("malformed-proof", "range proofs reveal everything")
        prop = tuple(v for _, v in folded)
        if not isinstance(answer, tuple) or len(answer) != 2 or (prop[0], prop[1]) != tuple(answer):
            raise Rejected("endpoint-mismatch")
        if not adv.holds(prop):
            raise Rejected("fold-mismatch", "run does not satisfy the query")
        end = start + len(run)
        for k in (start - 1, end):
            if 0 <= k < len(ev.items):
                it = ev.items[k]
                if it.kind != "F" or adv.holds(schema.lift(it.nprop)):
                    raise Rejected("fold-mismatch", "subpath is not maximal")
        return
    raise Rejected("malformed-proof", f"unknown query kind {kind!r}")


def concatenate(p1: AccTree, p2: AccTree) -> AccTree:
    return p1.concatenate(p2)


def split(p: AccTree, v: int) -> tuple[AccTree, AccTree]:
    return p.split(v)

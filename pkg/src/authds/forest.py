"""Authenticated dynamic forest.

Every tree is split into solid paths by the heavy-child rule
(``2·size(child) > size(parent)``).  Each solid path is an accumulator
ordered from its deepest node up to its top.  A node with light children
owns a dashed path holding one leaf per light child; a leaf embeds the
label of that child's solid path.  Tops of trees are leaves of one root path,
whose label (together with a sorted id set) is the forest digest.

Leaf layouts:

* solid:  ``(id, "S", value, L(dashed path) | None)``
* dashed: ``(child id, "D", L(child's solid path))``
* root:   ``(tree root id, "R", L(root's solid path))``
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

from . import hashcore as hc
from .accumulator import (
    HIDDEN,
    AccProof,
    AccTree,
    Evaluated,
    PathSchema,
    _Node,
    check_answer_view,
    prop_from_value,
    prop_to_value,
    evaluate_proof,
    membership_schema,
)
from .errors import NotFound, Rejected, StructureError
from .hashcore import Digest, Id


class ForestSchema:
    """Path property for tree paths: a :class:`PathSchema` over node values plus reversal."""

    def __init__(
        self,
        name: str,
        lift: Callable[[Any], tuple],
        combiners: Sequence[Callable[[Any, Any], Any]],
        reversers: Sequence[Callable[[Any], Any]] | None = None,
        prehashed: bool = False,
        threaded: int | None = None,
    ):
        self.name = name
        self.value_lift = lift
        self.solid = PathSchema(f"{name}/solid", self._lift_leaf, combiners, prehashed=prehashed, threaded=threaded)
        self.reversers = tuple(reversers) if reversers is not None else tuple(lambda a: a for _ in combiners)
        if len(self.reversers) != len(self.solid.combiners):
            raise ValueError("one reverser per attribute")

    def _lift_leaf(self, nprop: tuple) -> tuple:
        if len(nprop) != 4 or nprop[1] != "S":
            raise ValueError("not a solid leaf")
        return tuple(self.value_lift(nprop[0], nprop[2]))

    def value_property(self, v: int, value: Any) -> tuple:
        return (Id(v), Id(v)) + tuple(self.value_lift(Id(v), value))

    def reverse(self, prop: tuple) -> tuple:
        return (prop[1], prop[0]) + tuple(
            a if a is HIDDEN else f(a) for f, a in zip(self.reversers, prop[2:])
        )

    def reverse_view(self, view: tuple) -> tuple:
        (h, t), rest = view[:2], view[2:]
        return (t, h) + tuple((s, f(a)) if s else (s, a) for f, (s, a) in zip(self.reversers, rest))

    def concat(self, p: tuple, q: tuple) -> tuple:
        return self.solid.concat(p, q)


def sum_count_schema() -> ForestSchema:
    """Integer node values; a path reports (sum, node count)."""
    return ForestSchema("sum-count", lambda v, x: (x, 1), (lambda a, b: a + b, lambda a, b: a + b))


def _hop_schema(tag: str) -> PathSchema:
    def lift(nprop):
        if len(nprop) != 3 or nprop[1] != tag:
            raise ValueError(f"not a {tag} leaf")
        return ()

    return PathSchema("dashed" if tag == "D" else "root", lift, ())


DASHED_SCHEMA = _hop_schema("D")
ROOT_SCHEMA = _hop_schema("R")
MEMBERSHIP_SCHEMA = membership_schema()


class FNode:
    __slots__ = ("id", "value", "parent", "children", "size", "solid", "sleaf", "dpath", "hleaf")

    def __init__(self, v: int, value: Any):
        self.id = v
        self.value = value
        self.parent: FNode | None = None
        self.children: set[FNode] = set()
        self.size = 1
        self.solid: FNode | None = None
        self.sleaf: _Node | None = None  # leaf in its solid path
        self.dpath: AccTree | None = None  # dashed path of its light children
        self.hleaf: _Node | None = None  # dashed or root-path leaf while this node tops a path

    def is_top(self) -> bool:
        return self.parent is None or self.parent.solid is not self

    def __repr__(self) -> str:
        return f"FNode({self.id})"


class Forest:
    """Dynamic forest with authenticated path queries."""

    def __init__(self, schema: ForestSchema | None = None, biased: bool = True):
        self.schema = schema or sum_count_schema()
        self.biased = biased
        self.nodes: dict[int, FNode] = {}
        self.root_path = AccTree(ROOT_SCHEMA, biased=biased, indexed=False)
        self.members = AccTree(MEMBERSHIP_SCHEMA, biased=False, indexed=True)
        self._next_id = 0

    # ---- helpers

    def _node(self, v: int) -> FNode:
        try:
            return self.nodes[v]
        except KeyError:
            raise NotFound(f"node {v} is not in the forest") from None

    def _solid_tree(self, x: FNode) -> AccTree:
        return AccTree.tree_of(x.sleaf)

    def _top(self, x: FNode) -> FNode:
        return self.nodes[self._solid_tree(x).tail.key]

    def _s_prop(self, x: FNode) -> tuple:
        d = x.dpath.digest() if x.dpath is not None else None
        return (Id(x.id), "S", x.value, d)

    def _s_weight(self, x: FNode) -> int:
        return x.size - (x.solid.size if x.solid is not None else 0)

    def _new_path(self) -> AccTree:
        return AccTree(self.schema.solid, biased=self.biased, indexed=False)

    def _dashed_insert(self, p: FNode, c: FNode) -> None:
        if p.dpath is None:
            p.dpath = AccTree(DASHED_SCHEMA, biased=self.biased, indexed=False)
        c.hleaf = p.dpath.insert_sorted((Id(c.id), "D", hc.empty_digest()), c.size)

    def _dashed_remove(self, p: FNode, c: FNode) -> None:
        p.dpath.remove_handle(c.hleaf)
        c.hleaf = None
        if p.dpath.is_empty():
            p.dpath = None

    def _make_dashed(self, c: FNode) -> None:
        """Turn the solid edge from ``c`` to its parent into a dashed one."""
        p = c.parent
        path = self._solid_tree(c)
        path.split_handle(p.sleaf)  # prefix (ending at c) keeps the old object
        p.solid = None
        self._dashed_insert(p, c)

    def _make_solid(self, c: FNode) -> None:
        """Turn the dashed edge from ``c`` to its parent into a solid one.  Parent must have no solid child."""
        p = c.parent
        assert p.solid is None
        self._dashed_remove(p, c)
        lower = self._solid_tree(c)
        lower.concatenate(self._solid_tree(p))
        p.solid = c

    def _heavy_child(self, a: FNode) -> FNode | None:
        for w in a.children:
            if 2 * w.size > a.size:
                return w
        return None

    def _flush(self, touched: list[FNode]) -> None:
        """Refresh leaves of touched nodes, bottom-up order."""
        seen = set()
        for x in touched:
            if x.id not in self.nodes:
                continue
            self._solid_tree(x).update_handle(x.sleaf, self._s_prop(x), self._s_weight(x))
            seen.add(x)
            if x.is_top():
                label = self._solid_tree(x).digest()
                nprop = (Id(x.id), "D" if x.parent is not None else "R", label)
                tree = x.parent.dpath if x.parent is not None else self.root_path
                tree.update_handle(x.hleaf, nprop, x.size)

    def _propagate(self, x: FNode) -> None:
        """Push a change at ``x`` up through the path tops to the root path."""
        chain = []
        while x is not None:
            chain.append(x)
            t = self._top(x)
            if t is not x:
                chain.append(t)
            x = t.parent
        self._flush(chain)

    # ---- updates

    def new_tree(self, value: Any = 0, node_id: int | None = None) -> int:
        v = self._next_id if node_id is None else int(node_id)
        if v in self.nodes:
            raise StructureError(f"node {v} already exists")
        self._next_id = max(self._next_id, v + 1)
        x = FNode(v, value)
        self.nodes[v] = x
        path = self._new_path()
        x.sleaf = path.insert_handle((Id(v), "S", value, None), 1)
        x.hleaf = self.root_path.insert_sorted((Id(v), "R", path.digest()), 1)
        self.members.insert_sorted((Id(v),))
        return v

    def is_root(self, v: int) -> bool:
        return self._node(v).parent is None

    def root_of(self, v: int) -> int:
        x = self._top(self._node(v))
        while x.parent is not None:
            x = self._top(x.parent)
        return x.id

    def connected(self, u: int, v: int) -> bool:
        return self.root_of(u) == self.root_of(v)

    def link(self, u: int, v: int) -> None:
        """Make root ``u`` a child of ``v`` (a node of another tree)."""
        x, y = self._node(u), self._node(v)
        if x.parent is not None:
            raise StructureError(f"{u} is not a tree root")
        if self.root_of(v) == u:
            raise StructureError(f"{u} and {v} are in the same tree")
        self.root_path.remove_handle(x.hleaf)
        x.hleaf = None
        x.parent = y
        y.children.add(x)
        self._dashed_insert(y, x)
        a = y
        while a is not None:
            a.size += x.size
            a = a.parent
        touched: list[FNode] = []
        c, a = x, y
        while a is not None:
            changed = False
            if a.solid is not c:
                s = a.solid
                if 2 * c.size > a.size:
                    if s is not None:
                        self._make_dashed(s)
                        touched.append(s)
                    self._make_solid(c)
                    changed = True
                elif s is not None and 2 * s.size <= a.size:
                    self._make_dashed(s)
                    touched.append(s)
                    changed = True
                if a.solid is not c:
                    touched.append(c)
                    changed = True
            if changed:
                touched.append(a)
            c, a = a, a.parent
        touched.append(c)
        self._flush(touched)

    def cut(self, u: int) -> None:
        """Remove the edge between ``u`` and its parent."""
        x = self._node(u)
        p = x.parent
        if p is None:
            raise StructureError(f"{u} is a root")
        if p.solid is x:
            self._make_dashed(x)
        self._dashed_remove(p, x)
        p.children.discard(x)
        x.parent = None
        x.hleaf = self.root_path.insert_sorted((Id(u), "R", hc.empty_digest()), x.size)
        a = p
        while a is not None:
            a.size -= x.size
            a = a.parent
        touched: list[FNode] = [x]
        c, a = None, p
        while a is not None:
            changed = c is None
            if c is not None and a.solid is c and 2 * c.size <= a.size:
                self._make_dashed(c)
                changed = True
            if a.solid is None:
                w = self._heavy_child(a)
                if w is not None:
                    self._make_solid(w)
                changed = True
            if c is not None and a.solid is not c:
                touched.append(c)
                changed = True
            if changed:
                touched.append(a)
            c, a = a, a.parent
        touched.append(c)
        self._flush(touched)

    def update_node(self, v: int, value: Any) -> None:
        x = self._node(v)
        x.value = value
        self._propagate(x)

    def destroy_tree(self, w: int) -> None:
        """Remove the whole tree rooted at ``w``."""
        x = self._node(w)
        if x.parent is not None:
            raise StructureError(f"{w} is not a tree root")
        self.root_path.remove_handle(x.hleaf)
        stack = [x]
        while stack:
            y = stack.pop()
            stack.extend(y.children)
            self.members.remove(y.id)
            del self.nodes[y.id]

    def evert(self, v: int) -> None:
        """Re-root the tree of ``v`` at ``v``."""
        x = self._node(v)
        chain = [x]
        while chain[-1].parent is not None:
            chain.append(chain[-1].parent)
        for y in chain[:-1]:
            self.cut(y.id)
        for lower, upper in zip(chain, chain[1:]):
            self.link(upper.id, lower.id)

    # ---- digests

    def forest_digest(self) -> Digest:
        return self.root_path.digest()

    def membership_digest(self) -> Digest:
        return self.members.digest()

    def digest(self) -> Digest:
        return hc.hash_top(self.forest_digest(), self.membership_digest())

    # ---- proofs

    def _chain(self, x: FNode) -> list[tuple[str, AccTree, _Node]]:
        """Steps from ``x`` up to the root path: (kind, path, entry leaf)."""
        steps = []
        cur = x
        while True:
            path = self._solid_tree(cur)
            steps.append(("S", path, cur.sleaf))
            t = self.nodes[path.tail.key]
            if t.parent is None:
                steps.append(("R", self.root_path, t.hleaf))
                return steps
            steps.append(("D", t.parent.dpath, t.hleaf))
            cur = t.parent

    def _path_proof(self, chains, runs: dict, reveal) -> tuple:
        reqs: dict[int, dict] = {}
        for chain in chains:
            for i, (kind, tree, h) in enumerate(chain):
                r = reqs.setdefault(id(tree), {"kind": kind, "tree": tree, "opens": set(), "children": {}})
                r["opens"].add(h)
                if i > 0:
                    r["children"][h.key] = id(chain[i - 1][1])

        def build(key):
            r = reqs[key]
            tree = r["tree"]
            run = runs.get(key)
            opens = [tree.rank(h) for h in r["opens"]]
            acc = tree.prove(run=run, opens=opens, reveal=reveal if r["kind"] == "S" else None)
            kids = tuple((Id(lid), build(k)) for lid, k in sorted(r["children"].items()))
            return (acc.to_value(), kids)

        return build(id(chains[0][-1][1]))

    def _absence(self, v: int) -> tuple:
        if self.members.is_empty():
            return (Id(v), None)
        lo, hi = self.members.find_sorted(v)
        opens = [self.members.rank(h) for h in (lo, hi) if h is not None]
        return (Id(v), self.members.prove(opens=opens).to_value())

    def membership_proof(self, v: int) -> tuple[bool, AccProof | None]:
        if v in self.members:
            return True, self.members.property_node(v)[1]
        val = self._absence(v)[1]
        return False, AccProof(val) if val is not None else None

    def forest_property(self, u: int, v: int, reveal: Iterable[int] | None = None) -> tuple[tuple, "ForestProof"]:
        """Property of the tree path from ``u`` to ``v`` with its proof.

        The answer is ``("path", property)``, ``("disconnected",)`` or
        ``("absent", ids)``.
        """
        missing = tuple(Id(x) for x in sorted({u, v}) if x not in self.nodes)
        if missing:
            proof = ForestProof(None, self.forest_digest(), tuple(self._absence(x) for x in missing), None)
            return ("absent", missing), proof
        cu, cv = self._chain(self.nodes[u]), self._chain(self.nodes[v])
        runs: dict[int, tuple[int, int]] = {}
        if cu[-1][2] is cv[-1][2]:
            solids_v = {id(t): h for k, t, h in cv if k == "S"}
            for k, tree, h in cu:
                if k == "S" and id(tree) in solids_v:
                    a, b = tree.rank(h), tree.rank(solids_v[id(tree)])
                    runs[id(tree)] = (min(a, b), max(a, b))
                    lca_tree = tree
                    break
            for chain in (cu, cv):
                for k, tree, h in chain:
                    if tree is lca_tree:
                        break
                    if k == "S":
                        runs[id(tree)] = (tree.rank(h), len(tree) - 1)
        rv = frozenset(reveal) if reveal is not None else None
        paths = self._path_proof([cu, cv], runs, rv)
        proof = ForestProof(paths, None, (), self.membership_digest())
        # the answer shows exactly what the proof shows
        return _forest_answer(self.schema, proof, u, v), proof

    # ---- audits

    def tree_nodes(self, root: int) -> list[int]:
        out, stack = [], [self._node(root)]
        while stack:
            y = stack.pop()
            out.append(y.id)
            stack.extend(y.children)
        return out

    def roots(self) -> list[int]:
        return [x.key for x in self.root_path.nodes()]

    def accumulator_nodes(self) -> int:
        total = self.root_path.accumulator_nodes()
        seen = set()
        for x in self.nodes.values():
            t = self._solid_tree(x)
            if id(t) not in seen:
                seen.add(id(t))
                total += t.accumulator_nodes()
            if x.dpath is not None:
                total += x.dpath.accumulator_nodes()
        return total

    def max_dashed_hops(self) -> int:
        """Largest number of dashed edges on any leaf-to-root path."""
        best = 0
        for x in self.nodes.values():
            if x.children:
                continue
            hops, y = 0, x
            while y.parent is not None:
                if y.parent.solid is not y:
                    hops += 1
                y = y.parent
            best = max(best, hops)
        return best

    def audit(self) -> None:
        """Check sizes, the heavy rule, path layout and every embedded label."""
        roots = self.roots()
        if sorted(roots) != roots:
            raise StructureError("root path out of order")
        if set(roots) != {x.id for x in self.nodes.values() if x.parent is None}:
            raise StructureError("root path does not list exactly the tree roots")
        if self.members.ids() != sorted(self.nodes):
            raise StructureError("membership set out of date")
        self.members.audit()
        self.root_path.audit()
        for x in self.nodes.values():
            size = 1 + sum(c.size for c in x.children)
            if size != x.size:
                raise StructureError(f"size of {x.id} is {x.size}, expected {size}")
            for c in x.children:
                if c.parent is not x:
                    raise StructureError("child/parent links disagree")
            heavy = [c for c in x.children if 2 * c.size > x.size]
            if (heavy[0] if heavy else None) is not x.solid:
                raise StructureError(f"heavy-child rule violated at {x.id}")
            path = self._solid_tree(x)
            if x.sleaf.nprop != self._s_prop(x) or x.sleaf.weight != (self._s_weight(x) if self.biased else 1):
                raise StructureError(f"stale solid leaf at {x.id}")
            nxt = x.sleaf.next
            if x.solid is None:
                if x.sleaf.prev is not None:
                    raise StructureError(f"{x.id} has no solid child but is not a path head")
            elif x.sleaf.prev is not x.solid.sleaf:
                raise StructureError(f"solid child of {x.id} is not its predecessor")
            if x.is_top():
                if nxt is not None:
                    raise StructureError(f"path top {x.id} is not a path tail")
                path.audit()
                want = (Id(x.id), "D" if x.parent is not None else "R", path.digest())
                if x.hleaf is None or x.hleaf.nprop != want:
                    raise StructureError(f"embedded label of path topped by {x.id} is stale")
                host = x.parent.dpath if x.parent is not None else self.root_path
                if host is None or not host.contains_handle(x.hleaf):
                    raise StructureError(f"leaf of {x.id} sits in the wrong path")
            elif x.hleaf is not None:
                raise StructureError(f"{x.id} has a dashed leaf but is on a solid edge")
            light = sorted(c.id for c in x.children if c is not x.solid)
            if x.dpath is None:
                if light:
                    raise StructureError(f"{x.id} lacks its dashed path")
            else:
                x.dpath.audit()
                if [y.key for y in x.dpath.nodes()] != light:
                    raise StructureError(f"dashed path of {x.id} does not match its light children")
        for r in roots:
            m = self.nodes[r].size
            bound = math.ceil(math.log2(m)) if m > 1 else 0
            for v in self.tree_nodes(r):
                hops, y = 0, self.nodes[v]
                while y.parent is not None:
                    hops += y.parent.solid is not y
                    y = y.parent
                if hops > bound:
                    raise StructureError(f"{hops} dashed edges above {v} in a tree of {m} nodes")


# --------------------------------------------------------------------------- proofs


@dataclass(frozen=True)
class ForestProof:
    """Nested path proofs from the root path down to the queried nodes.

    ``paths`` is ``(accumulator proof, ((leaf id, sub-proof), ...))``; the
    sub-proof under a leaf is for the path whose label that leaf embeds.
    """

    paths: tuple | None
    forest_digest: Digest | None
    absence: tuple
    membership_digest: Digest | None

    def to_value(self) -> tuple:
        return (self.paths, self.forest_digest, self.absence, self.membership_digest)

    @classmethod
    def from_value(cls, value: Any) -> "ForestProof":
        if not (isinstance(value, tuple) and len(value) == 4 and isinstance(value[2], tuple)):
            raise Rejected("malformed-proof", "forest proof layout")
        return cls(*value)

    def _acc_values(self):
        stack = [self.paths] if self.paths is not None else []
        while stack:
            pp = stack.pop()
            if isinstance(pp, tuple) and len(pp) == 2:
                yield pp[0]
                stack.extend(sub for _, sub in pp[1])
        for entry in self.absence:
            if isinstance(entry, tuple) and len(entry) == 2 and entry[1] is not None:
                yield entry[1]

    def entry_count(self) -> int:
        return sum(AccProof(v).entry_count() for v in self._acc_values())

    def size_bytes(self) -> int:
        return len(hc.encode(self.to_value()))


@dataclass
class _PathEval:
    kind: str
    ev: Evaluated
    parent: int | None
    parent_leaf: int | None
    leaves: dict


def _walk_paths(schema: ForestSchema, paths: tuple) -> tuple[Digest, list[_PathEval]]:
    schemas = {"R": ROOT_SCHEMA, "S": schema.solid, "D": DASHED_SCHEMA}
    out: list[_PathEval] = []

    def walk(pp, kind, expected, parent, parent_leaf, depth):
        if depth > 256:
            raise Rejected("malformed-proof", "path hierarchy too deep")
        if not (isinstance(pp, tuple) and len(pp) == 2 and isinstance(pp[1], tuple)):
            raise Rejected("malformed-proof", "path proof layout")
        ev = evaluate_proof(AccProof.from_value(pp[0]), schemas[kind])
        if expected is not None and ev.label != expected:
            raise Rejected("digest-mismatch", "embedded path label")
        leaves = {}
        for it in ev.items:
            if it.kind == "F":
                if it.nprop[0] in leaves:
                    raise Rejected("malformed-proof", "leaf opened twice")
                leaves[it.nprop[0]] = it
        idx = len(out)
        out.append(_PathEval(kind, ev, parent, parent_leaf, leaves))
        prev = None
        for entry in pp[1]:
            if not (isinstance(entry, tuple) and len(entry) == 2 and isinstance(entry[0], Id)):
                raise Rejected("malformed-proof", "child entry layout")
            lid, sub = entry
            if prev is not None and lid <= prev:
                raise Rejected("malformed-proof", "child paths out of order")
            if lid not in leaves:
                raise Rejected("malformed-proof", "child path hangs off an unopened leaf")
            prev = lid
            emb = leaves[lid].nprop[3] if kind == "S" else leaves[lid].nprop[2]
            if not isinstance(emb, Digest):
                raise Rejected("malformed-proof", "leaf embeds no path label")
            walk(sub, "D" if kind == "S" else "S", emb, idx, lid, depth + 1)
        return ev.label

    label = walk(paths, "R", None, None, None, 0)
    return label, out


def _find_chain(evals: list[_PathEval], x: int) -> list[tuple[int, int]]:
    hits = [i for i, pe in enumerate(evals) if pe.kind == "S" and x in pe.leaves]
    if len(hits) != 1:
        raise Rejected("endpoint-mismatch", f"node {x} is not opened exactly once")
    chain, i, entry = [], hits[0], x
    while i is not None:
        chain.append((i, entry))
        entry = evals[i].parent_leaf
        i = evals[i].parent
    return chain


def _run_views(pe: _PathEval) -> tuple[int, list[tuple]]:
    start, run = pe.ev.run()
    return start, [it.view for it in run]


def _fold_chains(schema: ForestSchema, evals, u: int, v: int):
    cu, cv = _find_chain(evals, u), _find_chain(evals, v)
    if evals[cu[-1][0]].kind != "R" or evals[cv[-1][0]].kind != "R":
        raise Rejected("malformed-proof", "chain does not reach the root path")
    if cu[-1][1] != cv[-1][1]:
        return ("disconnected",)
    in_v = {i: e for i, e in cv if evals[i].kind == "S"}
    lca = next(k for k, (i, _) in enumerate(cu) if evals[i].kind == "S" and i in in_v)
    lidx = cu[lca][0]
    lca_v = next(k for k, (i, _) in enumerate(cv) if i == lidx)
    sides = []
    for chain, upto in ((cu, lca), (cv, lca_v)):
        views = []
        for i, entry in chain[:upto]:
            pe = evals[i]
            if pe.kind != "S":
                continue
            start, run = _run_views(pe)
            if not run or pe.ev.items[start].nprop is None or pe.ev.items[start].nprop[0] != entry:
                raise Rejected("fold-mismatch", "run does not start at the chain entry")
            if start + len(run) != len(pe.ev.items):
                raise Rejected("fold-mismatch", "run does not reach the path top")
            views.extend(run)
        sides.append(views)
    pe = evals[lidx]
    pos = {it_id: k for k, it in enumerate(pe.ev.items) if it.kind == "F" for it_id in (it.nprop[0],)}
    iu, iv = pos[cu[lca][1]], pos[in_v[lidx]]
    start, run = _run_views(pe)
    if start != min(iu, iv) or start + len(run) - 1 != max(iu, iv):
        raise Rejected("fold-mismatch", "run does not join the two entries")
    sides[0 if iu <= iv else 1].extend(run)
    fold_u = schema.solid.fold_views(sides[0]) if sides[0] else None
    if not sides[1]:
        total = fold_u
    else:
        fold_v = schema.reverse_view(schema.solid.fold_views(sides[1]))
        total = schema.solid.fold_views([fold_u, fold_v]) if fold_u is not None else fold_v
    if total is None or total[0][1] != u or total[1][1] != v:
        raise Rejected("endpoint-mismatch")
    return ("path", total)


def _forest_answer(schema: ForestSchema, proof: ForestProof, u: int, v: int) -> tuple:
    _, evals = _walk_paths(schema, proof.paths)
    res = _fold_chains(schema, evals, u, v)
    if res[0] == "path":
        return ("path", tuple(val if shown else HIDDEN for shown, val in res[1]))
    return res


def forest_answer_to_value(answer: tuple) -> tuple:
    if answer and answer[0] == "path":
        return ("path", prop_to_value(answer[1]))
    return answer


def forest_answer_from_value(value: Any) -> tuple:
    if not isinstance(value, tuple) or not value:
        raise Rejected("malformed-proof", "answer layout")
    if value[0] == "path" and len(value) == 2:
        return ("path", prop_from_value(value[1]))
    return value


def _check_absent(x: int, value: Any, md: Digest | None) -> Digest:
    if value is None:
        if md is not None and md != hc.empty_digest():
            raise Rejected("membership-mismatch", "absence claimed without proof")
        return hc.empty_digest()
    ev = evaluate_proof(AccProof.from_value(value), MEMBERSHIP_SCHEMA)
    items = ev.items
    for k, it in enumerate(items):
        if it.kind != "F":
            continue
        key = it.nprop[0]
        if key == x:
            raise Rejected("membership-mismatch", f"{x} is present")
        if k == 0 and key > x:
            return ev.label
        if key < x:
            if k == len(items) - 1:
                return ev.label
            nxt = items[k + 1]
            if nxt.kind == "F" and nxt.nprop[0] > x:
                return ev.label
    raise Rejected("membership-mismatch", f"no adjacent pair brackets {x}")


def membership_label(x: int, present: bool, proof: AccProof | None) -> Digest:
    """Membership digest that ``membership_proof(x)`` commits to; raises unless it shows ``present``."""
    if not present:
        return _check_absent(x, proof.to_value() if proof is not None else None, None)
    if proof is None:
        raise Rejected("malformed-proof", "presence needs a proof")
    ev = evaluate_proof(proof, MEMBERSHIP_SCHEMA)
    opened = [it for it in ev.items if it.kind == "F"]
    if len(opened) != 1 or opened[0].nprop != (Id(x),):
        raise Rejected("membership-mismatch", f"proof does not open {x}")
    return ev.label


def forest_proof_digest(query: tuple, answer: Any, proof: ForestProof, schema: ForestSchema | None = None) -> Digest:
    """Check ``answer`` against ``proof`` for ``query = (u, v)`` and return the digest it commits to."""
    schema = schema or sum_count_schema()
    if not isinstance(proof, ForestProof):
        raise Rejected("malformed-proof", "not a forest proof")
    u, v = query
    if not isinstance(answer, tuple) or not answer:
        raise Rejected("malformed-proof", "answer layout")
    if answer[0] == "absent":
        if proof.paths is not None or not isinstance(proof.forest_digest, Digest):
            raise Rejected("malformed-proof", "absence proof layout")
        ids = answer[1] if len(answer) == 2 and isinstance(answer[1], tuple) else None
        if not ids or list(ids) != sorted(set(ids)) or not all(type(i) is Id for i in ids):
            raise Rejected("malformed-proof", "absent ids must be sorted node ids")
        if not set(ids) <= {u, v} or len(proof.absence) != len(ids):
            raise Rejected("membership-mismatch", "absent ids do not match the query")
        md = None
        for x, entry in zip(ids, proof.absence):
            if not (isinstance(entry, tuple) and len(entry) == 2 and type(entry[0]) is Id and entry[0] == x):
                raise Rejected("membership-mismatch", "absence entries out of order")
            label = _check_absent(x, entry[1], proof.membership_digest)
            if md is not None and label != md:
                raise Rejected("membership-mismatch", "absence proofs disagree")
            md = label
        return hc.hash_top(proof.forest_digest, md)
    if proof.paths is None or not isinstance(proof.membership_digest, Digest) or proof.forest_digest is not None:
        raise Rejected("malformed-proof", "path proof layout")
    label, evals = _walk_paths(schema, proof.paths)
    res = _fold_chains(schema, evals, u, v)
    if answer[0] != res[0] or len(answer) != len(res):
        raise Rejected("fold-mismatch", f"answer says {answer[0]}, proof says {res[0]}")
    if res[0] == "path":
        check_answer_view(schema.solid, res[1], answer[1])
    return hc.hash_top(label, proof.membership_digest)


def verify_forest_proof(
    query: tuple,
    answer: Any,
    proof: ForestProof,
    sd: hc.SignedDigest,
    pk: bytes,
    now: int,
    schema: ForestSchema | None = None,
    max_age: int = hc.DEFAULT_MAX_AGE,
) -> Any:
    """Check a ``forest_property`` answer; ``query`` is ``(u, v)``."""
    hc.verify_signed_digest(sd, pk, now, max_age=max_age)
    if forest_proof_digest(query, answer, proof, schema) != sd.digest:
        raise Rejected("digest-mismatch")
    return answer

"""Authenticated connectivity, path and biconnectivity queries on growing graphs.

A spanning forest answers path-type queries.  A block-cut forest (vertex
nodes ``2v``, block nodes ``2b + 1``) answers biconnectivity: two distinct
vertices share a block exactly when their vertex nodes are at distance 2.

Path attributes, in order: node ids (threaded), length in edges, root-path
flag, type bitmask.  Properties are prehashed per attribute so any subset
can be disclosed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from . import hashcore as hc
from .accumulator import HIDDEN, concat_ids
from .errors import NotFound, Rejected, StructureError
from .forest import (
    Forest,
    ForestProof,
    ForestSchema,
    forest_answer_from_value,
    forest_answer_to_value,
    forest_proof_digest,
)
from .hashcore import Digest, Id

A_IDS, A_LEN, A_ROOT, A_TYPE = 0, 1, 2, 3
TYPE_WIDTH = 8
VERTEX_NODE, BLOCK_NODE = 1, 2

# attributes disclosed per query kind
REVEAL = {
    "connected": (A_ROOT,),
    "path": (A_IDS,),
    "length": (A_LEN,),
    "type": (A_TYPE,),
    "biconnected": (A_LEN, A_TYPE),
}


def graph_schema() -> ForestSchema:
    return ForestSchema(
        "graph",
        lambda v, mask: ((Id(v),), 0, False, mask),
        (concat_ids, lambda a, b: a + b + 1, lambda a, b: a or b, lambda a, b: a | b),
        (lambda ids: tuple(reversed(ids)), lambda a: a, lambda a: a, lambda a: a),
        prehashed=True,
        threaded=A_IDS,
    )


GRAPH_SCHEMA = graph_schema()


@dataclass(frozen=True)
class GraphProof:
    """A forest answer and proof plus the digest of the other forest."""

    forest: str  # "sf" or "bc"
    forest_answer: tuple
    proof: ForestProof
    other_digest: Digest

    def entry_count(self) -> int:
        return self.proof.entry_count()

    def size_bytes(self) -> int:
        return len(hc.encode(self.to_value()))

    def to_value(self) -> tuple:
        return (self.forest, forest_answer_to_value(self.forest_answer), self.proof.to_value(), self.other_digest)

    @classmethod
    def from_value(cls, value: Any) -> "GraphProof":
        if not (isinstance(value, tuple) and len(value) == 4 and value[0] in ("sf", "bc")):
            raise Rejected("malformed-proof", "graph proof layout")
        return cls(value[0], forest_answer_from_value(value[1]), ForestProof.from_value(value[2]), value[3])


class Graph:
    def __init__(self, type_width: int = TYPE_WIDTH, biased: bool = True, biconnectivity: bool = True):
        if not 1 <= type_width <= 62:
            raise ValueError("type width must be between 1 and 62")
        self.type_width = type_width
        self.sf = Forest(GRAPH_SCHEMA, biased=biased)
        # without biconnectivity the block-cut forest stays empty
        self.bc = Forest(GRAPH_SCHEMA, biased=biased)
        self.biconnectivity = biconnectivity
        self.types: dict[int, int] = {}
        self.edges: dict[int, tuple[int, int]] = {}
        self.tree_edges: set[int] = set()
        self.nontree: list[int] = []
        self._blocks = 0

    # ---- updates

    def make_vertex(self, v: int) -> None:
        if v in self.types:
            raise StructureError(f"vertex {v} already exists")
        if v < 0:
            raise ValueError("vertex ids are non-negative")
        self.types[v] = 0
        self.sf.new_tree(0, node_id=v)
        if self.biconnectivity:
            self.bc.new_tree(VERTEX_NODE, node_id=2 * v)

    def _require(self, v: int) -> None:
        if v not in self.types:
            raise NotFound(f"vertex {v} does not exist")

    def set_type(self, v: int, flag: int) -> None:
        self._require(v)
        if not 0 <= flag < self.type_width:
            raise ValueError(f"type flag {flag} out of range")
        self.types[v] |= 1 << flag
        self.sf.update_node(v, self.types[v])

    def _join(self, forest: Forest, a: int, b: int) -> None:
        """Connect trees of ``a`` and ``b`` by an edge a-b, re-rooting the smaller one."""
        ra, rb = forest.root_of(a), forest.root_of(b)
        if forest.nodes[ra].size > forest.nodes[rb].size:
            a, b = b, a
        forest.evert(a)
        forest.link(a, b)

    def insert_edge(self, u: int, v: int, e: int | None = None) -> int:
        self._require(u)
        self._require(v)
        if e is None:
            e = len(self.edges)
        if e in self.edges:
            raise StructureError(f"edge {e} already exists")
        self.edges[e] = (u, v)
        if u == v:
            self.nontree.append(e)
            return e
        if self.sf.root_of(u) != self.sf.root_of(v):
            self._join(self.sf, u, v)
            self.tree_edges.add(e)
            if not self.biconnectivity:
                return e
            b = 2 * self._blocks + 1
            self._blocks += 1
            self.bc.new_tree(BLOCK_NODE, node_id=b)
            self.bc.link(b, 2 * v)
            self._join(self.bc, 2 * u, b)
        else:
            self.nontree.append(e)
            if self.biconnectivity:
                self._condense(2 * u, 2 * v)
        return e

    def _bc_path(self, a: int, b: int) -> list[int]:
        nodes = self.bc.nodes
        up_a, x = [a], nodes[a]
        while x.parent is not None:
            x = x.parent
            up_a.append(x.id)
        pos = {y: i for i, y in enumerate(up_a)}
        up_b, y = [b], nodes[b]
        while y.id not in pos:
            y = y.parent
            up_b.append(y.id)
        lca = y.id
        return up_a[: pos[lca] + 1] + list(reversed(up_b[:-1]))

    def _condense(self, a: int, b: int) -> None:
        path = self._bc_path(a, b)
        blocks = [x for x in path if x % 2 == 1]
        if len(blocks) <= 1:
            return
        nodes = self.bc.nodes
        depth = {x: self._depth(x) for x in blocks}
        # the block nearest the root survives; the rest fold into it top-down,
        # so each folded block's parent vertex already neighbours the survivor
        keep = min(blocks, key=lambda x: (depth[x], x))
        for blk in sorted((x for x in blocks if x != keep), key=lambda x: (depth[x], x)):
            for w in sorted(c.id for c in nodes[blk].children):
                self.bc.cut(w)
                self.bc.link(w, keep)
            self.bc.cut(blk)
            self.bc.destroy_tree(blk)

    def _depth(self, v: int) -> int:
        d, x = 0, self.bc.nodes[v]
        while x.parent is not None:
            d += 1
            x = x.parent
        return d

    # ---- digests

    def digest(self) -> Digest:
        return hc.hash_top(self.sf.digest(), self.bc.digest())

    # ---- queries

    def _sf_query(self, kind: str, u: int, v: int) -> GraphProof:
        ans, proof = self.sf.forest_property(u, v, reveal=REVEAL[kind])
        return GraphProof("sf", ans, proof, self.bc.digest())

    def q_are_connected(self, u: int, v: int) -> tuple[bool, GraphProof]:
        gp = self._sf_query("connected", u, v)
        return gp.forest_answer[0] == "path", gp

    def q_path(self, u: int, v: int) -> tuple[tuple | None, GraphProof]:
        gp = self._sf_query("path", u, v)
        return (gp.forest_answer[1][2 + A_IDS] if gp.forest_answer[0] == "path" else None), gp

    def q_path_length(self, u: int, v: int) -> tuple[int | None, GraphProof]:
        gp = self._sf_query("length", u, v)
        return (gp.forest_answer[1][2 + A_LEN] if gp.forest_answer[0] == "path" else None), gp

    def q_type(self, u: int, v: int, flag: int) -> tuple[bool | None, GraphProof]:
        if not 0 <= flag < self.type_width:
            raise ValueError(f"type flag {flag} out of range")
        gp = self._sf_query("type", u, v)
        if gp.forest_answer[0] != "path":
            return None, gp
        return bool(gp.forest_answer[1][2 + A_TYPE] >> flag & 1), gp

    def q_are_biconnected(self, u: int, v: int) -> tuple[bool, GraphProof]:
        if not self.biconnectivity:
            raise StructureError("this graph does not track biconnectivity")
        ans, proof = self.bc.forest_property(2 * u, 2 * v, reveal=REVEAL["biconnected"])
        gp = GraphProof("bc", ans, proof, self.sf.digest())
        return _biconnected_from(ans, u, v), gp

    def query(self, q: tuple) -> tuple[Any, GraphProof]:
        kind = q[0]
        if kind == "connected":
            return self.q_are_connected(q[1], q[2])
        if kind == "path":
            return self.q_path(q[1], q[2])
        if kind == "length":
            return self.q_path_length(q[1], q[2])
        if kind == "type":
            return self.q_type(q[1], q[2], q[3])
        if kind == "biconnected":
            return self.q_are_biconnected(q[1], q[2])
        raise ValueError(f"unknown graph query {kind!r}")

    # ---- audits

    def blocks(self) -> list[frozenset]:
        """Vertex sets of the blocks in the block-cut forest."""
        out = []
        for x in self.bc.nodes.values():
            if x.id % 2 == 1:
                members = {c.id // 2 for c in x.children}
                if x.parent is not None:
                    members.add(x.parent.id // 2)
                out.append(frozenset(members))
        return out

    def audit(self) -> None:
        self.sf.audit()
        self.bc.audit()
        for x in self.bc.nodes.values():
            kind = x.id % 2
            if x.value != (BLOCK_NODE if kind else VERTEX_NODE):
                raise StructureError(f"node {x.id} has the wrong kind tag")
            for c in x.children:
                if c.id % 2 == kind:
                    raise StructureError("block-cut forest is not bipartite")
            if kind and len(x.children) + (x.parent is not None) < 2:
                raise StructureError(f"block node {x.id} has fewer than two vertices")


def _biconnected_from(ans: tuple, u: int, v: int) -> bool:
    if ans[0] != "path":
        return False
    return u == v or ans[1][2 + A_LEN] == 2


def verify_graph_answer(
    query: tuple,
    answer: Any,
    proof: GraphProof,
    sd: hc.SignedDigest,
    pk: bytes,
    now: int,
    max_age: int = hc.DEFAULT_MAX_AGE,
) -> Any:
    """Check a graph query answer; returns it on success, raises :class:`Rejected` otherwise."""
    hc.verify_signed_digest(sd, pk, now, max_age=max_age)
    if not isinstance(proof, GraphProof):
        raise Rejected("malformed-proof", "not a graph proof")
    kind = query[0]
    if kind not in REVEAL:
        raise Rejected("malformed-proof", f"unknown query kind {kind!r}")
    want_forest = "bc" if kind == "biconnected" else "sf"
    if proof.forest != want_forest:
        raise Rejected("endpoint-mismatch", "proof is for the other forest")
    u, v = query[1], query[2]
    fq = (2 * u, 2 * v) if want_forest == "bc" else (u, v)
    fa = proof.forest_answer
    d = forest_proof_digest(fq, fa, proof.proof, GRAPH_SCHEMA)
    if not isinstance(proof.other_digest, Digest):
        raise Rejected("malformed-proof", "other forest digest")
    top = hc.hash_top(d, proof.other_digest) if want_forest == "sf" else hc.hash_top(proof.other_digest, d)
    if top != sd.digest:
        raise Rejected("digest-mismatch")
    joined = fa[0] == "path"
    if joined:
        prop = fa[1]
        for i in REVEAL[kind]:
            if prop[2 + i] is HIDDEN:
                raise Rejected("fold-mismatch", "needed attribute was not disclosed")
    if kind == "connected":
        expect = joined
    elif kind == "path":
        expect = tuple(prop[2 + A_IDS]) if joined else None
    elif kind == "length":
        expect = prop[2 + A_LEN] if joined else None
    elif kind == "type":
        flag = query[3]
        expect = bool(prop[2 + A_TYPE] >> flag & 1) if joined else None
    else:
        expect = _biconnected_from(fa, u, v)
        if joined and u != v and expect and not prop[2 + A_TYPE] & BLOCK_NODE:
            raise Rejected("fold-mismatch", "distance-2 path does not pass a block node")
    if answer != expect or type(answer) is not type(expect):
        raise Rejected("fold-mismatch", f"claimed {answer!r}, proof shows {expect!r}")
    return answer

import random

import pytest
from hypothesis import given, settings, strategies as st

from authds import hashcore as hc
from authds.errors import NotFound, Rejected, StructureError
from authds.forest import Forest, ForestProof, membership_label, verify_forest_proof

from conftest import T0


class Oracle:
    """Parent pointers and values; paths by walking to the lowest common ancestor."""

    def __init__(self):
        self.par, self.val = {}, {}

    def root(self, x):
        while self.par[x] is not None:
            x = self.par[x]
        return x

    def path(self, u, v):
        def anc(x):
            out = [x]
            while self.par[x] is not None:
                x = self.par[x]
                out.append(x)
            return out

        au, av = anc(u), anc(v)
        if au[-1] != av[-1]:
            return None
        on_v = set(av)
        lca = next(x for x in au if x in on_v)
        return au[: au.index(lca) + 1] + av[: av.index(lca)][::-1]

    def evert(self, x):
        chain = [x]
        while self.par[chain[-1]] is not None:
            chain.append(self.par[chain[-1]])
        for a, b in zip(chain, chain[1:]):
            self.par[b] = a
        self.par[x] = None


def random_op(rng, o, n_max=10**6):
    """One random valid operation on a forest mirrored by ``o``."""
    ids = list(o.par)
    r = rng.random()
    if not ids or r < 0.1:
        v = max(ids, default=-1) + 1
        return ("new_tree", v, rng.randint(-50, 50))
    if r < 0.5:
        u = rng.choice([x for x in ids if o.par[x] is None])
        v = rng.choice(ids)
        if o.root(v) != u:
            return ("link", u, v)
    if r < 0.75:
        cand = [x for x in ids if o.par[x] is not None]
        if cand:
            return ("cut", rng.choice(cand))
    if r < 0.88:
        x = rng.choice(ids)
        return ("update", x, o.val[x] + rng.choice((-2, -1, 1, 2)))
    if r < 0.97:
        return ("evert", rng.choice(ids))
    roots = [x for x in ids if o.par[x] is None]
    return ("destroy", rng.choice(roots))


def apply(f, o, op):
    code, *a = op
    if code == "new_tree":
        f.new_tree(a[1], node_id=a[0])
        o.par[a[0]], o.val[a[0]] = None, a[1]
    elif code == "link":
        f.link(*a)
        o.par[a[0]] = a[1]
    elif code == "cut":
        f.cut(a[0])
        o.par[a[0]] = None
    elif code == "update":
        f.update_node(*a)
        o.val[a[0]] = a[1]
    elif code == "evert":
        f.evert(a[0])
        o.evert(a[0])
    elif code == "destroy":
        gone = [x for x in o.par if o.root(x) == a[0]]
        f.destroy_tree(a[0])
        for x in gone:
            del o.par[x], o.val[x]


def build_random(rng, n, steps):
    f, o = Forest(), Oracle()
    for v in range(n):
        apply(f, o, ("new_tree", v, rng.randint(-50, 50)))
    for _ in range(steps):
        op = random_op(rng, o)
        if op[0] not in ("destroy", "new_tree"):
            apply(f, o, op)
    return f, o


def test_path_property_matches_oracle(keys):
    rng = random.Random(10)
    f, o = build_random(rng, 512, 1500)
    f.audit()
    sd = hc.sign_digest(f.digest(), T0, keys)
    for _ in range(1000):
        u, v = rng.randrange(512), rng.randrange(512)
        ans, pr = f.forest_property(u, v)
        p = o.path(u, v)
        if p is None:
            assert ans == ("disconnected",)
        else:
            assert ans == ("path", (u, v, sum(o.val[x] for x in p), len(p)))
        pr = ForestProof.from_value(hc.decode(hc.encode(pr.to_value())))
        verify_forest_proof((u, v), ans, pr, sd, keys.public_key, T0)


def test_absent_nodes(keys):
    f = Forest()
    for v in (0, 2, 4):
        f.new_tree(v, node_id=v)
    sd = hc.sign_digest(f.digest(), T0, keys)
    ans, pr = f.forest_property(1, 2)
    assert ans[0] == "absent" and list(ans[1]) == [1]
    verify_forest_proof((1, 2), ans, pr, sd, keys.public_key, T0)
    with pytest.raises(Rejected):
        verify_forest_proof((3, 2), ans, pr, sd, keys.public_key, T0)


def test_chain_of_eight_has_few_dashed_edges():
    f = Forest()
    for v in range(8):
        f.new_tree(1, node_id=v)
    for v in range(1, 8):
        f.link(v - 1, v)  # 0 hangs under 1, 1 under 2, ...
    f.audit()
    assert f.max_dashed_hops() <= 3
    assert f.root_of(0) == 7


def test_operation_errors():
    f = Forest()
    a, b = f.new_tree(1), f.new_tree(2)
    f.link(a, b)
    with pytest.raises(StructureError):
        f.link(a, b)
    with pytest.raises(StructureError):
        f.link(b, a)
    with pytest.raises(StructureError):
        f.cut(b)
    with pytest.raises(StructureError):
        f.destroy_tree(a)
    with pytest.raises(NotFound):
        f.cut(99)


def test_new_tree_and_updates_change_digest():
    rng = random.Random(11)
    f, o = Forest(), Oracle()
    seen = {f.digest()}
    for v in range(30):
        apply(f, o, ("new_tree", v, 0))
        assert f.digest() not in seen
        seen.add(f.digest())
    unchanged = 0
    for _ in range(1000):
        op = random_op(rng, o)
        if op[0] == "destroy" or (op[0] == "evert" and o.par[op[1]] is None):
            continue  # everting a root is a no-op
        before = f.digest()
        apply(f, o, op)
        unchanged += f.digest() == before
    assert unchanged == 0


def test_membership_against_set(keys):
    rng = random.Random(12)
    f = Forest()
    present = set(rng.sample(range(1000), 200))
    for v in sorted(present):
        f.new_tree(0, node_id=v)
    md = f.membership_digest()
    for x in [rng.randrange(-5, 1005) for _ in range(500)]:
        ok, proof = f.membership_proof(x)
        assert ok == (x in present)
        assert membership_label(x, ok, proof) == md
        with pytest.raises(Rejected):
            membership_label(x, not ok, proof)


def test_cross_pair_substitution_rejected(keys):
    rng = random.Random(13)
    f, o = build_random(rng, 100, 300)
    sd = hc.sign_digest(f.digest(), T0, keys)
    rejected = 0
    for _ in range(300):
        a, b, c, d = (rng.randrange(100) for _ in range(4))
        if {a, b} == {c, d}:
            continue
        ans, pr = f.forest_property(c, d)
        with pytest.raises(Rejected):
            verify_forest_proof((a, b), ans, pr, sd, keys.public_key, T0)
        rejected += 1
    assert rejected > 250


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.integers(5, 60))
def test_replicas_agree(seed, steps):
    rng = random.Random(seed)
    f1, f2, o = Forest(), Forest(), Oracle()
    for _ in range(steps):
        op = random_op(rng, o)
        apply(f1, o, op)
        code, *a = op
        {"new_tree": lambda: f2.new_tree(a[1], node_id=a[0]), "link": lambda: f2.link(*a),
         "cut": lambda: f2.cut(*a), "update": lambda: f2.update_node(*a), "evert": lambda: f2.evert(*a),
         "destroy": lambda: f2.destroy_tree(*a)}[code]()
        assert f1.digest() == f2.digest()
    f1.audit()
    assert f1.accumulator_nodes() <= 4 * max(1, len(f1.nodes))

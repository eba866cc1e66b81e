import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from authds import hashcore as hc
from authds.cascade import (
    POS_INF,
    CatalogGraph,
    FCProof,
    build_fc,
    routing_digest,
    traversal_digest,
    traversal_label,
    verify_fc,
    verify_traversal,
)
from authds.errors import Rejected
from authds.hashcore import Digest, Id

from conftest import T0
from oracles import successor


def random_dag(rng, k, n, d=3, tree=False, span=None):
    """Nodes 0..k-1 in topological order; node 0 is the only source."""
    outdeg, indeg, edges = [0] * k, [0] * k, []
    for v in range(1, k):
        want = 1 if tree else rng.choice((1, 1, 2))
        for u in rng.sample(range(v), min(v, want)):
            if outdeg[u] < d and indeg[v] < d:
                edges.append((u, v))
                outdeg[u] += 1
                indeg[v] += 1
        if indeg[v] == 0:
            u = min(range(v), key=lambda w: outdeg[w])
            edges.append((u, v))
            outdeg[u] += 1
            indeg[v] += 1
    sizes = [rng.randint(0, 2 * n // k) for _ in range(k)]
    span = span or 4 * n + 10
    cats = {v: sorted(rng.sample(range(-span, span), sizes[v])) for v in range(k)}
    return CatalogGraph(cats, edges)


def random_query(rng, g, p=0.5):
    q = {g.source}
    for v in g.order:
        if v != g.source and any(u in q for u in g.parents[v]) and rng.random() < p:
            q.add(v)
    return frozenset(q)


def test_small_catalog_answers(keys):
    g = CatalogGraph({0: [2, 5, 9]}, [])
    s = build_fc(g)
    sd = hc.sign_digest(s.digest(), T0, keys)
    for x, want in ((5, 5), (6, 9), (10, None), (-100, 2)):
        ans, pr = s.query(x, [0])
        assert ans == {0: want}
        verify_fc(x, [0], ans, pr, sd, keys.public_key, T0)
    # one catalog, one block, no inter-block data
    assert s.block_count() == 1
    assert pr.tree[3] is None and pr.tree[4] == ()


def test_two_node_pairing():
    g = CatalogGraph({0: [1, 4, 7, 10, 13], 1: [2, 3, 5, 8, 11, 12]}, [(0, 1)])
    s = build_fc(g)
    s.audit()
    assert s.nonproper_count() > 0


def test_locate_matches_binary_search(keys):
    rng = random.Random(30)
    for trial in range(20):
        g = random_dag(rng, rng.randint(1, 20), rng.randint(1, 400), tree=trial % 2 == 0)
        s = build_fc(g)
        s.audit()
        sd = hc.sign_digest(s.digest(), T0, keys)
        for _ in range(30):
            q = random_query(rng, g)
            x = rng.randint(-2000, 2000)
            ans, pr = s.query(x, q)
            assert ans == {v: successor(list(g.catalogs[v]), x) for v in q}
            pr = FCProof.from_value(hc.decode(hc.encode(pr.to_value())))
            verify_fc(x, q, ans, pr, sd, keys.public_key, T0)
            bound = 8 * (math.log2(max(2, g.proper_count())) + len(q) * (math.log2(g.d) + 2))
            assert pr.entry_count() <= bound


def test_storage_and_block_bounds():
    rng = random.Random(31)
    for _ in range(10):
        g = random_dag(rng, rng.randint(2, 64), rng.randint(100, 5000), tree=True)
        s = build_fc(g)
        n, e = g.proper_count(), len(g.edges)
        assert s.nonproper_count() <= 2 * n + 4 * e
        assert s.max_block_size() <= 6 * g.d
        s.audit()


def test_target_blocks_form_a_path_for_a_path_query():
    rng = random.Random(32)
    g = CatalogGraph({v: sorted(rng.sample(range(1000), 40)) for v in range(3)}, [(0, 1), (1, 2)])
    s = build_fc(g)
    for _ in range(50):
        parent = s.target_tree(rng.randrange(-10, 1010), [0, 1, 2])
        assert parent == {1: 0, 2: 1}


def test_wrong_answers_rejected(keys):
    rng = random.Random(33)
    g = random_dag(rng, 12, 600)
    s = build_fc(g)
    sd = hc.sign_digest(s.digest(), T0, keys)
    tried = 0
    for _ in range(300):
        q = random_query(rng, g, 0.7)
        x = rng.randint(-3000, 3000)
        ans, pr = s.query(x, q)
        v = rng.choice(sorted(q))
        cat = list(g.catalogs[v])
        a = ans[v]
        nxt = cat[cat.index(a) + 1] if a is not None and cat.index(a) + 1 < len(cat) else None
        if nxt is None:
            continue
        bad = dict(ans)
        bad[v] = nxt
        with pytest.raises(Rejected) as e:
            verify_fc(x, q, bad, pr, sd, keys.public_key, T0)
        assert e.value.reason == "predicate-violation"
        tried += 1
    assert tried > 100


def _digest_slots(t, path=()):
    if isinstance(t, Digest):
        yield path
    elif isinstance(t, tuple):
        for i, c in enumerate(t):
            yield from _digest_slots(c, path + (i,))


def _replace(t, path, new):
    if not path:
        return new
    i = path[0]
    return t[:i] + (_replace(t[i], path[1:], new),) + t[i + 1 :]


def _get(t, path):
    for i in path:
        t = t[i]
    return t


def test_label_flips_rejected(keys):
    rng = random.Random(34)
    g = random_dag(rng, 16, 800)
    s = build_fc(g)
    sd = hc.sign_digest(s.digest(), T0, keys)
    reasons = {}
    for _ in range(1000):
        q = random_query(rng, g, 0.8)
        x = rng.randint(-4000, 4000)
        ans, pr = s.query(x, q)
        val = pr.to_value()
        path = rng.choice(list(_digest_slots(val)))
        b = bytearray(_get(val, path))
        b[rng.randrange(32)] ^= 1 << rng.randrange(8)
        bad = FCProof.from_value(_replace(val, path, Digest(bytes(b))))
        with pytest.raises(Rejected) as e:
            verify_fc(x, q, ans, bad, sd, keys.public_key, T0)
        reasons[e.value.reason] = reasons.get(e.value.reason, 0) + 1
    assert set(reasons) == {"digest-mismatch"}


def test_digest_is_deterministic_and_recomputable():
    rng = random.Random(35)
    g = random_dag(rng, 10, 300)
    s1, s2 = build_fc(g), build_fc(CatalogGraph(g.catalogs, g.edges))
    assert s1.digest() == s2.digest()
    assert s1.recompute_digest() == s1.digest() == hc.hash_top(s1.fc_digest(), traversal_digest(g))


def test_changing_a_proper_element_changes_digest():
    rng = random.Random(36)
    g = random_dag(rng, 6, 60, span=200)
    base = build_fc(g).digest()
    changed = 0
    for _ in range(1000):
        v = rng.choice([u for u in g.catalogs if g.catalogs[u]])
        cat = list(g.catalogs[v])
        i = rng.randrange(len(cat))
        new = cat[i] + rng.choice((-1, 1)) * rng.randint(1, 3)
        if new in cat:
            continue
        cat[i] = new
        cats = dict(g.catalogs)
        cats[v] = sorted(cat)
        changed += 1
        assert build_fc(CatalogGraph(cats, g.edges)).digest() != base
    assert changed > 500


def test_traversal_label_formulas():
    single = CatalogGraph({0: [1, 2]}, [])
    r0 = single.routing(0)
    assert traversal_digest(single) == hc.hash_bytes(hc.D_TRAVERSAL, hc.hash_bytes(hc.D_ROUTING, hc.encode(r0)))
    chain = CatalogGraph({0: [1], 1: [2, 3]}, [(0, 1)])
    h_child = traversal_label([], chain.routing(1))
    assert h_child == hc.hash_bytes(hc.D_TRAVERSAL, routing_digest(chain.routing(1)))
    assert traversal_digest(chain) == hc.hash_bytes(hc.D_TRAVERSAL, h_child + routing_digest(chain.routing(0)))


def test_child_order_matters():
    rng = random.Random(37)
    for _ in range(1000):
        a, b = (hc.hash_attribute(rng.random().hex()) for _ in range(2))
        r = (Id(rng.randrange(100)), 0, 1)
        assert traversal_label([a, b], r) != traversal_label([b, a], r)


def _visited(g, q):
    labels = {}
    for v in reversed(g.order):
        labels[v] = traversal_label([labels[c] for c in g.children[v]], g.routing(v))
    return {v: (g.routing(v), tuple((Id(c), None if c in q else labels[c]) for c in g.children[v])) for v in q}


def test_verify_traversal():
    rng = random.Random(38)
    g = random_dag(rng, 12, 200, tree=True)
    top = traversal_digest(g)
    full = _visited(g, set(g.catalogs))
    assert all(lab is None for _, ch in full.values() for _, lab in ch)
    assert verify_traversal(g.source, full, top) == top
    q = random_query(rng, g, 0.6)
    part = _visited(g, q)
    assert verify_traversal(g.source, part, top) == top
    if len(q) > 1:
        drop = dict(part)
        del drop[max(q - {g.source})]
        with pytest.raises(Rejected):
            verify_traversal(g.source, drop, top)
    # hand a sibling subtree's label to another child
    for v, (r, ch) in part.items():
        labs = [i for i, (_, lab) in enumerate(ch) if lab is not None]
        if len(ch) > 1 and labs:
            i = labs[0]
            j = next(k for k in range(len(ch)) if k != i)
            other = ch[j][1] or traversal_label([], g.routing(int(ch[j][0])))
            if other == ch[i][1]:
                continue
            bad = dict(part)
            swapped = list(ch)
            swapped[i] = (ch[i][0], other)
            bad[v] = (r, tuple(swapped))
            with pytest.raises(Rejected):
                verify_traversal(g.source, bad, top)
            break


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32))
def test_random_instances_audit_and_answer(seed):
    rng = random.Random(seed)
    g = random_dag(rng, rng.randint(1, 10), rng.randint(0, 120), span=80)
    s = build_fc(g)
    s.audit()
    assert s.nonproper_count() <= 2 * g.proper_count() + 4 * len(g.edges)
    q = random_query(rng, g)
    x = rng.randint(-90, 90)
    got = s.locate_all(x, q)
    assert got == {v: successor(list(g.catalogs[v]), x) for v in q}
    assert POS_INF not in got.values()
    s.target_tree(x, q)

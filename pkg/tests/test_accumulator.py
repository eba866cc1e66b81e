import random

import pytest
from hypothesis import given, settings, strategies as st

from authds import hashcore as hc
from authds.accumulator import (
    HIDDEN,
    AccProof,
    AccTree,
    RangeAdvance,
    SuccessorSelect,
    concatenate,
    minmax_sum_schema,
    split,
    verify_acc_proof,
)
from authds.errors import ADSError, Rejected
from authds.hashcore import Id

from conftest import T0

PLAIN = minmax_sum_schema()
PRE = minmax_sum_schema(prehashed=True)


def tree(vals, schema=PLAIN, **kw):
    return AccTree.build([(Id(i), v) for i, v in enumerate(vals)], schema, **kw)


def signed(t, keys):
    return hc.sign_digest(t.digest(), T0, keys)


def brute(vals):
    return (min(vals), max(vals), sum(vals))


def test_single_and_two_node_digests():
    n1, n2 = (Id(1), 5), (Id(2), 9)
    assert AccTree.build([n1], PLAIN).digest() == hc.hash_leaf(None, n1, None)
    t = AccTree.build([n1, n2], PLAIN)
    fold = (Id(1), Id(2), 5, 9, 14)
    assert t.root_property() == fold
    assert t.digest() == hc.hash_internal(fold, hc.hash_leaf(None, n1, n2), hc.hash_leaf(n1, n2, None))
    tp = AccTree.build([n1, n2], PRE)
    assert tp.digest() == hc.hash_internal_prehashed(
        hc.hash_property(fold), hc.hash_leaf(None, n1, n2), hc.hash_leaf(n1, n2, None)
    )


def test_concatenate_two_singletons():
    n1, n2 = (Id(1), 5), (Id(2), 9)
    c = concatenate(AccTree.build([n1], PLAIN), AccTree.build([n2], PLAIN))
    assert c.ids() == [1, 2]
    assert c.digest() == AccTree.build([n1, n2], PLAIN).digest()


def test_root_sum_matches_brute_force():
    rng = random.Random(0)
    vals = [rng.randrange(-1000, 1000) for _ in range(64)]
    assert tree(vals).root_property()[2:] == brute(vals)


def test_mutation_changes_digest():
    rng = random.Random(1)
    vals = [rng.randrange(10**6) for _ in range(50)]
    t = tree(vals)
    unchanged = 0
    for _ in range(1000):
        i = rng.randrange(len(vals))
        before = t.digest()
        vals[i] += rng.choice((-3, -2, -1, 1, 2, 3))
        t.update(i, (Id(i), vals[i]))
        unchanged += t.digest() == before
    assert unchanged == 0
    assert t.digest() == tree(vals).digest()


@pytest.mark.parametrize("schema", [PLAIN, PRE], ids=["plain", "prehashed"])
def test_subpath_against_fold(keys, schema):
    rng = random.Random(2)
    vals = sorted(rng.sample(range(10**6), 128))
    t = tree(vals, schema)
    sd = signed(t, keys)
    for _ in range(200):
        i = rng.randrange(128)
        j = rng.randrange(i, 128)
        ans, pr = t.property_subpath(i, j)
        assert ans == (i, j) + brute(vals[i : j + 1])
        verify_acc_proof(("subpath", i, j), ans, pr, sd, keys.public_key, T0, schema)


def test_prehashed_reveal_hides_the_rest(keys):
    rng = random.Random(3)
    vals = [rng.randrange(100) for _ in range(40)]
    t = tree(vals, PRE)
    sd = signed(t, keys)
    ans, pr = t.property_subpath(5, 30, reveal=[2])
    assert ans[4] == sum(vals[5:31])
    assert ans[2] is HIDDEN and ans[3] is HIDDEN
    verify_acc_proof(("subpath", 5, 30), ans, pr, sd, keys.public_key, T0, PRE)
    # claiming a hidden value is rejected
    with pytest.raises(Rejected):
        verify_acc_proof(("subpath", 5, 30), ans[:2] + (min(vals[5:31]),) + ans[3:], pr, sd, keys.public_key, T0, PRE)


def test_node_answer_tamper(keys):
    rng = random.Random(4)
    vals = [rng.randrange(10**4) for _ in range(100)]
    t = tree(vals)
    sd = signed(t, keys)
    for _ in range(1000):
        v = rng.randrange(100)
        ans, pr = t.property_node(v)
        verify_acc_proof(("node", v), ans, pr, sd, keys.public_key, T0, PLAIN)
        bad = (ans[0], ans[1] + rng.choice((-1, 1)))
        with pytest.raises(Rejected):
            verify_acc_proof(("node", v), bad, pr, sd, keys.public_key, T0, PLAIN)


def test_locate_matches_linear_scan(keys):
    rng = random.Random(5)
    for _ in range(200):
        n = rng.randint(1, 256)
        vals = sorted(rng.sample(range(-1000, 1000), n))
        t = tree(vals)
        sd = signed(t, keys)
        q = rng.randrange(-1010, 1010)
        k, pr = t.locate(SuccessorSelect(q))
        want = next((i for i, v in enumerate(vals) if v >= q), n - 1)
        assert k == want
        verify_acc_proof(("locate", SuccessorSelect(q)), k, pr, sd, keys.public_key, T0, PLAIN)


def test_range_matches_filter(keys):
    rng = random.Random(6)
    for _ in range(200):
        n = rng.randint(1, 100)
        vals = sorted(rng.sample(range(1000), n))
        t = tree(vals)
        sd = signed(t, keys)
        lo = rng.randrange(-10, 1000)
        hi = lo + rng.randrange(200)
        adv = RangeAdvance(lo, hi)
        got, pr = t.subpath(adv)
        hits = [i for i, v in enumerate(vals) if lo <= v <= hi]
        assert got == ((hits[0], hits[-1]) if hits else None)
        verify_acc_proof(("range", adv), got, pr, sd, keys.public_key, T0, PLAIN)


def _paths(t, path=()):
    if isinstance(t, tuple):
        yield path, t
        for i, c in enumerate(t):
            yield from _paths(c, path + (i,))


def _replace(t, path, new):
    if not path:
        return new
    i = path[0]
    return t[:i] + (_replace(t[i], path[1:], new),) + t[i + 1 :]


def _rejects(query, ans, proof_value, sd, keys, schema):
    try:
        verify_acc_proof(query, ans, AccProof.from_value(proof_value), sd, keys.public_key, T0, schema)
    except (Rejected, ADSError):
        return True
    return False


@pytest.mark.parametrize("schema", [PLAIN, PRE], ids=["plain", "prehashed"])
def test_label_byte_flips_rejected(keys, schema):
    rng = random.Random(7)
    vals = [rng.randrange(10**5) for _ in range(200)]
    t = tree(vals, schema)
    sd = signed(t, keys)
    accepted = 0
    for _ in range(1000):
        i = rng.randrange(200)
        j = rng.randrange(i, 200)
        q = ("subpath", i, j)
        ans, pr = t.property_subpath(i, j)
        digests = [
            (p + (k,), c) for p, node in _paths(pr.tree) for k, c in enumerate(node) if isinstance(c, hc.Digest)
        ]
        p, d = rng.choice(digests)
        b = bytearray(d)
        b[rng.randrange(32)] ^= 1 << rng.randrange(8)
        accepted += not _rejects(q, ans, _replace(pr.tree, p, hc.Digest(bytes(b))), sd, keys, schema)
    assert accepted == 0


def test_dropping_an_allocation_node_rejected(keys):
    rng = random.Random(8)
    vals = [rng.randrange(10**5) for _ in range(300)]
    t = tree(vals)
    sd = signed(t, keys)
    for _ in range(300):
        i = rng.randrange(300)
        j = rng.randrange(i, 300)
        ans, pr = t.property_subpath(i, j)
        spots = [(p, node) for p, node in _paths(pr.tree) if node and node[0] == "N"]
        if not spots:
            continue
        p, node = rng.choice(spots)
        side = rng.choice((2, 3))
        assert _rejects(("subpath", i, j), ans, _replace(pr.tree, p, node[side]), sd, keys, PLAIN)


def test_split_then_concatenate_restores_digest():
    vals = list(range(40))
    t = tree(vals)
    d = t.digest()
    a, b = split(t, 17)
    assert a.ids() == list(range(17)) and b.ids() == list(range(17, 40))
    assert a.digest() == tree(vals[:17]).digest()
    assert concatenate(a, b).digest() == d


ops = st.lists(st.tuples(st.sampled_from(["split", "update", "insert", "remove"]), st.integers(0, 10**6)), max_size=30)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-100, 100), min_size=2, max_size=40), ops)
def test_replicas_agree_and_match_fresh_build(vals, script):
    # the same edit script on two replicas; shape depends only on the sequence
    reps = [tree(vals), tree(vals)]
    seq = [(Id(i), v) for i, v in enumerate(vals)]
    fresh = len(vals)
    for op, r in script:
        if op == "split" and len(seq) > 1:
            k = 1 + r % (len(seq) - 1)
            for n, t in enumerate(reps):
                a, b = t.split(seq[k][0])
                reps[n] = b.concatenate(a)
            seq = seq[k:] + seq[:k]
        elif op == "update":
            k = r % len(seq)
            seq[k] = (seq[k][0], r % 97)
            for t in reps:
                t.update(seq[k][0], seq[k])
        elif op == "insert":
            k = r % (len(seq) + 1)
            node = (Id(fresh), r % 89)
            fresh += 1
            for t in reps:
                t.insert_handle(node, before=t.handle(seq[k][0]) if k < len(seq) else None)
            seq.insert(k, node)
        elif op == "remove" and len(seq) > 1:
            k = r % len(seq)
            for t in reps:
                t.remove(seq[k][0])
            del seq[k]
        for t in reps:
            t.audit()
        assert reps[0].digest() == reps[1].digest() == AccTree.build(seq, PLAIN).digest()
        assert reps[0].root_property()[2:] == brute([v for _, v in seq])

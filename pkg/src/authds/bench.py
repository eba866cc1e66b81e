"""Proof-size and timing tables printed by ``authds bench``."""
from __future__ import annotations

import math
import random
import statistics
import time

from . import hashcore as hc
from .cascade import CatalogGraph, build_fc, verify_fc
from .graphq import Graph, verify_graph_answer


def table(headers: list[str], rows: list[list]) -> str:
    cells = [headers] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(c) -> str:
    return f"{c:.3f}" if isinstance(c, float) else str(c)


def random_graph(n: int, m: int, rng: random.Random, biconnectivity: bool = False) -> Graph:
    g = Graph(biconnectivity=biconnectivity)
    for v in range(n):
        g.make_vertex(v)
    for _ in range(m):
        u, v = rng.randrange(n), rng.randrange(n)
        if u != v:
            g.insert_edge(u, v)
    return g


def random_catalogs(n: int, k: int, rng: random.Random, max_out: int = 3) -> CatalogGraph:
    """A random rooted tree of ``k`` catalogs holding about ``n`` keys in total."""
    edges, out = [], [0] * k
    for v in range(1, k):
        u = rng.choice([w for w in range(v) if out[w] < max_out])
        out[u] += 1
        edges.append((u, v))
    sizes = [1] * k
    for _ in range(max(0, n - k)):
        sizes[rng.randrange(k)] += 1
    span = 4 * n + 16
    cats = {v: sorted(rng.sample(range(-span, span), sizes[v])) for v in range(k)}
    return CatalogGraph(cats, edges)


def bench_graph(sizes=(2**8, 2**10, 2**12), queries: int = 101, seed: int = 1) -> list[list]:
    kp = hc.KeyPair.generate()
    rows = []
    for n in sizes:
        rng = random.Random(seed)
        t0 = time.perf_counter()
        g = random_graph(n, n, rng)
        build = time.perf_counter() - t0
        sd = hc.sign_digest(g.digest(), 1, kp)
        sz, tq, tv = [], 0.0, 0.0
        for _ in range(queries):
            q = ("connected", rng.randrange(n), rng.randrange(n))
            t0 = time.perf_counter()
            ans, proof = g.query(q)
            t1 = time.perf_counter()
            verify_graph_answer(q, ans, proof, sd, kp.public_key, 1)
            tv += time.perf_counter() - t1
            tq += t1 - t0
            sz.append(proof.size_bytes())
        rows.append([n, int(statistics.median(sz)), build, 1e3 * tq / queries, 1e3 * tv / queries])
    return rows


def bench_catalog(sizes=(10**3, 10**4), k: int = 32, queries: int = 50, seed: int = 1) -> list[list]:
    kp = hc.KeyPair.generate()
    rows = []
    for n in sizes:
        rng = random.Random(seed)
        g = random_catalogs(n, k, rng)
        t0 = time.perf_counter()
        s = build_fc(g)
        build = time.perf_counter() - t0
        sd = hc.sign_digest(s.digest(), 1, kp)
        nodes = tuple(g.order)
        bound = 8 * (math.log2(n) + k * (math.log2(g.d) + 2))
        ent, tq, tv = [], 0.0, 0.0
        for _ in range(queries):
            x = rng.randrange(-4 * n, 4 * n)
            t0 = time.perf_counter()
            ans, proof = s.query(x, nodes)
            t1 = time.perf_counter()
            verify_fc(x, nodes, ans, proof, sd, kp.public_key, 1)
            tv += time.perf_counter() - t1
            tq += t1 - t0
            ent.append(proof.entry_count())
        rows.append([n, k, int(statistics.median(ent)), int(bound), build, 1e3 * tq / queries, 1e3 * tv / queries])
    return rows


def report(quick: bool = False) -> str:
    gs = (2**8, 2**10) if quick else (2**8, 2**10, 2**12)
    cs = (10**3,) if quick else (10**3, 10**4)
    out = [
        "connectivity proofs (spanning forest only, m = n)",
        table(["n", "median bytes", "build s", "query ms", "verify ms"], bench_graph(gs)),
        "",
        "iterative search proofs (all catalogs queried)",
        table(["n", "k", "median entries", "entry bound", "build s", "query ms", "verify ms"], bench_catalog(cs)),
    ]
    return "\n".join(out)

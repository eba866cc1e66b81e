"""Command-line front end for the source, responder and user roles.

Files are the framed messages of :mod:`authds.protocol`; ``-`` reads stdin
or writes stdout.  Exit status is 0 on success, 1 when a verification,
replay or audit fails, and 2 for unusable input.
"""
from __future__ import annotations

import argparse
import os
import sys
import time

from . import hashcore as hc
from . import protocol as P
from .errors import ADSError, Divergence, Rejected

_OPS = {"graph": P.parse_graph_ops, "forest": P.parse_forest_ops}


class UsageError(Exception):
    pass


def _read(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    with open(path, "rb") as f:
        return f.read()


def _write(path: str, data: bytes) -> None:
    if path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
        return
    with open(path, "wb") as f:
        f.write(data)


def _text(path: str) -> str:
    return _read(path).decode("utf-8")


def _mtype(buf: bytes) -> int:
    if len(buf) < 6 or buf[:4] != P.MAGIC:
        raise UsageError("not an authds message file")
    return buf[5]


def _load_state(path: str, buf: bytes | None = None) -> tuple[str, tuple]:
    """Kind and state from a state or snapshot file."""
    buf = _read(path) if buf is None else buf
    t = _mtype(buf)
    if t == P.T_STATE:
        m = P.StateMsg.from_bytes(buf)
    elif t == P.T_SNAPSHOT:
        m = P.SnapshotMsg.from_bytes(buf)
    else:
        raise UsageError(f"{path}: expected a state or snapshot file")
    return m.kind, m.state


def _keys(path: str) -> hc.KeyPair:
    return hc.KeyPair.from_secret(_read(path))


def _public(path: str) -> bytes:
    pk = _read(path)
    if len(pk) != 32:
        raise UsageError(f"{path}: public keys are 32 raw bytes")
    return pk


def _clock(ts: int | None):
    return (lambda: ts) if ts is not None else (lambda: int(time.time()))


def _query(kind: str, args) -> tuple:
    if (args.query is None) == (args.query_file is None):
        raise UsageError("give exactly one of --query and --query-file")
    text = args.query if args.query is not None else _text(args.query_file)
    return P.parse_query(kind, text)


def max_age(flag: int | None) -> int:
    """The flag wins over ``ADS_MAX_AGE``, which wins over the default."""
    if flag is not None:
        return flag
    env = os.environ.get("ADS_MAX_AGE")
    if env is None:
        return hc.DEFAULT_MAX_AGE
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"ADS_MAX_AGE must be an integer, got {env!r}") from None


# --------------------------------------------------------------------------- commands


def cmd_keygen(args) -> int:
    kp = hc.KeyPair.generate()
    _write(args.secret, kp.secret_key)
    _write(args.public, kp.public_key)
    return 0


def cmd_build(args) -> int:
    text = _text(args.input)
    if args.kind == "catalog":
        state = (P.parse_catalog(text), ())
    else:
        params = (not args.no_biconnectivity,) if args.kind == "graph" else ()
        state = (params, tuple(_OPS[args.kind](text)))
    s = P.rebuild(args.kind, state)
    _write(args.output, P.StateMsg(args.kind, state).to_bytes())
    print(f"{args.kind} digest {s.digest().hex()}", file=sys.stderr)
    return 0


def cmd_sign(args) -> int:
    kind, (params, ops) = _load_state(args.state)
    src = P.Source(kind, params, _keys(args.secret), ops, clock=_clock(args.timestamp), signer_id=args.signer)
    _write(args.output, src.publish().to_bytes())
    return 0


def cmd_update(args) -> int:
    kind, (params, ops) = _load_state(args.state)
    if kind not in _OPS:
        raise UsageError(f"{kind} structures are static; build and sign a new snapshot instead")
    src = P.Source(kind, params, _keys(args.secret), ops, clock=_clock(args.timestamp), signer_id=args.signer)
    msgs = src.update(_OPS[kind](_text(args.ops)))
    _write(args.output, b"".join(m.to_bytes() for m in msgs))
    if args.state_out:
        _write(args.state_out, P.StateMsg(kind, src.state()).to_bytes())
    return 0


def _responder(path: str, pk: bytes) -> P.Responder:
    return P.Responder(P.SnapshotMsg.from_bytes(_read(path)), pk)


def cmd_apply(args) -> int:
    r = _responder(args.snapshot, _public(args.public))
    for i, msg in enumerate(P.read_updates(_read(args.updates))):
        try:
            r.apply(msg)
        except Divergence as exc:
            print(f"divergence at update {i}: {exc}", file=sys.stderr)
            return 1
    _write(args.output, r.snapshot().to_bytes())
    return 0


def cmd_query(args) -> int:
    r = _responder(args.snapshot, _public(args.public))
    msg = r.answer(P.QueryMsg(r.kind, _query(r.kind, args)))
    _write(args.output, msg.to_bytes())
    if isinstance(msg, P.ErrorMsg):
        print(f"error: {msg.reason}", file=sys.stderr)
        return 2
    return 0


def cmd_verify(args) -> int:
    buf = _read(args.answer)
    q = _query(args.kind, args)
    now = args.now if args.now is not None else int(time.time())
    try:
        ans = P.user_verify(q, buf, _public(args.public), now, max_age(args.max_age), kind=args.kind)
    except Rejected as exc:
        print(f"reject {exc.reason}" + (f" ({exc.detail})" if exc.detail else ""))
        return 1
    print(f"accept {ans!r}")
    return 0


def _history(paths: list[str]) -> list[hc.SignedDigest]:
    out = []
    for p in paths:
        buf = _read(p)
        for t, sections in P.frames(buf):
            if t in (P.T_SNAPSHOT, P.T_ANSWER, P.T_UPDATE):
                out.append(P.decode_sd(sections[-1]))
    return out


def cmd_tamper(args) -> int:
    msg = P.AnswerMsg.from_bytes(_read(args.answer))
    other = P.AnswerMsg.from_bytes(_read(args.other)) if args.other else None
    try:
        bad = P.tamper(msg, args.strategy, args.seed, history=_history(args.history), other=other)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write(args.output, bad)
    return 0


def cmd_audit(args) -> int:
    buf = _read(args.file)
    kind, state = _load_state(args.file, buf)
    try:
        s = P.rebuild(kind, state)
        P.kind_of(kind).audit(s)
    except (ADSError, ValueError) as exc:
        print(f"audit failed: {exc}")
        return 1
    d = s.digest()
    print(f"{kind} digest {d.hex()}")
    if _mtype(buf) == P.T_SNAPSHOT:
        sd = P.SnapshotMsg.from_bytes(buf).sd
        if sd.digest != d:
            print("audit failed: state does not match the signed digest")
            return 1
        if args.public:
            try:
                hc.verify_signed_digest(sd, _public(args.public), sd.timestamp)
            except Rejected as exc:
                print(f"audit failed: {exc.reason}")
                return 1
        print("signed digest matches")
    return 0


def cmd_bench(args) -> int:
    from . import bench

    print(bench.report(quick=args.quick))
    return 0


# --------------------------------------------------------------------------- parser


def _query_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--query", help='inline query, e.g. "connected 3 7" or "locate 42 0 1 2"')
    p.add_argument("--query-file", help="query text file")


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="authds", description="Authenticated graph, forest and catalog structures.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="write a fresh Ed25519 key pair as raw bytes")
    p.add_argument("secret")
    p.add_argument("public")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("build", help="ingest a graph, forest or catalog text file into a state file")
    p.add_argument("--kind", choices=sorted(P.KINDS), required=True)
    p.add_argument("--no-biconnectivity", action="store_true", help="graph: skip the block-cut forest")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_build)

    for name, func, hlp in (("sign", cmd_sign, "sign a state into a snapshot"),
                            ("update", cmd_update, "apply an op script and emit signed updates")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("state", help="state or snapshot file")
        if name == "update":
            p.add_argument("ops", help="operation script")
            p.add_argument("--state-out", help="write the updated state here")
        p.add_argument("--secret", required=True)
        p.add_argument("--timestamp", type=int, help="signing time (default: now)")
        p.add_argument("--signer", default="source")
        p.add_argument("-o", "--output", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("apply", help="replay an update stream onto a snapshot")
    p.add_argument("snapshot")
    p.add_argument("updates")
    p.add_argument("--public", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("query", help="answer a query with a proof")
    p.add_argument("snapshot")
    p.add_argument("--public", required=True)
    _query_args(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("verify", help="check an answer; exit 0 on accept, 1 on reject")
    p.add_argument("answer")
    p.add_argument("--kind", choices=sorted(P.KINDS), required=True)
    p.add_argument("--public", required=True)
    _query_args(p)
    p.add_argument("--now", type=int, help="verification time (default: now)")
    p.add_argument("--max-age", type=int, help="freshness window in seconds (default: $ADS_MAX_AGE or 300)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("tamper", help="mutate an answer the way an adversary would")
    p.add_argument("answer")
    p.add_argument("--strategy", choices=P.STRATEGIES, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history", action="append", default=[], help="file with earlier signed digests")
    p.add_argument("--other", help="answer to a different query")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_tamper)

    p = sub.add_parser("audit", help="rebuild, recompute every label and compare digests")
    p.add_argument("file", help="state or snapshot file")
    p.add_argument("--public")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("bench", help="print proof-size and timing tables")
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = parser().parse_args(argv)
    try:
        return args.func(args)
    except Divergence as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 1
    except (UsageError, ADSError, OSError, UnicodeDecodeError) as exc:
        print(f"authds {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

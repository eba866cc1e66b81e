"""Source, responder and user roles with a framed binary wire format.

Every message starts with ``b"ADS1"``, a version byte and a type byte,
followed by a u32 section count and length-prefixed sections.  Values use
the canonical encoding of :mod:`authds.hashcore`; signed digests travel as
``digest || u64 timestamp || u16 signature length || signature || signer``.
"""
from __future__ import annotations

import random
import struct
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator

from . import cascade, forest, graphq
from . import hashcore as hc
from .errors import ADSError, Divergence, EncodingError, ProtocolError, Rejected
from .hashcore import Digest, Id, SignedDigest

MAGIC = b"ADS1"
VERSION = 1

T_SNAPSHOT = 0x01
T_UPDATE = 0x02
T_QUERY = 0x03
T_ANSWER = 0x04
T_ERROR = 0x05
T_STATE = 0x06

_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


# --------------------------------------------------------------------------- framing


def frame(mtype: int, sections: Iterable[bytes]) -> bytes:
    sections = list(sections)
    out = [MAGIC, bytes((VERSION, mtype)), _U32.pack(len(sections))]
    for s in sections:
        out.append(_U32.pack(len(s)))
        out.append(s)
    return b"".join(out)


def unframe(buf: bytes, pos: int = 0) -> tuple[int, list[bytes], int]:
    """Parse one frame at ``pos``; returns (type, sections, end position)."""
    if buf[pos : pos + 4] != MAGIC:
        raise EncodingError("bad magic")
    if len(buf) < pos + 10:
        raise EncodingError("truncated header")
    if buf[pos + 4] != VERSION:
        raise EncodingError(f"unsupported version {buf[pos + 4]}")
    mtype = buf[pos + 5]
    (count,) = _U32.unpack_from(buf, pos + 6)
    p = pos + 10
    sections = []
    for _ in range(count):
        if p + 4 > len(buf):
            raise EncodingError("truncated section header")
        (n,) = _U32.unpack_from(buf, p)
        p += 4
        if p + n > len(buf):
            raise EncodingError("truncated section")
        sections.append(bytes(buf[p : p + n]))
        p += n
    return mtype, sections, p


def frames(buf: bytes) -> Iterator[tuple[int, list[bytes]]]:
    pos = 0
    while pos < len(buf):
        mtype, sections, pos = unframe(buf, pos)
        yield mtype, sections


def encode_sd(sd: SignedDigest) -> bytes:
    sig = bytes(sd.signature)
    return bytes(sd.digest) + _U64.pack(sd.timestamp) + _U16.pack(len(sig)) + sig + sd.signer_id.encode("utf-8")


def decode_sd(buf: bytes) -> SignedDigest:
    n = hc.DIGEST_SIZE
    if len(buf) < n + 10:
        raise EncodingError("truncated signed digest")
    (ts,) = _U64.unpack_from(buf, n)
    (slen,) = _U16.unpack_from(buf, n + 8)
    sig = buf[n + 10 : n + 10 + slen]
    if len(sig) != slen:
        raise EncodingError("truncated signature")
    try:
        signer = buf[n + 10 + slen :].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EncodingError("bad signer id") from exc
    if ts >= 1 << 63:
        raise EncodingError("timestamp out of range")
    return SignedDigest(Digest(buf[:n]), ts, bytes(sig), signer)


def _text(s: bytes) -> str:
    try:
        return s.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EncodingError("bad utf-8") from exc


def _expect(mtype: int, want: int, sections: list, count: int) -> None:
    if mtype != want:
        raise EncodingError(f"expected message type {want}, got {mtype}")
    if len(sections) != count:
        raise EncodingError(f"message type {want} has {count} sections, got {len(sections)}")


# --------------------------------------------------------------------------- messages


@dataclass(frozen=True)
class StateMsg:
    """Unsigned structure state: ``kind`` plus its serialized build input and operation log."""

    kind: str
    state: Any

    def to_bytes(self) -> bytes:
        return frame(T_STATE, [self.kind.encode(), hc.encode(self.state)])

    @classmethod
    def from_bytes(cls, buf: bytes) -> "StateMsg":
        mtype, s, end = unframe(buf)
        _expect(mtype, T_STATE, s, 2)
        _no_trailing(buf, end)
        return cls(_text(s[0]), hc.decode(s[1]))


@dataclass(frozen=True)
class SnapshotMsg:
    kind: str
    state: Any
    sd: SignedDigest

    def to_bytes(self) -> bytes:
        return frame(T_SNAPSHOT, [self.kind.encode(), hc.encode(self.state), encode_sd(self.sd)])

    @classmethod
    def from_bytes(cls, buf: bytes) -> "SnapshotMsg":
        mtype, s, end = unframe(buf)
        _expect(mtype, T_SNAPSHOT, s, 3)
        _no_trailing(buf, end)
        return cls(_text(s[0]), hc.decode(s[1]), decode_sd(s[2]))


@dataclass(frozen=True)
class UpdateMsg:
    op: tuple
    sd: SignedDigest

    def to_bytes(self) -> bytes:
        return frame(T_UPDATE, [hc.encode(self.op), encode_sd(self.sd)])

    @classmethod
    def from_sections(cls, mtype: int, s: list[bytes]) -> "UpdateMsg":
        _expect(mtype, T_UPDATE, s, 2)
        op = hc.decode(s[0])
        if not isinstance(op, tuple) or not op or not isinstance(op[0], str):
            raise EncodingError("operation must be a tuple starting with its opcode")
        return cls(op, decode_sd(s[1]))

    @classmethod
    def from_bytes(cls, buf: bytes) -> "UpdateMsg":
        mtype, s, end = unframe(buf)
        _no_trailing(buf, end)
        return cls.from_sections(mtype, s)


@dataclass(frozen=True)
class QueryMsg:
    kind: str
    query: tuple

    def to_bytes(self) -> bytes:
        return frame(T_QUERY, [self.kind.encode(), hc.encode(self.query)])

    @classmethod
    def from_bytes(cls, buf: bytes) -> "QueryMsg":
        mtype, s, end = unframe(buf)
        _expect(mtype, T_QUERY, s, 2)
        _no_trailing(buf, end)
        return cls(_text(s[0]), hc.decode(s[1]))


@dataclass(frozen=True)
class AnswerMsg:
    kind: str
    query: tuple
    answer: Any
    proof: Any
    sd: SignedDigest

    def to_bytes(self) -> bytes:
        return frame(
            T_ANSWER,
            [self.kind.encode(), hc.encode(self.query), hc.encode(self.answer), hc.encode(self.proof), encode_sd(self.sd)],
        )

    @classmethod
    def from_bytes(cls, buf: bytes) -> "AnswerMsg":
        mtype, s, end = unframe(buf)
        _expect(mtype, T_ANSWER, s, 5)
        _no_trailing(buf, end)
        return cls(_text(s[0]), hc.decode(s[1]), hc.decode(s[2]), hc.decode(s[3]), decode_sd(s[4]))


@dataclass(frozen=True)
class ErrorMsg:
    reason: str

    def to_bytes(self) -> bytes:
        return frame(T_ERROR, [self.reason.encode()])

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ErrorMsg":
        mtype, s, end = unframe(buf)
        _expect(mtype, T_ERROR, s, 1)
        _no_trailing(buf, end)
        return cls(_text(s[0]))


def _no_trailing(buf: bytes, end: int) -> None:
    if end != len(buf):
        raise EncodingError("trailing bytes after message")


def read_updates(buf: bytes) -> list[UpdateMsg]:
    return [UpdateMsg.from_sections(t, s) for t, s in frames(buf)]


# --------------------------------------------------------------------------- structure kinds


def _int(x: Any, what: str = "argument") -> int:
    if type(x) not in (int, Id):
        raise ProtocolError(f"{what} must be an integer")
    return int(x)


class GraphKind:
    """Incremental graph: ops ``("vertex", v)``, ``("edge", u, v, e)``, ``("type", v, flag)``."""

    name = "graph"
    queries = tuple(graphq.REVEAL)

    def build(self, params: tuple) -> graphq.Graph:
        (bic,) = params
        return graphq.Graph(biconnectivity=bool(bic))

    def apply(self, g: graphq.Graph, op: tuple) -> None:
        code, args = op[0], [_int(a) for a in op[1:]]
        if code == "vertex" and len(args) == 1:
            g.make_vertex(*args)
        elif code == "edge" and len(args) == 3:
            g.insert_edge(args[0], args[1], args[2])
        elif code == "type" and len(args) == 2:
            g.set_type(*args)
        else:
            raise ProtocolError(f"unknown graph operation {op!r}")

    def check_query(self, q: tuple) -> tuple:
        if not q or q[0] not in self.queries:
            raise ProtocolError(f"unknown graph query {q!r}")
        n = 4 if q[0] == "type" else 3
        if len(q) != n:
            raise ProtocolError(f"graph query {q[0]} takes {n - 1} arguments")
        return (q[0],) + tuple(_int(a) for a in q[1:])

    def answer(self, g: graphq.Graph, q: tuple) -> tuple[Any, Any]:
        ans, proof = g.query(q)
        return ans, proof.to_value()

    def verify(self, q, answer, proof, sd, pk, now, max_age) -> Any:
        return graphq.verify_graph_answer(q, answer, graphq.GraphProof.from_value(proof), sd, pk, now, max_age=max_age)

    def audit(self, g: graphq.Graph) -> None:
        g.audit()


class ForestKind:
    """Dynamic forest with integer values and (sum, count) path queries."""

    name = "forest"
    queries = ("path",)

    def build(self, params: tuple) -> forest.Forest:
        return forest.Forest()

    def apply(self, f: forest.Forest, op: tuple) -> None:
        code, args = op[0], [_int(a) for a in op[1:]]
        table = {
            "new_tree": (2, lambda v, x: f.new_tree(x, node_id=v)),
            "link": (2, f.link),
            "cut": (1, f.cut),
            "update": (2, f.update_node),
            "evert": (1, f.evert),
            "destroy": (1, f.destroy_tree),
        }
        if code not in table or table[code][0] != len(args):
            raise ProtocolError(f"unknown forest operation {op!r}")
        table[code][1](*args)

    def check_query(self, q: tuple) -> tuple:
        if len(q) != 3 or q[0] != "path":
            raise ProtocolError(f"unknown forest query {q!r}")
        return ("path", _int(q[1]), _int(q[2]))

    def answer(self, f: forest.Forest, q: tuple) -> tuple[Any, Any]:
        ans, proof = f.forest_property(q[1], q[2])
        return forest.forest_answer_to_value(ans), proof.to_value()

    def verify(self, q, answer, proof, sd, pk, now, max_age) -> Any:
        ans = forest.forest_answer_from_value(answer)
        forest.verify_forest_proof((q[1], q[2]), ans, forest.ForestProof.from_value(proof), sd, pk, now, max_age=max_age)
        return ans

    def audit(self, f: forest.Forest) -> None:
        f.audit()


class CatalogKind:
    """Static catalog graph; the only update is a full rebuild (a new snapshot)."""

    name = "catalog"
    queries = ("locate",)

    def build(self, params: tuple) -> cascade.FCStructure:
        cats, edges = params
        g = cascade.CatalogGraph({_int(v): tuple(k) for v, k in cats}, [(_int(u), _int(v)) for u, v in edges])
        return cascade.build_fc(g)

    def apply(self, s: cascade.FCStructure, op: tuple) -> None:
        raise ProtocolError("catalog structures are static; publish a new snapshot instead")

    def check_query(self, q: tuple) -> tuple:
        if len(q) != 3 or q[0] != "locate" or not isinstance(q[2], tuple):
            raise ProtocolError(f"unknown catalog query {q!r}")
        nodes = tuple(_int(v, "query node") for v in q[2])
        if list(nodes) != sorted(set(nodes)):
            raise ProtocolError("query nodes must be listed once each in increasing order")
        return ("locate", _int(q[1], "query key"), nodes)

    def answer(self, s: cascade.FCStructure, q: tuple) -> tuple[Any, Any]:
        try:
            ans, proof = s.query(q[1], q[2])
        except ValueError as exc:
            raise ProtocolError(str(exc)) from None
        return tuple((Id(v), ans[v]) for v in sorted(ans)), proof.to_value()

    def verify(self, q, answer, proof, sd, pk, now, max_age) -> Any:
        if not isinstance(answer, tuple) or not all(isinstance(p, tuple) and len(p) == 2 for p in answer):
            raise Rejected("malformed-proof", "catalog answers are (node, key) pairs")
        nodes = [p[0] for p in answer]
        if nodes != list(q[2]) or not all(type(p[0]) is Id for p in answer):
            raise Rejected("query-echo-mismatch", "answers do not follow the query nodes")
        ans = {int(v): a for v, a in answer}
        try:
            cascade.verify_fc(q[1], q[2], ans, cascade.FCProof.from_value(proof), sd, pk, now, max_age=max_age)
        except ValueError as exc:
            raise Rejected("malformed-proof", str(exc)) from None
        return ans

    def audit(self, s: cascade.FCStructure) -> None:
        s.audit()


KINDS: dict[str, Any] = {k.name: k for k in (GraphKind(), ForestKind(), CatalogKind())}


def kind_of(name: str):
    try:
        return KINDS[name]
    except KeyError:
        raise ProtocolError(f"unknown structure kind {name!r}") from None


def rebuild(kind: str, state: Any):
    """Replay a ``(params, ops)`` state into a fresh structure."""
    k = kind_of(kind)
    if not (isinstance(state, tuple) and len(state) == 2 and isinstance(state[1], tuple)):
        raise ProtocolError("state must be (params, operations)")
    params, ops = state
    s = k.build(params)
    for op in ops:
        if not isinstance(op, tuple) or not op or not isinstance(op[0], str):
            raise ProtocolError("malformed operation")
        k.apply(s, op)
    return s


# --------------------------------------------------------------------------- roles


def _now() -> int:
    return int(time.time())


class Source:
    """Owner of the data: applies updates and signs every new digest."""

    def __init__(self, kind: str, params: tuple, keys: hc.KeyPair, ops: Iterable[tuple] = (),
                 clock: Callable[[], int] = _now, signer_id: str = "source"):
        self.kind = kind
        self.params = params
        self.keys = keys
        self.clock = clock
        self.signer_id = signer_id
        self.ops: list[tuple] = []
        self.structure = rebuild(kind, (params, ()))
        for op in ops:
            self._apply(op)

    def _apply(self, op: tuple) -> None:
        kind_of(self.kind).apply(self.structure, op)
        self.ops.append(op)

    def state(self) -> tuple:
        return (self.params, tuple(self.ops))

    def sign(self) -> SignedDigest:
        return hc.sign_digest(self.structure.digest(), self.clock(), self.keys, self.signer_id)

    def publish(self) -> SnapshotMsg:
        """Full state plus a fresh signature; re-publishing unchanged data only moves the timestamp."""
        return SnapshotMsg(self.kind, self.state(), self.sign())

    def update(self, ops: Iterable[tuple]) -> list[UpdateMsg]:
        out = []
        for op in ops:
            self._apply(tuple(op))
            out.append(UpdateMsg(tuple(op), self.sign()))
        return out


class Responder:
    """Untrusted mirror: replays the source's feed and answers queries with proofs."""

    def __init__(self, snapshot: SnapshotMsg, public_key: bytes):
        self.kind = snapshot.kind
        self.public_key = public_key
        self._check_sig(snapshot.sd)
        try:
            self.structure = rebuild(snapshot.kind, snapshot.state)
            kind_of(self.kind).audit(self.structure)
        except (ADSError, ValueError, TypeError, KeyError, IndexError) as exc:
            raise Divergence(f"snapshot does not rebuild: {exc}") from None
        if self.structure.digest() != snapshot.sd.digest:
            raise Divergence("snapshot state does not match its signed digest")
        self.params, self.ops = snapshot.state[0], list(snapshot.state[1])
        self.sd = snapshot.sd

    def _check_sig(self, sd: SignedDigest) -> None:
        try:
            hc.verify_signed_digest(sd, self.public_key, sd.timestamp)
        except Rejected as exc:
            raise Divergence(f"feed signature: {exc.reason}") from None

    def apply(self, msg: UpdateMsg) -> None:
        """Apply one update; raises :class:`Divergence` unless the local digest matches the signed one."""
        self._check_sig(msg.sd)
        if msg.sd.timestamp < self.sd.timestamp:
            raise Divergence("update is older than the current digest")
        try:
            kind_of(self.kind).apply(self.structure, msg.op)
        except (ADSError, ValueError, TypeError, KeyError, IndexError) as exc:
            raise Divergence(f"update does not apply: {exc}") from None
        self.ops.append(msg.op)
        if self.structure.digest() != msg.sd.digest:
            raise Divergence(f"digest mismatch after {msg.op[0]}")
        self.sd = msg.sd

    def refresh(self, sd: SignedDigest) -> None:
        """Adopt a re-signed digest for unchanged data."""
        self._check_sig(sd)
        if sd.digest != self.structure.digest() or sd.timestamp < self.sd.timestamp:
            raise Divergence("re-signed digest does not match the current state")
        self.sd = sd

    def snapshot(self) -> SnapshotMsg:
        return SnapshotMsg(self.kind, (self.params, tuple(self.ops)), self.sd)

    def answer(self, qmsg: QueryMsg) -> AnswerMsg | ErrorMsg:
        if qmsg.kind != self.kind:
            return ErrorMsg(f"responder holds a {self.kind} structure, not {qmsg.kind}")
        k = kind_of(self.kind)
        try:
            q = k.check_query(qmsg.query)
            ans, proof = k.answer(self.structure, q)
        except (ADSError, ValueError, TypeError, IndexError) as exc:
            return ErrorMsg(f"bad query: {exc}")
        return AnswerMsg(self.kind, q, ans, proof, self.sd)


def user_verify(query: QueryMsg | tuple, msg: AnswerMsg | bytes, public_key: bytes, now: int,
                max_age: int = hc.DEFAULT_MAX_AGE, kind: str | None = None) -> Any:
    """Check an answer message for ``query``; raises :class:`Rejected` with the inner reason."""
    if isinstance(query, QueryMsg):
        kind, query = query.kind, query.query
    if isinstance(msg, (bytes, bytearray)):
        try:
            msg = AnswerMsg.from_bytes(bytes(msg))
        except ADSError as exc:
            raise Rejected("malformed-proof", f"unparsable message: {exc}") from None
    if kind is not None and msg.kind != kind:
        raise Rejected("query-echo-mismatch", "structure kind differs")
    try:
        k = kind_of(msg.kind)
        issued = k.check_query(tuple(query))
    except (ProtocolError, TypeError) as exc:
        raise Rejected("query-echo-mismatch", str(exc)) from None
    if hc.encode(msg.query) != hc.encode(issued):
        raise Rejected("query-echo-mismatch")
    q = issued
    hc.verify_signed_digest(msg.sd, public_key, now, max_age=max_age)
    try:
        return k.verify(q, msg.answer, msg.proof, msg.sd, public_key, now, max_age)
    except Rejected:
        raise
    except (ADSError, ValueError, TypeError, KeyError, IndexError, AttributeError, RecursionError) as exc:
        raise Rejected("malformed-proof", f"{type(exc).__name__}: {exc}") from None


# --------------------------------------------------------------------------- adversary


STRATEGIES = (
    "flip-byte",
    "drop-proof-entry",
    "swap-entries",
    "substitute-answer",
    "replay-stale-digest",
    "cross-query-substitution",
)


def _tuple_paths(value: Any, path: tuple = ()) -> Iterator[tuple[tuple, tuple]]:
    if isinstance(value, tuple):
        yield path, value
        for i, v in enumerate(value):
            yield from _tuple_paths(v, path + (i,))


def _replace_at(value: Any, path: tuple, new: Any) -> Any:
    if not path:
        return new
    i = path[0]
    return value[:i] + (_replace_at(value[i], path[1:], new),) + value[i + 1 :]


def _get_at(value: Any, path: tuple) -> Any:
    for i in path:
        value = value[i]
    return value


def default_second_best(msg: AnswerMsg, rng: random.Random) -> Any:
    """A plausible wrong answer next to the honest one."""

    def near(a: Any) -> Any:
        if isinstance(a, bool):
            return not a
        if a is None:
            return 0
        if isinstance(a, int):
            return type(a)(a + rng.choice((-1, 1)))
        if isinstance(a, tuple) and a:
            k = rng.randrange(len(a))
            return a[:k] + (near(a[k]),) + a[k + 1 :]
        if isinstance(a, tuple):
            return (Id(0),)
        return None

    a = msg.answer
    if msg.kind == "catalog" and a:
        k = rng.randrange(len(a))
        v, x = a[k]
        return a[:k] + ((v, near(x)),) + a[k + 1 :]
    if msg.kind == "forest" and isinstance(a, tuple) and a and a[0] == "path":
        return ("path", near(a[1]))
    return near(a)


def tamper(
    msg: AnswerMsg,
    strategy: str,
    seed: int,
    *,
    history: Iterable[SignedDigest] = (),
    other: AnswerMsg | None = None,
    second_best: Callable[[AnswerMsg, random.Random], Any] | None = None,
) -> bytes:
    """Wire bytes of ``msg`` mutated by ``strategy``; deterministic in ``seed``.

    ``history`` supplies earlier signed digests for replays, ``other`` an answer
    to a different query, ``second_best`` the wrong-answer oracle.
    """
    rng = random.Random(f"{strategy}/{seed}")
    honest = msg.to_bytes()
    for _ in range(64):
        out = _tamper_once(msg, strategy, rng, list(history), other, second_best or default_second_best)
        if out != honest:
            return out
    raise ValueError(f"strategy {strategy} cannot change this message")


def _tamper_once(msg, strategy, rng, history, other, second_best) -> bytes:
    if strategy == "flip-byte":
        b = bytearray(msg.to_bytes())
        b[rng.randrange(len(b))] ^= rng.randrange(1, 256)
        return bytes(b)
    if strategy == "drop-proof-entry":
        paths = [(p, t) for p, t in _tuple_paths(msg.proof) if t]
        p, t = rng.choice(paths)
        k = rng.randrange(len(t))
        return _with(msg, proof=_replace_at(msg.proof, p, t[:k] + t[k + 1 :]))
    if strategy == "swap-entries":
        cands = []
        for p, t in _tuple_paths(msg.proof):
            encs = [hc.encode(x) for x in t]
            if len(set(encs)) > 1:
                cands.append((p, t, encs))
        if not cands:
            raise ValueError("proof has no distinct entries to swap")
        p, t, encs = rng.choice(cands)
        while True:
            i, j = rng.sample(range(len(t)), 2)
            if encs[i] != encs[j]:
                break
        lst = list(t)
        lst[i], lst[j] = lst[j], lst[i]
        return _with(msg, proof=_replace_at(msg.proof, p, tuple(lst)))
    if strategy == "substitute-answer":
        return _with(msg, answer=second_best(msg, rng))
    if strategy == "replay-stale-digest":
        old = [sd for sd in history if encode_sd(sd) != encode_sd(msg.sd)]
        if not old:
            raise ValueError("replay needs an earlier signed digest")
        return _with(msg, sd=rng.choice(old))
    if strategy == "cross-query-substitution":
        if other is None or other.kind != msg.kind:
            raise ValueError("cross-query substitution needs an answer of the same kind")
        return _with(msg, answer=other.answer, proof=other.proof)
    raise ValueError(f"unknown tamper strategy {strategy!r}")


def _with(msg: AnswerMsg, **changes) -> bytes:
    fields = dict(kind=msg.kind, query=msg.query, answer=msg.answer, proof=msg.proof, sd=msg.sd)
    fields.update(changes)
    return AnswerMsg(**fields).to_bytes()


# --------------------------------------------------------------------------- text formats


def _lines(text: str) -> Iterator[tuple[int, list[str]]]:
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            yield n, line.split()


def _ints(words: list[str], line: int) -> list[int]:
    try:
        return [int(w) for w in words]
    except ValueError:
        raise ProtocolError(f"line {line}: expected integers") from None


def parse_graph_ops(text: str) -> list[tuple]:
    """``v <id>``, ``e <id> <u> <v>`` and ``t <id> <flag-index>`` lines."""
    ops = []
    for n, w in _lines(text):
        tag, args = w[0], _ints(w[1:], n)
        if tag == "v" and len(args) == 1:
            ops.append(("vertex", *args))
        elif tag == "e" and len(args) == 3:
            ops.append(("edge", args[1], args[2], args[0]))
        elif tag == "t" and len(args) == 2:
            ops.append(("type", *args))
        else:
            raise ProtocolError(f"line {n}: cannot parse {' '.join(w)!r}")
    return ops


_FOREST_ARITY = {"new_tree": 2, "link": 2, "cut": 1, "update": 2, "evert": 1, "destroy": 1}


def parse_forest_ops(text: str) -> list[tuple]:
    """One operation per line: ``new_tree <id> <value>``, ``link <u> <v>``, ``cut <v>``, ..."""
    ops = []
    for n, w in _lines(text):
        if w[0] not in _FOREST_ARITY or len(w) - 1 != _FOREST_ARITY[w[0]]:
            raise ProtocolError(f"line {n}: cannot parse {' '.join(w)!r}")
        ops.append((w[0], *_ints(w[1:], n)))
    return ops


def parse_catalog(text: str) -> tuple:
    """``cnode <id> <k1> <k2> ...``, ``cedge <u> <v>``, ``csource <id>`` lines; returns build params."""
    cats: dict[int, tuple] = {}
    edges: list[tuple[int, int]] = []
    source = None
    for n, w in _lines(text):
        args = _ints(w[1:], n)
        if w[0] == "cnode" and args:
            if args[0] in cats:
                raise ProtocolError(f"line {n}: node {args[0]} declared twice")
            cats[args[0]] = tuple(args[1:])
        elif w[0] == "cedge" and len(args) == 2:
            edges.append((args[0], args[1]))
        elif w[0] == "csource" and len(args) == 1:
            source = args[0]
        else:
            raise ProtocolError(f"line {n}: cannot parse {' '.join(w)!r}")
    try:
        g = cascade.CatalogGraph(cats, edges)
    except ValueError as exc:
        raise ProtocolError(str(exc)) from None
    if source is not None and source != g.source:
        raise ProtocolError(f"declared source {source} is not the graph's only source {g.source}")
    return (tuple((Id(v), cats[v]) for v in sorted(cats)), tuple(sorted((Id(u), Id(v)) for u, v in edges)))


def parse_query(kind: str, text: str) -> tuple:
    """Catalog queries use ``x=<key>`` plus ``qnode <id>`` lines, or ``locate <x> <node>...``.

    Other kinds take ``<query> <args...>``.
    """
    words = [w for _, ws in _lines(text) for w in ws]
    if kind == "catalog" and words[:1] == ["locate"]:
        args = _ints(words[1:], 0)
        if not args:
            raise ProtocolError("locate needs a key")
        return kind_of(kind).check_query(("locate", args[0], tuple(sorted(set(args[1:])))))
    if kind == "catalog":
        x, nodes = None, []
        for n, w in _lines(text):
            if len(w) == 1 and w[0].startswith("x="):
                x = _ints([w[0][2:]], n)[0]
            elif w[0] == "qnode" and len(w) == 2:
                nodes += _ints(w[1:], n)
            else:
                raise ProtocolError(f"line {n}: cannot parse {' '.join(w)!r}")
        if x is None:
            raise ProtocolError("catalog query needs an x=<key> line")
        return ("locate", x, tuple(sorted(set(nodes))))
    if not words:
        raise ProtocolError("empty query")
    return kind_of(kind).check_query((words[0], *_ints(words[1:], 0)))

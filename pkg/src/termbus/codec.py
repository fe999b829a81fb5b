"""Wire envelopes and the two body codecs.

Frame layout (bit-exact; both process-to-router and router-to-router links
speak exactly this):

    4 bytes   big-endian length of everything that follows
    1 byte    version, currently 0x01
    1 byte    flags: bit0 = body is binary-encoded, bit1 = remember_names,
              bit2 = control frame (registration traffic)
    3 fields  destination, sender, reply-to address: each a varint byte
              count followed by that many UTF-8 bytes of canonical text
    rest      body: canonical term text (raw) or the binary term encoding

Binary term encoding, tag byte first:

    0x01 Atom      varint length + UTF-8 name
    0x02 Int       zigzag + varint (64-bit signed)
    0x03 Str       varint length + UTF-8 value
    0x04 Var       varint name length + UTF-8 name; an unnamed variable is
                   length 0 followed by a varint serial, serials numbering
                   first occurrences within one term so sharing survives
    0x05 Compound  functor as an Atom payload, varint arity, then the
                   argument terms in order

Varints are unsigned LEB128.  Decoding is bounds-checked against the frame
length and never reads past it; truncation, version mismatch and body parse
failures raise distinct error types.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional

from . import syntax
from .address import Address, format_address, parse_address
from .terms import Atom, Compound, Int, Str, Term, Var, deref, INT_MIN, INT_MAX

VERSION = 0x01
MAX_FRAME = 64 * 1024 * 1024

TAG_ATOM = 0x01
TAG_INT = 0x02
TAG_STR = 0x03
TAG_VAR = 0x04
TAG_COMPOUND = 0x05


class CodecError(Exception):
    pass


class VersionMismatchError(CodecError):
    pass


class TruncatedFrameError(CodecError):
    pass


class BodyParseError(CodecError):
    pass


class UnqualifiedAddressError(CodecError):
    pass


@dataclass(frozen=True)
class Flags:
    encoded: bool = False
    remember_names: bool = False
    control: bool = False

    def to_byte(self) -> int:
        return (
            (0x01 if self.encoded else 0)
            | (0x02 if self.remember_names else 0)
            | (0x04 if self.control else 0)
        )

    @staticmethod
    def from_byte(b: int) -> "Flags":
        # unknown high bits are ignored for forward compatibility
        return Flags(bool(b & 0x01), bool(b & 0x02), bool(b & 0x04))


@dataclass(frozen=True)
class Envelope:
    """One message in flight: payload plus destination, sender and reply-to.

    reply_to defaults to the sender when not given explicitly.
    """

    payload: Term
    to: Address
    sender: Address
    reply_to: Optional[Address] = None
    flags: Flags = field(default_factory=Flags)

    def __post_init__(self):
        if self.reply_to is None:
            object.__setattr__(self, "reply_to", self.sender)


# ---------------------------------------------------------------------------
# varints

def encode_varint(n: int) -> bytes:
    if n < 0:
        raise ValueError("varint is unsigned")
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def zigzag(n: int) -> int:
    return (n << 1) ^ (n >> 63)


def unzigzag(z: int) -> int:
    return (z >> 1) ^ -(z & 1)


class _Reader:
    """Bounds-checked cursor over one frame's bytes."""

    __slots__ = ("data", "pos", "end")

    def __init__(self, data, pos: int, end: int):
        self.data = data
        self.pos = pos
        self.end = end

    def u8(self) -> int:
        if self.pos >= self.end:
            raise TruncatedFrameError("unexpected end of frame")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedFrameError("unexpected end of frame")
        out = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return out

    def varint(self) -> int:
        shift = 0
        value = 0
        while True:
            b = self.u8()
            value |= (b & 0x7F) << shift
            if not (b & 0x80):
                return value
            shift += 7
            if shift > 70:
                raise BodyParseError("varint too long")

    def utf8(self) -> str:
        n = self.varint()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise BodyParseError(f"bad UTF-8: {e}") from None

    def done(self) -> bool:
        return self.pos == self.end


# ---------------------------------------------------------------------------
# binary term codec

def encode_term_binary(t: Term) -> bytes:
    out = bytearray()
    serials: dict[int, int] = {}

    def emit_name(name: str) -> None:
        raw = name.encode("utf-8")
        out.extend(encode_varint(len(raw)))
        out.extend(raw)

    def walk(x: Term) -> None:
        x = deref(x)
        if isinstance(x, Atom):
            out.append(TAG_ATOM)
            emit_name(x.name)
        elif isinstance(x, Int):
            out.append(TAG_INT)
            out.extend(encode_varint(zigzag(x.value)))
        elif isinstance(x, Str):
            out.append(TAG_STR)
            emit_name(x.value)
        elif isinstance(x, Var):
            out.append(TAG_VAR)
            if x.name is not None:
                emit_name(x.name)
            else:
                out.append(0)
                serial = serials.setdefault(x.id, len(serials))
                out.extend(encode_varint(serial))
        elif isinstance(x, Compound):
            out.append(TAG_COMPOUND)
            emit_name(x.functor)
            out.extend(encode_varint(x.arity))
            for a in x.args:
                walk(a)
        else:
            raise CodecError(f"not a term: {x!r}")

    walk(t)
    return bytes(out)


def _decode_term(r: _Reader) -> Term:
    named: dict[str, Var] = {}
    by_serial: dict[int, Var] = {}

    def walk() -> Term:
        tag = r.u8()
        if tag == TAG_ATOM:
            return Atom(r.utf8())
        if tag == TAG_INT:
            value = unzigzag(r.varint())
            if not (INT_MIN <= value <= INT_MAX):
                raise BodyParseError(f"integer out of 64-bit range: {value}")
            return Int(value)
        if tag == TAG_STR:
            return Str(r.utf8())
        if tag == TAG_VAR:
            name = r.utf8()
            if name:
                v = named.get(name)
                if v is None:
                    v = Var(name)
                    named[name] = v
                return v
            serial = r.varint()
            v = by_serial.get(serial)
            if v is None:
                v = Var()
                by_serial[serial] = v
            return v
        if tag == TAG_COMPOUND:
            functor = r.utf8()
            arity = r.varint()
            if arity == 0:
                raise BodyParseError("compound with zero arity")
            return Compound(functor, tuple(walk() for _ in range(arity)))
        raise BodyParseError(f"unknown term tag 0x{tag:02x}")

    return walk()


def decode_term_binary(data: bytes) -> Term:
    r = _Reader(data, 0, len(data))
    t = _decode_term(r)
    if not r.done():
        raise BodyParseError("trailing bytes after term")
    return t


# ---------------------------------------------------------------------------
# envelopes and frames

def _emit_address(out: bytearray, a: Address) -> None:
    raw = format_address(a).encode("utf-8")
    out.extend(encode_varint(len(raw)))
    out.extend(raw)


def encode_envelope(env: Envelope) -> bytes:
    for slot, a in (("to", env.to), ("sender", env.sender), ("reply_to", env.reply_to)):
        if not a.qualified():
            raise UnqualifiedAddressError(f"{slot} address not fully qualified: {a}")
    inner = bytearray()
    inner.append(VERSION)
    inner.append(env.flags.to_byte())
    _emit_address(inner, env.to)
    _emit_address(inner, env.sender)
    _emit_address(inner, env.reply_to)
    if env.flags.encoded:
        inner.extend(encode_term_binary(env.payload))
    else:
        inner.extend(syntax.format_term(env.payload).encode("utf-8"))
    return struct.pack(">I", len(inner)) + bytes(inner)


def _read_address(r: _Reader, what: str) -> Address:
    text = r.utf8()
    try:
        a = parse_address(text)
    except Exception as e:
        raise BodyParseError(f"bad {what} address {text!r}: {e}") from None
    if not a.qualified():
        raise BodyParseError(f"{what} address not fully qualified: {text!r}")
    return a


def decode_envelope(frame: bytes) -> Envelope:
    """Decode one complete frame (length prefix included)."""
    if len(frame) < 4:
        raise TruncatedFrameError("frame shorter than its length prefix")
    (length,) = struct.unpack_from(">I", frame, 0)
    if length > MAX_FRAME:
        raise BodyParseError(f"frame length {length} exceeds limit")
    if len(frame) - 4 < length:
        raise TruncatedFrameError("frame body shorter than declared length")
    if len(frame) - 4 > length:
        raise BodyParseError("trailing bytes after frame")
    r = _Reader(frame, 4, 4 + length)
    version = r.u8()
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version 0x{version:02x}")
    flags = Flags.from_byte(r.u8())
    to = _read_address(r, "destination")
    sender = _read_address(r, "sender")
    reply_to = _read_address(r, "reply-to")
    if flags.encoded:
        payload = _decode_term(r)
        if not r.done():
            raise BodyParseError("trailing bytes after body term")
    else:
        text = r.take(r.end - r.pos)
        try:
            payload = syntax.parse_term(text.decode("utf-8"))
        except UnicodeDecodeError as e:
            raise BodyParseError(f"bad UTF-8 in body: {e}") from None
        except syntax.ParseError as e:
            raise BodyParseError(f"body parse failure: {e}") from None
    return Envelope(payload, to, sender, reply_to, flags)


def split_frames(data: bytes) -> Iterator[bytes]:
    """Iterate the complete frames in a byte string, in order.

    Frames are self-delimiting, so concatenating N encoded envelopes and
    splitting yields exactly N byte chunks.  A trailing partial frame raises
    TruncatedFrameError.
    """
    pos = 0
    n = len(data)
    while pos < n:
        if pos + 4 > n:
            raise TruncatedFrameError("partial length prefix")
        (length,) = struct.unpack_from(">I", data, pos)
        if pos + 4 + length > n:
            raise TruncatedFrameError("partial frame")
        yield data[pos : pos + 4 + length]
        pos += 4 + length


# ---------------------------------------------------------------------------
# socket helpers and control frames

def recv_exact(sock, n: int) -> Optional[bytes]:
    """Read exactly n bytes; None on EOF at a frame boundary."""
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            if got == 0:
                return None
            raise TruncatedFrameError("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def hard_close(sock) -> None:
    """shutdown() before close().

    A bare close() while another thread is blocked in recv on the same
    socket leaves the connection open on the wire (the blocked call pins
    it), so the peer never sees EOF; shutdown() tears it down immediately.
    """
    if sock is None:
        return
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        sock.close()
    except OSError:
        pass


def read_frame(sock) -> Optional[bytes]:
    """Read one complete frame from a socket; None on clean EOF."""
    head = recv_exact(sock, 4)
    if head is None:
        return None
    (length,) = struct.unpack(">I", head)
    if length > MAX_FRAME:
        raise BodyParseError(f"frame length {length} exceeds limit")
    body = recv_exact(sock, length)
    if body is None:
        raise TruncatedFrameError("connection closed mid-frame")
    return head + body


ROUTER_PROCESS = "router"
_CTL_THREAD = "ctl"


def control_address(process: str, host: str) -> Address:
    return Address(_CTL_THREAD, process, host)


def make_register(process: str, host: str) -> Envelope:
    me = control_address(process, host)
    return Envelope(
        payload=Compound("register", (Atom(process),)),
        to=control_address(ROUTER_PROCESS, host),
        sender=me,
        flags=Flags(control=True),
    )


def make_register_ack(process: str, host: str) -> Envelope:
    return Envelope(
        payload=Atom("register_ack"),
        to=control_address(process, host),
        sender=control_address(ROUTER_PROCESS, host),
        flags=Flags(control=True),
    )


def register_payload_name(env: Envelope) -> Optional[str]:
    """The process name carried by a REGISTER control frame, if it is one."""
    p = deref(env.payload)
    if (
        env.flags.control
        and isinstance(p, Compound)
        and p.functor == "register"
        and p.arity == 1
    ):
        name = deref(p.args[0])
        if isinstance(name, Atom):
            return name.name
    return None


def is_register_ack(env: Envelope) -> bool:
    p = deref(env.payload)
    return env.flags.control and isinstance(p, Atom) and p.name == "register_ack"

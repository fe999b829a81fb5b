"""Symbolic addresses: thread[:process[@host]].

The thread slot holds either a symbolic name or an integer thread id.  The
short forms leave process and host implicit: a bare thread means "same
process", thread:process means "same host"; resolve() fills the gaps from
the sending thread's context.  The reserved one-part addresses ``self`` and
``creator`` denote the calling thread and the thread that forked it.

Addresses double as match patterns: any slot (or the whole address) may be a
variable, and match_address unifies pattern slots against a concrete address
using the shared binding trail.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from .terms import Atom, Compound, Int, Term, Trail, Var, deref, unify_into


class AddressError(ValueError):
    pass


class _Reserved:
    __slots__ = ("token",)

    def __init__(self, token: str):
        self.token = token

    def __repr__(self) -> str:
        return self.token


SELF = _Reserved("self")
CREATOR = _Reserved("creator")

ThreadPart = Union[str, int, Var, _Reserved]
NamePart = Union[str, Var]

_COMPONENT_RE = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_.\-]*\Z")
_DIGITS_RE = re.compile(r"[0-9]+\Z")


@dataclass(frozen=True)
class Address:
    thread: Optional[ThreadPart] = None
    process: Optional[NamePart] = None
    host: Optional[NamePart] = None

    def qualified(self) -> bool:
        """True when all three slots are concrete values."""
        return (
            isinstance(self.thread, (str, int))
            and isinstance(self.process, str)
            and isinstance(self.host, str)
        )

    def __str__(self) -> str:
        return format_address(self)


def _check_component(text: str, what: str) -> str:
    if not _COMPONENT_RE.match(text):
        raise AddressError(f"bad {what} component: {text!r}")
    return text


def parse_address(text: str) -> Address:
    """Parse thread[:process[@host]]; digit-only thread slots become ids."""
    if text in ("self", "creator"):
        return Address(thread=SELF if text == "self" else CREATOR)
    rest = text
    host: Optional[str] = None
    process: Optional[str] = None
    if "@" in rest:
        rest, _, h = rest.partition("@")
        host = _check_component(h, "host")
    if ":" in rest:
        rest, _, p = rest.partition(":")
        # the host separator must come after the process separator
        if ":" in p or "@" in rest:
            raise AddressError(f"malformed address: {text!r}")
        process = _check_component(p, "process")
    if host is not None and process is None:
        raise AddressError(f"address has host but no process: {text!r}")
    t = _check_component(rest, "thread")
    thread: ThreadPart = int(t) if _DIGITS_RE.match(t) else t
    return Address(thread=thread, process=process, host=host)


def _part_str(part) -> str:
    if isinstance(part, _Reserved):
        return part.token
    if isinstance(part, int):
        return str(part)
    if isinstance(part, Var):
        raise AddressError("cannot format an address with variable slots")
    return part


def format_address(a: Address) -> str:
    if a.thread is None:
        raise AddressError("address without thread slot")
    out = _part_str(a.thread)
    if a.process is not None:
        out += ":" + _part_str(a.process)
        if a.host is not None:
            out += "@" + _part_str(a.host)
    elif a.host is not None:
        raise AddressError("address has host but no process")
    return out


@dataclass(frozen=True)
class AddressContext:
    """What the sending thread knows: who it is and who forked it."""

    self_thread: Union[str, int]
    process: str
    host: str
    creator: "Address"

    def self_address(self) -> Address:
        return Address(self.self_thread, self.process, self.host)


def resolve(a: Address, ctx: AddressContext) -> Address:
    """Fully qualify a against ctx; idempotent on qualified addresses."""
    if isinstance(a.thread, _Reserved):
        if a.process is not None or a.host is not None:
            raise AddressError(f"reserved token {a.thread.token} takes no suffix")
        return ctx.self_address() if a.thread is SELF else ctx.creator
    if a.thread is None or isinstance(a.thread, Var):
        raise AddressError("destination thread slot is not concrete")
    process = a.process if a.process is not None else ctx.process
    host = a.host if a.host is not None else ctx.host
    if isinstance(process, Var) or isinstance(host, Var):
        raise AddressError("destination has variable slots")
    return Address(a.thread, process, host)


# ---------------------------------------------------------------------------
# addresses as terms, and matching

def _part_term(part) -> Term:
    if isinstance(part, Var):
        return part
    if isinstance(part, int):
        return Int(part)
    if isinstance(part, str):
        return Atom(part)
    raise AddressError(f"cannot embed address part {part!r} in a term")


def address_to_term(a: Address) -> Term:
    """Embed an address as a term: ':'(Thread, '@'(Process, Host))."""
    t = _part_term(a.thread) if a.thread is not None else Var()
    if a.process is None and a.host is None:
        return t
    p = _part_term(a.process) if a.process is not None else Var()
    if a.host is None:
        return Compound(":", (t, p))
    h = _part_term(a.host)
    return Compound(":", (t, Compound("@", (p, h))))


def _part_from_term(t: Term, allow_int: bool):
    t = deref(t)
    if isinstance(t, Var):
        return t
    if isinstance(t, Atom):
        return t.name
    if isinstance(t, Int) and allow_int:
        return t.value
    raise AddressError(f"term is not an address part: {t!r}")


def term_to_address(t: Term) -> Address:
    """Inverse of address_to_term; accepts the short forms too."""
    t = deref(t)
    if isinstance(t, (Atom, Int, Var)):
        return Address(thread=_part_from_term(t, allow_int=True))
    if isinstance(t, Compound) and t.functor == ":" and t.arity == 2:
        thread = _part_from_term(t.args[0], allow_int=True)
        rhs = deref(t.args[1])
        if isinstance(rhs, Compound) and rhs.functor == "@" and rhs.arity == 2:
            return Address(
                thread,
                _part_from_term(rhs.args[0], allow_int=False),
                _part_from_term(rhs.args[1], allow_int=False),
            )
        return Address(thread, _part_from_term(rhs, allow_int=False))
    raise AddressError(f"term is not an address: {t!r}")


def match_address(pattern, ground: Address, trail: Trail) -> bool:
    """Match a pattern against a concrete address, binding pattern slots.

    pattern may be None (matches anything), a Var (binds to the whole
    address as a term), or an Address whose slots are values, Vars, or None
    wildcards.  Bindings go on the caller's trail; the caller unwinds on an
    overall failure.
    """
    if pattern is None:
        return True
    if isinstance(pattern, Var):
        return unify_into(pattern, address_to_term(ground), trail)
    if not isinstance(pattern, Address):
        raise AddressError(f"not an address pattern: {pattern!r}")
    for pat_part, got_part in (
        (pattern.thread, ground.thread),
        (pattern.process, ground.process),
        (pattern.host, ground.host),
    ):
        if pat_part is None:
            continue
        if got_part is None:
            return False
        if not unify_into(_part_term(pat_part), _part_term(got_part), trail):
            return False
    return True

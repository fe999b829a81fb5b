"""Per-thread message buffers with unification-based selective receive.

Every thread owns exactly one mailbox: a single ordered buffer of envelopes.
Receiving never reorders the buffer; an operation either consumes exactly one
message or leaves the buffer untouched.  Matching an envelope is atomic
across its three components (payload, sender, reply-to): either all three
unify with the caller's patterns, or every binding made along the way is
undone.

Payload views.  A candidate's payload is never matched in place.  With
``remember_names`` set the payload is rebuilt against the receiving thread's
variable registry, so a name reused across messages resolves to one local
cell and bindings carry over; otherwise a fresh copy keeps the received
variables disjoint from everything else.

Concurrency contract: any thread may post; only the owning thread receives,
peeks or commits.  The internal lock covers buffer mutation and blocking
only, so guard tests run without holding it.  Timeouts: BLOCK suspends
indefinitely, POLL never suspends, a float bounds the total suspension of
the call in seconds (for iterating operations, of the whole enumeration).
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Optional, Union

from .address import Address, match_address
from .codec import Envelope
from .terms import (
    Substitution,
    Term,
    Var,
    VarRegistry,
    fresh_copy,
    intern_named,
    undo_to,
    unify_into,
)

BLOCK = "block"
POLL = "poll"
Timeout = Union[float, int, str]

FromPattern = Union[Address, Var, None]


class MailboxClosed(Exception):
    """The owning node is shutting down; blocked receives are abandoned."""


class StaleReferenceError(Exception):
    """commit() was handed a reference to a message no longer buffered."""


@dataclass(frozen=True)
class RecvOptions:
    timeout: Timeout = BLOCK
    remember_names: bool = False


@dataclass(frozen=True)
class MessageRef:
    seq: int


@dataclass
class Guard:
    """One alternative of a message_choice.

    test, when given, decides acceptance after a successful match; a False
    result undoes the bindings and the scan moves on.  body runs after the
    message is consumed and its return value becomes the choice's result.
    Tests and bodies must not receive from the same mailbox.
    """

    message: Term
    from_: FromPattern = None
    reply: FromPattern = None
    test: Optional[Callable[[], bool]] = None
    body: Optional[Callable[[], Any]] = None


class _Budget:
    """Suspension budget for one receive call (deadline set at first wait)."""

    __slots__ = ("timeout", "deadline")

    def __init__(self, timeout: Timeout):
        self.timeout = timeout
        self.deadline: Optional[float] = None

    def wait(self, cond: threading.Condition) -> bool:
        """Suspend once; False when the budget is exhausted instead."""
        if self.timeout == POLL:
            return False
        if self.timeout == BLOCK:
            cond.wait()
            return True
        now = time.monotonic()
        if self.deadline is None:
            self.deadline = now + float(self.timeout)
        remaining = self.deadline - now
        if remaining <= 0:
            return False
        cond.wait(remaining)
        return True


class Mailbox:
    def __init__(self, registry: Optional[VarRegistry] = None):
        self.registry = registry if registry is not None else VarRegistry()
        self._cond = threading.Condition()
        self._items: list[tuple[int, Envelope]] = []
        self._next_seq = 0
        self._closed = False

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)

    def post(self, env: Envelope) -> None:
        """Append an envelope and wake the owner.  Any thread may call this.

        Posts to a closed mailbox are dropped; the sender was already told
        everything it is entitled to know by the local delivery rules.
        """
        with self._cond:
            if self._closed:
                return
            self._items.append((self._next_seq, env))
            self._next_seq += 1
            self._cond.notify_all()

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._items.clear()
            self._cond.notify_all()

    # -- internals ---------------------------------------------------------

    def _snapshot_after(self, cursor: int) -> list[tuple[int, Envelope]]:
        with self._cond:
            if self._closed:
                raise MailboxClosed()
            return [(s, e) for (s, e) in self._items if s > cursor]

    def _remove(self, seq: int) -> bool:
        with self._cond:
            for i, (s, _) in enumerate(self._items):
                if s == seq:
                    del self._items[i]
                    return True
            return False

    def _wait_beyond(self, cursor: int, budget: _Budget) -> bool:
        """Block until a message newer than cursor exists; False on timeout."""
        with self._cond:
            while True:
                if self._closed:
                    raise MailboxClosed()
                if any(s > cursor for (s, _) in self._items):
                    return True
                if not budget.wait(self._cond):
                    return False

    def _match_env(
        self,
        env: Envelope,
        msg_pat: Term,
        from_pat: FromPattern,
        reply_pat: FromPattern,
        remember: bool,
        trail: list,
    ) -> bool:
        # name identity applies only when the sender asked for it too; a
        # sender that did not remember its names never means them as shared
        payload = (
            intern_named(env.payload, self.registry)
            if remember and env.flags.remember_names
            else fresh_copy(env.payload)
        )
        return (
            unify_into(msg_pat, payload, trail)
            and match_address(from_pat, env.sender, trail)
            and match_address(reply_pat, env.reply_to, trail)
        )

    # -- receive operations -------------------------------------------------

    def recv_first(
        self,
        msg_pat: Term,
        from_pat: FromPattern = None,
        reply_pat: FromPattern = None,
        opts: RecvOptions = RecvOptions(),
    ) -> Optional[Substitution]:
        """Match the head of the buffer, or fail leaving it in place.

        Blocks (per opts.timeout) only while the buffer is empty: once a
        first message exists the outcome depends on that message alone.
        """
        budget = _Budget(opts.timeout)
        with self._cond:
            while True:
                if self._closed:
                    raise MailboxClosed()
                if self._items:
                    seq, env = self._items[0]
                    break
                if not budget.wait(self._cond):
                    return None
        trail: list = []
        if self._match_env(env, msg_pat, from_pat, reply_pat, opts.remember_names, trail):
            self._remove(seq)
            return Substitution(trail)
        undo_to(trail, 0)
        return None

    def recv_search(
        self,
        msg_pat: Term,
        from_pat: FromPattern = None,
        reply_pat: FromPattern = None,
        opts: RecvOptions = RecvOptions(),
    ) -> Optional[Substitution]:
        """Consume the oldest matching message, skipping non-matching ones.

        When the scan reaches the end of the buffer the call suspends; only
        newly arrived messages are examined after that.
        """
        budget = _Budget(opts.timeout)
        cursor = -1
        while True:
            for seq, env in self._snapshot_after(cursor):
                cursor = seq
                trail: list = []
                if self._match_env(
                    env, msg_pat, from_pat, reply_pat, opts.remember_names, trail
                ):
                    self._remove(seq)
                    return Substitution(trail)
                undo_to(trail, 0)
            if not self._wait_beyond(cursor, budget):
                return None

    def peek(
        self,
        msg_pat: Term,
        from_pat: FromPattern = None,
        reply_pat: FromPattern = None,
        opts: RecvOptions = RecvOptions(),
    ) -> Iterator[tuple[MessageRef, Substitution]]:
        """Enumerate matches in buffer order without consuming anything.

        Bindings from each yielded match are undone when the iteration
        resumes, so abandoning the iteration keeps the last bindings (pair
        with commit() to consume the chosen message).
        """
        budget = _Budget(opts.timeout)
        cursor = -1
        while True:
            found = None
            for seq, env in self._snapshot_after(cursor):
                cursor = seq
                trail: list = []
                if self._match_env(
                    env, msg_pat, from_pat, reply_pat, opts.remember_names, trail
                ):
                    found = (seq, trail)
                    break
                undo_to(trail, 0)
            if found is not None:
                yield MessageRef(found[0]), Substitution(found[1])
                undo_to(found[1], 0)
                continue
            if not self._wait_beyond(cursor, budget):
                return

    def commit(self, ref: MessageRef) -> None:
        """Remove a peeked message from the buffer."""
        if not self._remove(ref.seq):
            raise StaleReferenceError(f"message {ref.seq} is no longer buffered")

    def message_choice(self, guards: list[Guard], timeout=None) -> Any:
        """Message-major selective receive over several guarded alternatives.

        For each buffered message in arrival order, the guards are tried in
        their listed order; the first guard whose patterns unify and whose
        test passes consumes that message.  Arrival order dominates: a later
        guard fires on an earlier message before an earlier guard fires on a
        later one.  After the scan reaches the end of the buffer the call
        suspends, examining only new arrivals; ``timeout=(seconds, body)``
        bounds that suspension, measured from the moment the first scan was
        exhausted, and runs body() as the alternative.

        Name remembering is always on here, as in every high-level receive.
        """
        deadline: Optional[float] = None
        cursor = -1
        while True:
            for seq, env in self._snapshot_after(cursor):
                cursor = seq
                for g in guards:
                    trail: list = []
                    if self._match_env(env, g.message, g.from_, g.reply, True, trail):
                        if g.test is None or g.test():
                            self._remove(seq)
                            return g.body() if g.body is not None else Substitution(trail)
                    undo_to(trail, 0)
            with self._cond:
                if self._closed:
                    raise MailboxClosed()
                if any(s > cursor for (s, _) in self._items):
                    continue
                if timeout is None:
                    self._cond.wait()
                    continue
                secs, alt = timeout
                now = time.monotonic()
                if deadline is None:
                    deadline = now + float(secs)
                remaining = deadline - now
                if remaining > 0:
                    self._cond.wait(remaining)
                    continue
            return alt() if callable(alt) else alt

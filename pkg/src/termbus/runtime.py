"""The per-process node: threads, symbolic names, clause store, send/receive.

A Node hosts any number of threads.  Each thread has an integer id, an
optional symbolic name, its own mailbox and its own variable registry.
Threads map one-to-one onto host threads; mutual exclusion against other
threads' clause-store activity is available through critical() rather than
through scheduler control.

Sending is location-transparent.  A destination inside this node is handed
its deep-copied payload directly (no frames, no sockets); anything else is
encoded into a wire frame and pushed to the configured router, which owns
all further delivery concerns.  Local sends to unknown threads fail loudly;
remote delivery problems are asynchronous by design and never surface at
the send call.

The clause store is the node-wide shared state: assertion-ordered clauses
per functor/arity with a monotonically increasing change counter.
thread_wait() re-runs a query whenever the counter advances, under the same
node lock that assert/retract and critical() take, so a retract inside a
waiting query is atomic with the decision that it succeeded.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional, Union

from .address import Address, AddressContext, AddressError, parse_address, resolve
from .codec import (
    Envelope,
    Flags,
    encode_envelope,
    decode_envelope,
    hard_close,
    is_register_ack,
    make_register,
    read_frame,
)
from .mailbox import BLOCK, Guard, Mailbox, MessageRef, RecvOptions, Timeout
from .terms import (
    Atom,
    Compound,
    Substitution,
    Term,
    Var,
    deref,
    fresh_copy,
    name_unnamed,
    undo_to,
    unify_into,
)

log = logging.getLogger("termbus.node")

TRUE = Atom("true")


class RuntimeError_(Exception):
    pass


class ThreadExit(Exception):
    """Raised by exit_thread(); unwinds the thread through its cleanup hooks."""


class NodeShutdown(Exception):
    pass


class NotAttachedError(RuntimeError_):
    pass


class UnknownThreadError(RuntimeError_):
    pass


class DuplicateSymbolError(RuntimeError_):
    pass


class RouterUnavailableError(RuntimeError_):
    pass


class ClauseError(RuntimeError_):
    pass


@dataclass(frozen=True)
class NodeConfig:
    process: str
    host: str = "local"
    router: Optional[str] = None  # "ip:port" of this host's router
    connect_timeout: float = 5.0
    reconnect_min: float = 0.05
    reconnect_max: float = 1.0


class ThreadHandle:
    __slots__ = (
        "id",
        "symbol",
        "label",
        "mailbox",
        "creator",
        "status",
        "hooks",
        "pythread",
    )

    RUNNING = "running"
    EXITED = "exited"

    def __init__(self, tid: int, creator_placeholder=None):
        self.id = tid
        self.symbol: Optional[str] = None
        self.label: Optional[str] = None
        self.mailbox = Mailbox()
        self.creator: Optional[Address] = creator_placeholder
        self.status = ThreadHandle.RUNNING
        self.hooks: list[Callable[[], None]] = []
        self.pythread: Optional[threading.Thread] = None

    @property
    def registry(self):
        return self.mailbox.registry


class ClauseDB:
    """Assertion-ordered clauses indexed by functor/arity.

    Mutations run under the node lock and bump a change counter that
    thread_wait listens on.  retract matches heads only, which is all the
    protocols above ever need.
    """

    def __init__(self, lock: threading.RLock):
        self._cond = threading.Condition(lock)
        self._clauses: dict[tuple[str, int], list[tuple[Term, Term]]] = {}
        self.change_count = 0

    @staticmethod
    def split_clause(clause: Term) -> tuple[Term, Term]:
        c = deref(clause)
        if isinstance(c, Compound) and c.functor == ":-" and c.arity == 2:
            return deref(c.args[0]), c.args[1]
        return c, TRUE

    @staticmethod
    def key_of(head: Term) -> tuple[str, int]:
        head = deref(head)
        if isinstance(head, Compound):
            return (head.functor, head.arity)
        if isinstance(head, Atom):
            return (head.name, 0)
        raise ClauseError(f"clause head must be an atom or compound: {head!r}")

    def assertz(self, clause: Term) -> None:
        head, body = self.split_clause(clause)
        key = self.key_of(head)
        snapshot = fresh_copy(Compound(":-", (head, body)))
        with self._cond:
            self._clauses.setdefault(key, []).append(
                (snapshot.args[0], snapshot.args[1])
            )
            self.change_count += 1
            self._cond.notify_all()

    def retract(self, head_pat: Term) -> Optional[Substitution]:
        """Remove the first clause whose head unifies; bindings stay made."""
        pat = deref(head_pat)
        key = self.key_of(pat)
        with self._cond:
            bucket = self._clauses.get(key, [])
            for i, (h, _) in enumerate(bucket):
                trail: list = []
                if unify_into(pat, fresh_copy(h), trail):
                    del bucket[i]
                    self.change_count += 1
                    self._cond.notify_all()
                    return Substitution(trail)
                undo_to(trail, 0)
            return None

    def lookup(self, head_pat: Term) -> Iterator[Substitution]:
        """Enumerate matching clauses; bindings undone as iteration advances."""
        pat = deref(head_pat)
        key = self.key_of(pat)
        with self._cond:
            snapshot = list(self._clauses.get(key, []))
        for h, _ in snapshot:
            trail: list = []
            if unify_into(pat, fresh_copy(h), trail):
                yield Substitution(trail)
            undo_to(trail, 0)

    def clauses(self, key: tuple[str, int]) -> tuple:
        with self._cond:
            return tuple(self._clauses.get(key, ()))

    def size(self) -> int:
        with self._cond:
            return sum(len(v) for v in self._clauses.values())


class Node:
    def __init__(self, config: NodeConfig):
        self.config = config
        self.process = config.process
        self.host = config.host
        self._lock = threading.RLock()  # the critical()/clause-store lock
        self.db = ClauseDB(self._lock)
        self._tables = threading.Lock()
        self._threads: dict[int, ThreadHandle] = {}
        self._symbols: dict[str, int] = {}
        self._undelivered: dict[Union[int, str], list[Envelope]] = {}
        self._next_tid = 0
        self._tl = threading.local()
        self._counters = threading.Lock()
        self.frames_out = 0
        self.frames_in = 0
        self.closing = False
        self._link: Optional[_RouterLink] = None
        if config.router:
            self._link = _RouterLink(self, config.router)

    # -- lifecycle -----------------------------------------------------------

    def start(self, wait: bool = True) -> "Node":
        if self._link:
            self._link.start()
            if wait and not self._link.ready.wait(self.config.connect_timeout):
                raise RouterUnavailableError(
                    f"no registration with router at {self.config.router}"
                )
        return self

    def shutdown(self) -> None:
        self.closing = True
        if self._link:
            self._link.close()
        with self._tables:
            handles = list(self._threads.values())
        for h in handles:
            h.mailbox.close()
        with self.db._cond:
            self.db._cond.notify_all()

    # -- threads -------------------------------------------------------------

    def attach(self, symbol: Optional[str] = None) -> ThreadHandle:
        """Adopt the calling host thread as a node thread (idempotent).

        An attached top-level thread is its own creator.
        """
        h = getattr(self._tl, "handle", None)
        if h is None:
            h = self._new_handle()
            h.creator = self._address_of(h)
            h.pythread = threading.current_thread()
            self._tl.handle = h
        if symbol is not None:
            self.set_symbol(symbol)
        return h

    def _new_handle(self) -> ThreadHandle:
        with self._tables:
            self._next_tid += 1
            h = ThreadHandle(self._next_tid)
            self._threads[h.id] = h
            for env in self._undelivered.pop(h.id, []):
                h.mailbox.post(env)
            return h

    def fork(
        self,
        goal: Callable[[], Any],
        symbol: Optional[str] = None,
        sizes=None,  # accepted for interface parity; host threads size themselves
        label: Optional[str] = None,
    ) -> ThreadHandle:
        """Spawn a node thread running goal().

        The handle (and its mailbox) exists before the goal starts, so a
        message sent right after fork returns cannot be lost.  Cleanup hooks
        run in LIFO order whether the goal returns, fails or exits.
        """
        parent = getattr(self._tl, "handle", None)
        h = self._new_handle()
        h.label = label
        h.creator = self._address_of(parent) if parent else self._address_of(h)
        if symbol is not None:
            self._bind_symbol(symbol, h)

        def runner():
            self._tl.handle = h
            try:
                goal()
            except (ThreadExit, NodeShutdown):
                pass
            except Exception:
                if not self.closing:
                    log.exception("event=thread_failed id=%d label=%s", h.id, h.label)
            finally:
                self._retire(h)

        t = threading.Thread(
            target=runner, daemon=True, name=f"{self.process}-t{h.id}"
        )
        h.pythread = t
        t.start()
        return h

    def _retire(self, h: ThreadHandle) -> None:
        for hook in reversed(h.hooks):
            try:
                hook()
            except Exception:
                if not self.closing:
                    log.exception("event=cleanup_hook_failed id=%d", h.id)
        h.status = ThreadHandle.EXITED
        h.mailbox.close()
        with self._tables:
            if h.symbol is not None and self._symbols.get(h.symbol) == h.id:
                del self._symbols[h.symbol]

    def current(self) -> ThreadHandle:
        h = getattr(self._tl, "handle", None)
        if h is None:
            raise NotAttachedError("calling thread is not attached to this node")
        return h

    def my_id(self) -> int:
        return self.current().id

    def set_symbol(self, name: str, thread: Optional[ThreadHandle] = None) -> None:
        h = thread if thread is not None else self.current()
        self._bind_symbol(name, h)

    def _bind_symbol(self, name: str, h: ThreadHandle) -> None:
        with self._tables:
            holder = self._symbols.get(name)
            if holder is not None and holder != h.id:
                raise DuplicateSymbolError(f"symbol {name!r} already names thread {holder}")
            if h.symbol is not None and h.symbol != name:
                self._symbols.pop(h.symbol, None)
            self._symbols[name] = h.id
            h.symbol = name
            # flushing inside the lock keeps held frames ahead of any frame
            # delivered directly once the name is visible
            for env in self._undelivered.pop(name, []):
                h.mailbox.post(env)

    def on_exit(self, hook: Callable[[], None]) -> None:
        self.current().hooks.append(hook)

    def exit_thread(self):
        raise ThreadExit()

    def live_threads(self, label: Optional[str] = None) -> int:
        with self._tables:
            return sum(
                1
                for h in self._threads.values()
                if h.status == ThreadHandle.RUNNING
                and (label is None or h.label == label)
            )

    # -- addressing ----------------------------------------------------------

    def _address_of(self, h: ThreadHandle) -> Address:
        return Address(h.symbol if h.symbol is not None else h.id, self.process, self.host)

    def self_address(self) -> Address:
        return self._address_of(self.current())

    def context(self) -> AddressContext:
        h = self.current()
        return AddressContext(
            self_thread=h.symbol if h.symbol is not None else h.id,
            process=self.process,
            host=self.host,
            creator=h.creator,
        )

    def _as_address(self, a) -> Address:
        if isinstance(a, Address):
            return a
        if isinstance(a, str):
            return parse_address(a)
        if isinstance(a, int):
            return Address(thread=a)
        if isinstance(a, ThreadHandle):
            return self._address_of(a)
        raise AddressError(f"not an address: {a!r}")

    def _find_handle(self, thread_part) -> Optional[ThreadHandle]:
        # callers hold self._tables
        if isinstance(thread_part, int):
            h = self._threads.get(thread_part)
        elif isinstance(thread_part, str):
            tid = self._symbols.get(thread_part)
            h = self._threads.get(tid) if tid is not None else None
        else:
            h = None
        if h is not None and h.status != ThreadHandle.RUNNING:
            return None
        return h

    def _lookup_local(self, thread_part) -> ThreadHandle:
        with self._tables:
            h = self._find_handle(thread_part)
            if h is None:
                raise UnknownThreadError(f"no live thread {thread_part!r} in {self.process}")
            return h

    # -- send ----------------------------------------------------------------

    def send(
        self,
        msg: Term,
        to,
        reply_to=None,
        *,
        encoded: bool = True,
        remember_names: bool = True,
    ) -> None:
        """Send msg to a symbolic address (the high-level defaults).

        remember_names gives every anonymous variable in msg a generated name
        registered with this thread, so replies can mention it; encoded picks
        the binary body codec for remote hops.  Pass both as False for the
        raw low-level behaviour.
        """
        ctx = self.context()
        dest = resolve(self._as_address(to), ctx)
        sender = ctx.self_address()
        reply = resolve(self._as_address(reply_to), ctx) if reply_to is not None else sender
        payload = msg
        h = self.current()
        if remember_names:
            payload = name_unnamed(payload, h.registry)
        flags = Flags(encoded=encoded, remember_names=remember_names)
        if dest.process == self.process and dest.host == self.host:
            target = self._lookup_local(dest.thread)
            target.mailbox.post(Envelope(fresh_copy(payload), dest, sender, reply, flags))
            return
        if self._link is None:
            raise RouterUnavailableError(
                f"destination {dest} is remote and no router is configured"
            )
        frame = encode_envelope(Envelope(payload, dest, sender, reply, flags))
        self._link.send_frame(frame)

    # -- receive (current thread's mailbox, name remembering on) -------------

    def _opts(self, timeout: Timeout, remember_names: bool) -> RecvOptions:
        return RecvOptions(timeout=timeout, remember_names=remember_names)

    def _pat(self, p):
        if isinstance(p, str):
            return parse_address(p)
        return p

    def recv_first(
        self, msg_pat, from_=None, reply=None, timeout: Timeout = BLOCK,
        remember_names: bool = True,
    ):
        return self.current().mailbox.recv_first(
            msg_pat, self._pat(from_), self._pat(reply),
            self._opts(timeout, remember_names),
        )

    def recv_search(
        self, msg_pat, from_=None, reply=None, timeout: Timeout = BLOCK,
        remember_names: bool = True,
    ):
        return self.current().mailbox.recv_search(
            msg_pat, self._pat(from_), self._pat(reply),
            self._opts(timeout, remember_names),
        )

    def peek(
        self, msg_pat, from_=None, reply=None, timeout: Timeout = "poll",
        remember_names: bool = True,
    ):
        return self.current().mailbox.peek(
            msg_pat, self._pat(from_), self._pat(reply),
            self._opts(timeout, remember_names),
        )

    def commit(self, ref: MessageRef) -> None:
        self.current().mailbox.commit(ref)

    def message_choice(self, guards: list[Guard], timeout=None):
        guards = [
            Guard(g.message, self._pat(g.from_), self._pat(g.reply), g.test, g.body)
            for g in guards
        ]
        return self.current().mailbox.message_choice(guards, timeout)

    # -- clause store ---------------------------------------------------------

    def assert_clause(self, clause: Term) -> None:
        self.db.assertz(clause)

    def retract_clause(self, head_pat: Term) -> Optional[Substitution]:
        return self.db.retract(head_pat)

    def clause_lookup(self, head_pat: Term) -> Iterator[Substitution]:
        return self.db.lookup(head_pat)

    def thread_wait(self, query: Callable[[], Any], timeout: Optional[float] = None):
        """Re-run query after every clause-store change until it is truthy.

        The query runs under the node lock, so a retract inside it is atomic
        with the success decision: of several waiters racing for one fact,
        exactly one sees it.
        """
        deadline = time.monotonic() + timeout if timeout is not None else None
        with self.db._cond:
            while True:
                if self.closing:
                    raise NodeShutdown()
                result = query()
                if result:
                    return result
                seen = self.db.change_count
                while self.db.change_count == seen:
                    if self.closing:
                        raise NodeShutdown()
                    if deadline is None:
                        self.db._cond.wait()
                    else:
                        remaining = deadline - time.monotonic()
                        if remaining <= 0:
                            raise TimeoutError("thread_wait timed out")
                        self.db._cond.wait(remaining)

    def critical(self, body: Optional[Callable[[], Any]] = None):
        """Node-wide mutual exclusion (re-entrant).

        Use as a context manager or pass a callable.  No other thread's
        clause-store mutation or critical section interleaves with the body.
        The body must not block on a mailbox receive.
        """
        if body is None:
            return self._lock
        with self._lock:
            return body()

    # -- stats ----------------------------------------------------------------

    def _count(self, attr: str, k: int = 1) -> None:
        with self._counters:
            setattr(self, attr, getattr(self, attr) + k)

    def stats(self) -> dict:
        with self._counters:
            return {"frames_out": self.frames_out, "frames_in": self.frames_in}

    # inbound from the router link
    def _deliver_inbound(self, env: Envelope) -> None:
        self._count("frames_in")
        with self._tables:
            target = self._find_handle(env.to.thread)
            if target is None:
                # the addressed thread may not exist yet (backlog flushed by
                # the router can outrun thread startup); hold a bounded few
                held = self._undelivered.setdefault(env.to.thread, [])
                held.append(env)
                if len(held) > 128:
                    held.pop(0)
                    log.warning(
                        "event=drop_unknown_target to=%s from=%s", env.to, env.sender
                    )
                return
        target.mailbox.post(env)


class _RouterLink:
    """One duplex connection to this host's router, with reconnection.

    Outbound frames sent while the link is down are buffered and flushed
    after the next successful registration; frame counters count actual
    socket writes and reads.
    """

    def __init__(self, node: Node, endpoint: str):
        self.node = node
        host, _, port = endpoint.rpartition(":")
        self.addr = (host or "127.0.0.1", int(port))
        self.ready = threading.Event()
        self._sock: Optional[socket.socket] = None
        self._wlock = threading.Lock()
        self._outbox: deque[bytes] = deque()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self._run, daemon=True, name=f"{self.node.process}-pump"
        )
        self._thread.start()

    def close(self) -> None:
        with self._wlock:
            sock, self._sock = self._sock, None
        hard_close(sock)

    def send_frame(self, frame: bytes) -> None:
        with self._wlock:
            sock = self._sock
            if sock is None:
                self._outbox.append(frame)
                return
            self.node._count("frames_out")
            try:
                sock.sendall(frame)
            except OSError:
                self.node._count("frames_out", -1)
                self._outbox.append(frame)
                self._sock = None
                return

    def _flush_outbox(self) -> None:
        while True:
            with self._wlock:
                if not self._outbox or self._sock is None:
                    return
                frame = self._outbox.popleft()
                self.node._count("frames_out")
                try:
                    self._sock.sendall(frame)
                except OSError:
                    self.node._count("frames_out", -1)
                    self._outbox.appendleft(frame)
                    self._sock = None
                    return

    def _run(self) -> None:
        backoff = self.node.config.reconnect_min
        while not self.node.closing:
            try:
                sock = socket.create_connection(self.addr, timeout=2.0)
            except OSError:
                time.sleep(backoff)
                backoff = min(backoff * 2, self.node.config.reconnect_max)
                continue
            sock.settimeout(None)
            try:
                sock.sendall(
                    encode_envelope(make_register(self.node.process, self.node.host))
                )
                frame = read_frame(sock)
                if frame is None or not is_register_ack(decode_envelope(frame)):
                    raise OSError("registration not acknowledged")
            except Exception:
                hard_close(sock)
                time.sleep(backoff)
                backoff = min(backoff * 2, self.node.config.reconnect_max)
                continue
            backoff = self.node.config.reconnect_min
            with self._wlock:
                self._sock = sock
            self.ready.set()
            log.info(
                "event=registered process=%s router=%s:%d",
                self.node.process, self.addr[0], self.addr[1],
            )
            self._flush_outbox()
            self._read_loop(sock)
            with self._wlock:
                if self._sock is sock:
                    self._sock = None
            hard_close(sock)

    def _read_loop(self, sock: socket.socket) -> None:
        while not self.node.closing:
            try:
                frame = read_frame(sock)
            except Exception:
                return
            if frame is None:
                return
            try:
                env = decode_envelope(frame)
            except Exception as e:
                log.warning("event=drop_malformed_frame err=%s", e)
                continue
            if env.flags.control:
                continue
            self.node._deliver_inbound(env)

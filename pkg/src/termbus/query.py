"""Distributed query service: clause resolution behind a message protocol.

A serving node runs :func:`query_server_main` on a thread that names itself
``query_thread``.  Clients ask it to prove goals against the node's clause
store, either all at once or one answer at a time:

    all_of(G)     ->  answer_list(L)        L = every solution instance of G
    stream_of(G)  ->  query_thread_is(A)    A = address of a fresh generator
    (to A)            answer_instance(G')   one solution, then the generator
    next ->  A        waits for next/finish before searching on
    finish -> A       stops the generator early
    (from A)          fail                  no (further) solution; generator gone

Replies go to the ``reply_to`` of the request, not its sender, so a query can
be placed on behalf of a third thread.  Requests and answers are matched by
address, never by variable name: every send in the protocol switches name
memory off, because each exchange is self-contained (namelessness rules out
cross-request capture when many clients reuse the same source-level names).

Goals may carry remote annotations ``G ? Server`` and ``G ?? Server``; the
resolver delegates those subgoals to the named server, so a clause store can
spread over several nodes.  Abandoning a ``??`` stream midway leaves the
remote generator alive; the bookkeeping facts planted by
:class:`AnswerStream` let :func:`kill_orphans` chase such generators down a
whole delegation chain (every generator thread re-runs it on exit, so one
finish fans out to everything the abandoned query started).
"""

from __future__ import annotations

import logging
import operator
from typing import Iterator, Optional, Union

from .address import (
    Address,
    AddressError,
    address_to_term,
    parse_address,
    term_to_address,
)
from .address import resolve as resolve_address
from .mailbox import BLOCK, Guard, Timeout
from .runtime import ClauseDB, ClauseError, Node, RuntimeError_
from .syntax import format_term, parse_clause
from .terms import (
    Atom,
    Compound,
    Int,
    Substitution,
    Term,
    Var,
    deref,
    fresh_copy,
    list_parts,
    mk,
    mklist,
    name_unnamed,
    resolve,
    undo_to,
    unify_into,
)

log = logging.getLogger("termbus.query")

SERVER_SYMBOL = "query_thread"
GENERATOR_LABEL = "ans_gen"

_COMPARE = {"<": operator.lt, ">": operator.gt, ">=": operator.ge, "=<": operator.le}


class QueryError(Exception):
    pass


class RemoteTimeout(QueryError):
    """A remote server did not reply within the configured window."""


# --------------------------------------------------------------------------
# resolution engine

def solve(node: Node, goal: Term, timeout: Optional[float] = None) -> Iterator[Substitution]:
    """Prove goal against the node's clause store, one solution per step.

    Depth-first, left to right, clauses in assertion order.  While a
    solution is current the goal term itself is instantiated; advancing the
    iterator undoes those bindings before searching on, and abandoning it
    keeps the last ones made.  Builtins: true, =, integer or atom
    comparison.  ``G ? S`` and ``G ?? S`` ship the subgoal to server S.
    An unknown predicate logs a diagnostic and produces no solutions, so a
    serving loop survives bad queries.  timeout bounds each remote exchange.
    """
    trail: list = []
    for _ in _prove(node, goal, trail, timeout):
        yield Substitution(trail)


def _prove(node: Node, goal: Term, trail: list, timeout: Optional[float]):
    g = deref(goal)
    if isinstance(g, Var):
        log.warning("event=unbound_goal")
        return
    if isinstance(g, Atom) and g.name == "true":
        yield None
        return
    if isinstance(g, Compound) and g.arity == 2:
        f = g.functor
        if f == ",":
            for _ in _prove(node, g.args[0], trail, timeout):
                yield from _prove(node, g.args[1], trail, timeout)
            return
        if f == "=":
            mark = len(trail)
            if unify_into(g.args[0], g.args[1], trail):
                yield None
            undo_to(trail, mark)
            return
        if f in _COMPARE:
            a, b = deref(g.args[0]), deref(g.args[1])
            if isinstance(a, Int) and isinstance(b, Int):
                if _COMPARE[f](a.value, b.value):
                    yield None
            elif isinstance(a, Atom) and isinstance(b, Atom):
                if _COMPARE[f](a.name, b.name):
                    yield None
            else:
                log.warning("event=bad_comparison goal=%s", format_term(resolve(g)))
            return
        if f == "?":
            for _ in query_all(node, g.args[0], g.args[1], timeout=timeout):
                yield None
            return
        if f == "??":
            for _ in query_stream(node, g.args[0], g.args[1], timeout=timeout):
                yield None
            return
    try:
        key = ClauseDB.key_of(g)
    except ClauseError:
        log.warning("event=uncallable_goal goal=%s", format_term(resolve(g)))
        return
    matched = node.db.clauses(key)
    if not matched:
        log.warning("event=unknown_predicate goal=%s", format_term(resolve(g)))
        return
    for head, body in matched:
        mark = len(trail)
        clause = fresh_copy(Compound(":-", (head, body)))
        if unify_into(g, clause.args[0], trail):
            yield from _prove(node, clause.args[1], trail, timeout)
        undo_to(trail, mark)


def find_all(node: Node, goal: Term, timeout: Optional[float] = None) -> list:
    """Every solution of goal as an instantiated copy, in solve order."""
    name_unnamed(goal, node.current().registry)
    out = []
    for _ in solve(node, goal, timeout=timeout):
        out.append(fresh_copy(goal))
    return out


def load_clause_file(node: Node, path) -> int:
    """Assert every clause in a text file, one per line, final stop required.

    Blank lines and % comment lines are skipped.  Returns the clause count.
    """
    n = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("%"):
                continue
            node.assert_clause(parse_clause(line))
            n += 1
    return n


def _server_address(node: Node, server: Union[Address, Term, str]) -> Address:
    if isinstance(server, str):
        addr = parse_address(server)
    elif isinstance(server, Address):
        addr = server
    else:
        addr = term_to_address(deref(server))
    return resolve_address(addr, node.context())


# --------------------------------------------------------------------------
# server side

def query_server_main(node: Node) -> None:
    """Serving loop; run it as (or fork it on) a thread of the serving node.

    all_of is answered inline: collect every solution, reply with the list,
    then sweep this thread's own remote streams (solving may have opened
    some on other servers, and the answers are already safely collected).
    stream_of gets a fresh generator thread whose address goes back to the
    client; all further traffic for that query bypasses this loop.
    """
    node.set_symbol(SERVER_SYMBOL)
    log.info("event=query_server_up process=%s", node.process)
    while True:
        call, reply = Var(), Var()

        def do_all(c=call, r=reply):
            client = term_to_address(deref(r))
            answers = find_all(node, c)
            node.send(mk("answer_list", mklist(answers)), client, remember_names=False)
            kill_orphans(node)

        def do_stream(c=call, r=reply):
            client = term_to_address(deref(r))
            h = node.fork(ans_gen(node, c, client), label=GENERATOR_LABEL)
            node.send(
                mk("query_thread_is", address_to_term(Address(h.id, node.process, node.host))),
                client,
                remember_names=False,
            )

        try:
            node.message_choice(
                [
                    Guard(mk("all_of", call), reply=reply, body=do_all),
                    Guard(mk("stream_of", call), reply=reply, body=do_stream),
                ]
            )
        except (RuntimeError_, AddressError, QueryError) as e:
            # a malformed request or a vanished client must not kill the loop
            log.warning("event=request_failed err=%s", e)


def ans_gen(node: Node, call: Term, client: Address):
    """Thread goal: search call and feed solutions to client on demand.

    Sends the first answer unprompted, then waits for next or finish from
    the client between solutions.  Exhaustion is reported with fail.  The
    exit hook sweeps remote streams this search opened, on every exit path,
    which is what propagates a finish down a delegation chain.
    """
    def run():
        node.on_exit(lambda: kill_orphans(node))
        name_unnamed(call, node.current().registry)
        for _ in solve(node, call):
            node.send(mk("answer_instance", fresh_copy(call)), client, remember_names=False)
            word = node.message_choice(
                [
                    Guard(Atom("next"), from_=client, body=lambda: "next"),
                    Guard(Atom("finish"), from_=client, body=lambda: "finish"),
                ]
            )
            if word == "finish":
                return
        node.send(Atom("fail"), client, remember_names=False)

    return run


def kill_orphans(node: Node) -> None:
    """Retract this thread's remote-stream facts, finishing each generator.

    The receivers run their own sweep on exit, so one call here reaches
    every generator the abandoned query started, however deep.  Sends to
    generators that already exited are absorbed by the delivery drop rule,
    which makes repeated sweeps harmless.
    """
    me = Int(node.my_id())
    while True:
        qth = Var()
        if node.retract_clause(mk("remote_thread", me, qth)) is None:
            return
        try:
            node.send(Atom("finish"), term_to_address(deref(qth)), remember_names=False)
        except (RuntimeError_, AddressError) as e:
            log.debug("event=orphan_gone err=%s", e)


# --------------------------------------------------------------------------
# client side

def query_all(
    node: Node,
    call: Term,
    server: Union[Address, Term, str],
    timeout: Optional[float] = None,
) -> Iterator[Substitution]:
    """Ask server for every solution of call at once, then replay them.

    Yields one Substitution per answer, unifying call against the answers
    in server order; bindings are undone between steps and kept on
    abandonment.  The reply is matched by the server's address, so several
    outstanding requests to different servers cannot cross.
    """
    dest = _server_address(node, server)
    node.send(mk("all_of", call), dest, remember_names=False)
    answers = Var()
    got = node.recv_search(
        mk("answer_list", answers),
        from_=dest,
        timeout=BLOCK if timeout is None else timeout,
        remember_names=False,
    )
    if got is None:
        raise RemoteTimeout(f"no answer_list from {dest} within {timeout}s")
    items, _ = list_parts(answers)
    for item in items:
        trail: list = []
        if unify_into(call, item, trail):
            yield Substitution(trail)
        undo_to(trail, 0)


class AnswerStream:
    """A demand-driven remote solution stream (the one-at-a-time call).

    Construction is eager: the request goes out, the generator address comes
    back, and a remote_thread fact records the live stream in this node's
    clause store.  Each pull then costs one round trip.  The fact goes away
    when the stream ends cleanly (fail received) or is finished explicitly;
    a stream dropped midway leaves it for kill_orphans, which is how an
    enclosing query's cleanup finds the generator later.

    A stream belongs to the thread that opened it.
    """

    def __init__(
        self,
        node: Node,
        call: Term,
        server: Union[Address, Term, str],
        timeout: Optional[float] = None,
    ):
        self.node = node
        self.call = call
        self.timeout: Timeout = BLOCK if timeout is None else timeout
        dest = _server_address(node, server)
        node.send(mk("stream_of", call), dest, remember_names=False)
        who = Var()
        if node.recv_search(
            mk("query_thread_is", who),
            from_=dest,
            timeout=self.timeout,
            remember_names=False,
        ) is None:
            raise RemoteTimeout(f"no generator address from {dest}")
        self.generator = term_to_address(deref(who))
        self._owner = Int(node.my_id())
        node.assert_clause(mk("remote_thread", self._owner, address_to_term(self.generator)))
        self._trail: list = []
        self._started = False
        self._done = False

    def pull(self) -> Optional[Substitution]:
        """Demand one answer; None once the stream is exhausted.

        The previous answer's bindings are undone first, matching the
        iteration discipline everywhere else.
        """
        if self._done:
            return None
        undo_to(self._trail, 0)
        if self._started:
            self.node.send(Atom("next"), self.generator, remember_names=False)
        self._started = True
        got = Var()
        kind = self.node.message_choice(
            [
                Guard(mk("answer_instance", got), from_=self.generator, body=lambda: "answer"),
                Guard(Atom("fail"), from_=self.generator, body=lambda: "fail"),
            ],
            timeout=None if self.timeout == BLOCK else (self.timeout, _stream_silent),
        )
        if kind == "fail":
            self._done = True
            self._forget()
            return None
        if not unify_into(self.call, deref(got), self._trail):
            raise QueryError(
                f"answer {format_term(resolve(got))} is not an instance of the query"
            )
        return Substitution(self._trail)

    def finish(self) -> None:
        """Stop the remote generator now.  The stream is dead afterwards."""
        if self._done:
            return
        self._done = True
        try:
            self.node.send(Atom("finish"), self.generator, remember_names=False)
        except (RuntimeError_, AddressError) as e:
            log.debug("event=generator_gone err=%s", e)
        self._forget()  # we ended it, so it is known-terminated, not orphaned

    def _forget(self) -> None:
        self.node.retract_clause(
            mk("remote_thread", self._owner, address_to_term(self.generator))
        )

    @property
    def closed(self) -> bool:
        return self._done

    def __iter__(self) -> Iterator[Substitution]:
        while True:
            sub = self.pull()
            if sub is None:
                return
            yield sub


def _stream_silent():
    raise RemoteTimeout("no answer from the remote generator")


def query_stream(
    node: Node,
    call: Term,
    server: Union[Address, Term, str],
    timeout: Optional[float] = None,
) -> AnswerStream:
    """Open a one-at-a-time stream for call on server.  See AnswerStream."""
    return AnswerStream(node, call, server, timeout=timeout)

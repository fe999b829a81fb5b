"""Tuple-space protocol: sessions, matching, blocking and removal rules."""

import threading
import time

import pytest

from termbus import linda
from termbus.router import Router, RouterConfig
from termbus.runtime import Node, NodeConfig
from termbus.syntax import format_term, parse_term, parse_term_with_vars
from termbus.terms import deref

from netutil import wait_until


@pytest.fixture
def space():
    """A server node with the accept loop running, plus client attachment."""
    n = Node(NodeConfig(process="space", host="hostL"))
    n.attach("tester")
    # symbol bound before the thread starts, so connects cannot outrun it
    n.fork(lambda: linda.serve(n), symbol=linda.SERVER_SYMBOL, label="linda_main")
    yield n
    n.shutdown()


def session(node):
    return linda.connect(node, linda.SERVER_SYMBOL)


class TestSessionLifecycle:
    def test_connect_yields_private_handler(self, space):
        s1 = session(space)
        s2 = session(space)
        assert s1.handler != s2.handler

    def test_disconnect_stops_handler(self, space):
        s = session(space)
        wait_until(lambda: space.live_threads(label="linda_handler") == 1,
                   msg="handler up")
        s.disconnect()
        wait_until(lambda: space.live_threads(label="linda_handler") == 0,
                   msg="handler gone")


class TestOperations:
    def test_out_then_rd_leaves_tuple(self, space):
        s = session(space)
        s.out(parse_term("stock(widget, 7)"))
        t, vs = parse_term_with_vars("stock(widget, N)")
        assert s.rd(t)
        assert format_term(deref(vs["N"])) == "7"
        # still there
        assert s.rdp(parse_term("stock(widget, 7)"))

    def test_in_removes_tuple(self, space):
        s = session(space)
        s.out(parse_term("stock(widget, 7)"))
        t, vs = parse_term_with_vars("stock(W, N)")
        assert s.in_(t)
        assert format_term(deref(vs["W"])) == "widget"
        assert not s.rdp(parse_term("stock(A, B)"))

    def test_inp_rdp_report_absence(self, space):
        s = session(space)
        assert s.inp(parse_term("nothing(here)")) is False
        assert s.rdp(parse_term("nothing(here)")) is False

    def test_pattern_selects_among_tuples(self, space):
        s = session(space)
        s.out(parse_term("pair(a, 1)"))
        s.out(parse_term("pair(b, 2)"))
        t, vs = parse_term_with_vars("pair(b, X)")
        assert s.in_(t)
        assert format_term(deref(vs["X"])) == "2"
        assert s.rdp(parse_term("pair(a, 1)"))
        assert not s.rdp(parse_term("pair(b, Y)"))

    def test_first_out_wins_among_equals(self, space):
        s = session(space)
        for i in range(3):
            s.out(parse_term(f"queue(job, {i})"))
        order = []
        for _ in range(3):
            t, vs = parse_term_with_vars("queue(job, I)")
            s.in_(t)
            order.append(format_term(deref(vs["I"])))
        assert order == ["0", "1", "2"]

    def test_tuple_with_variables_stored_open(self, space):
        # an open tuple matches any instantiation when read back
        s = session(space)
        s.out(parse_term("rule(X, X)"))
        assert s.rdp(parse_term("rule(3, 3)"))
        assert not s.rdp(parse_term("rule(3, 4)"))


class TestBlocking:
    # every waiter runs on its own OS thread, so it must attach to the node
    # and open its own session: handler replies go to the connecting thread

    def test_in_blocks_until_out(self, space):
        s_feed = session(space)
        got = []

        def waiter():
            space.attach()
            s = session(space)
            t, vs = parse_term_with_vars("token(K)")
            s.in_(t)
            got.append(format_term(deref(vs["K"])))

        th = threading.Thread(target=waiter)
        th.start()
        time.sleep(0.15)
        assert got == []  # still blocked
        s_feed.out(parse_term("token(go)"))
        th.join(5)
        assert got == ["go"]

    def test_rd_blocks_until_out(self, space):
        s_feed = session(space)
        got = []

        def waiter():
            space.attach()
            s = session(space)
            got.append(bool(s.rd(parse_term("flag"))))

        th = threading.Thread(target=waiter)
        th.start()
        time.sleep(0.1)
        s_feed.out(parse_term("flag"))
        th.join(5)
        assert got == [True]
        assert s_feed.rdp(parse_term("flag"))  # rd left it

    def test_two_waiters_one_tuple_exactly_one_wins(self, space):
        winners = []
        lock = threading.Lock()
        started = threading.Barrier(3)

        def waiter(k):
            space.attach()
            s = session(space)
            started.wait()
            if s.in_(parse_term("prize"), timeout=3.0):
                with lock:
                    winners.append(k)

        ths = [threading.Thread(target=waiter, args=(k,)) for k in (1, 2)]
        for t in ths:
            t.start()
        started.wait()
        time.sleep(0.2)
        feeder = session(space)
        feeder.out(parse_term("prize"))
        time.sleep(1.0)
        with lock:
            assert len(winners) == 1
        for t in ths:
            t.join(5)
        with lock:
            assert len(winners) == 1


class TestIsolationAndRemote:
    def test_interleaved_sessions_do_not_cross_replies(self, space):
        s1 = session(space)
        s2 = session(space)
        s1.out(parse_term("mine(1)"))
        s2.out(parse_term("yours(2)"))
        t1, v1 = parse_term_with_vars("mine(A)")
        t2, v2 = parse_term_with_vars("yours(B)")
        assert s2.in_(t2)
        assert s1.in_(t1)
        assert format_term(deref(v1["A"])) == "1"
        assert format_term(deref(v2["B"])) == "2"

    def test_remote_client_through_router(self):
        r = Router(RouterConfig(host="hostL")).start()
        server = Node(
            NodeConfig(process="space", host="hostL", router=r.endpoint())
        ).start()
        client = Node(
            NodeConfig(process="shell", host="hostL", router=r.endpoint())
        ).start()
        try:
            server.attach()
            server.fork(lambda: linda.serve(server),
                        symbol=linda.SERVER_SYMBOL, label="linda_main")
            client.attach("repl")
            s = linda.connect(client, f"{linda.SERVER_SYMBOL}:space@hostL")
            s.out(parse_term("greeting(hello)"))
            t, vs = parse_term_with_vars("greeting(W)")
            assert s.in_(t, timeout=5.0)
            assert format_term(deref(vs["W"])) == "hello"
            s.disconnect()
        finally:
            client.shutdown()
            server.shutdown()
            r.stop()

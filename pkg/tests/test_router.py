"""Routing daemon: registration, store-and-forward, peering, proxy holding."""

import time

import pytest

from termbus.router import Router, RouterConfig
from termbus.runtime import Node, NodeConfig
from termbus.syntax import format_term, parse_term, parse_term_with_vars
from termbus.terms import deref

from netutil import data_frames_out, free_port, wait_until


@pytest.fixture
def stack():
    """Track routers and nodes so every test tears its network down."""
    started = []

    def router(host, **kw):
        r = Router(RouterConfig(host=host, **kw)).start()
        started.append(r)
        return r

    def node(process, host, router_, symbol="main", wait=True):
        endpoint = router_ if isinstance(router_, str) else router_.endpoint()
        n = Node(NodeConfig(process=process, host=host, router=endpoint))
        n.start(wait=wait)
        n.attach(symbol)
        started.append(n)
        return n

    yield router, node
    for s in reversed(started):
        if isinstance(s, Router):
            s.stop()
        else:
            s.shutdown()


def drain(node, pattern, count, timeout=5.0):
    out = []
    for _ in range(count):
        t, vs = parse_term_with_vars(pattern)
        assert node.recv_search(t, timeout=timeout)
        out.append({k: format_term(deref(v)) for k, v in vs.items()})
    return out


class TestSameHost:
    def test_two_processes_roundtrip(self, stack):
        router, node = stack
        r = router("hostA")
        a = node("proc_a", "hostA", r)
        b = node("proc_b", "hostA", r)
        a.send(parse_term("greet(hello)"), "main:proc_b@hostA")
        t, vs = parse_term_with_vars("greet(W)")
        assert b.recv_search(t, timeout=5.0)
        assert format_term(deref(vs["W"])) == "hello"

    def test_remote_send_costs_two_frames(self, stack):
        router, node = stack
        r = router("hostA")
        a = node("proc_a", "hostA", r)
        b = node("proc_b", "hostA", r)
        before = data_frames_out(a, b, r)
        a.send(parse_term("ping"), "main:proc_b@hostA")
        assert b.recv_search(parse_term("ping"), timeout=5.0)
        assert data_frames_out(a, b, r) - before == 2

    def test_sender_address_survives_the_hop(self, stack):
        router, node = stack
        r = router("hostA")
        a = node("proc_a", "hostA", r)
        b = node("proc_b", "hostA", r)
        a.send(parse_term("ping"), "main:proc_b@hostA")
        from termbus.terms import Var

        w = Var()
        assert b.recv_search(parse_term("ping"), from_=w, timeout=5.0)
        assert format_term(deref(w)) == "main:proc_a@hostA"

    def test_raw_text_body_crosses_too(self, stack):
        router, node = stack
        r = router("hostA")
        a = node("proc_a", "hostA", r)
        b = node("proc_b", "hostA", r)
        a.send(parse_term("quoted('odd atom')"), "main:proc_b@hostA", encoded=False)
        t, vs = parse_term_with_vars("quoted(A)")
        assert b.recv_search(t, timeout=5.0)
        assert format_term(deref(vs["A"])) == "'odd atom'"


class TestStoreAndForward:
    def test_frames_wait_for_first_registration(self, stack):
        router, node = stack
        r = router("hostA")
        a = node("proc_a", "hostA", r)
        for i in range(10):
            a.send(parse_term(f"item({i})"), "main:late_proc@hostA")
        wait_until(lambda: r.queued() == 10, msg="frames queued")
        late = node("late_proc", "hostA", r)
        got = drain(late, "item(I)", 10)
        assert [g["I"] for g in got] == [str(i) for i in range(10)]

    def test_restart_receives_backlog_in_order(self, stack):
        router, node = stack
        r = router("hostA")
        a = node("proc_a", "hostA", r)
        svc = node("svc", "hostA", r)
        a.send(parse_term("item(0)"), "main:svc@hostA")
        assert svc.recv_search(parse_term("item(0)"), timeout=5.0)
        svc.shutdown()
        wait_until(
            lambda: r._reg_for("svc").sock is None, msg="router noticed the drop"
        )
        for i in range(1, 11):
            a.send(parse_term(f"item({i})"), "main:svc@hostA")
        wait_until(lambda: r.queued() == 10, msg="backlog held")
        svc2 = node("svc", "hostA", r)
        got = drain(svc2, "item(I)", 10)
        assert [g["I"] for g in got] == [str(i) for i in range(1, 11)]

    def test_overflow_drops_oldest(self, stack):
        router, node = stack
        r = router("hostA", queue_bound=3)
        a = node("proc_a", "hostA", r)
        for i in range(5):
            a.send(parse_term(f"item({i})"), "main:late_proc@hostA")
        wait_until(lambda: r.stats()["dropped"] == 2, msg="two oldest dropped")
        assert r.queued() == 3
        late = node("late_proc", "hostA", r)
        got = drain(late, "item(I)", 3)
        assert [g["I"] for g in got] == ["2", "3", "4"]

    def test_node_outbox_rides_out_router_restart(self, stack):
        router, node = stack
        port = free_port()
        a = node("proc_a", "hostA", f"127.0.0.1:{port}", wait=False)
        a.send(parse_term("early(1)"), "main:proc_b@hostA")
        a.send(parse_term("early(2)"), "main:proc_b@hostA")
        r = router("hostA", bind=f"127.0.0.1:{port}")
        b = node("proc_b", "hostA", r)
        got = drain(b, "early(I)", 2)
        assert [g["I"] for g in got] == ["1", "2"]


class TestCrossRouter:
    def test_delivery_and_three_frame_cost(self, stack):
        router, node = stack
        rb = router("hostB")
        ra = router("hostA", peers={"hostB": rb.endpoint()})
        a = node("proc_a", "hostA", ra)
        b = node("proc_b", "hostB", rb)
        before = data_frames_out(a, b, ra, rb)
        a.send(parse_term("hop(count)"), "main:proc_b@hostB")
        assert b.recv_search(parse_term("hop(count)"), timeout=5.0)
        assert data_frames_out(a, b, ra, rb) - before == 3

    def test_two_way_traffic(self, stack):
        router, node = stack
        port_a, port_b = free_port(), free_port()
        ra = router(
            "hostA", bind=f"127.0.0.1:{port_a}", peers={"hostB": f"127.0.0.1:{port_b}"}
        )
        rb = router(
            "hostB", bind=f"127.0.0.1:{port_b}", peers={"hostA": f"127.0.0.1:{port_a}"}
        )
        a = node("proc_a", "hostA", ra)
        b = node("proc_b", "hostB", rb)

        a.send(parse_term("ask(6)"), "main:proc_b@hostB")
        t, vs = parse_term_with_vars("ask(N)")
        assert b.recv_search(t, timeout=5.0)
        n = int(format_term(deref(vs["N"])))
        b.send(parse_term(f"reply({n * 7})"), "main:proc_a@hostA")
        t2, vs2 = parse_term_with_vars("reply(M)")
        assert a.recv_search(t2, timeout=5.0)
        assert format_term(deref(vs2["M"])) == "42"

    def test_unreachable_host_without_proxy_is_dropped(self, stack):
        router, node = stack
        ra = router("hostA", peers={"hostX": f"127.0.0.1:{free_port()}"})
        a = node("proc_a", "hostA", ra)
        a.send(parse_term("void"), "main:proc_x@hostX")
        wait_until(lambda: ra.stats()["dropped"] == 1, msg="frame dropped")
        s = ra.stats()
        assert s["frames_in"] == s["frames_out"] + s["queued"] + s["dropped"]


class TestProxy:
    def test_proxy_holds_and_drains_in_order(self, stack):
        router, node = stack
        port_c = free_port()
        # hostB's router answers for the (initially dead) hostC
        rb = router(
            "hostB",
            peers={"hostC": f"127.0.0.1:{port_c}"},
            proxies={"hostC": "hostB"},
        )
        ra = router(
            "hostA",
            peers={"hostC": f"127.0.0.1:{port_c}", "hostB": rb.endpoint()},
            proxies={"hostC": "hostB"},
        )
        a = node("proc_a", "hostA", ra)
        for i in range(5):
            a.send(parse_term(f"held({i})"), "main:proc_c@hostC")
        wait_until(lambda: rb.queued() == 5, msg="proxy held the frames")
        rc = router("hostC", bind=f"127.0.0.1:{port_c}")
        c = node("proc_c", "hostC", rc)
        got = drain(c, "held(I)", 5)
        assert [g["I"] for g in got] == [str(i) for i in range(5)]
        wait_until(lambda: rb.queued() == 0, msg="proxy drained")

    def test_direct_route_used_when_peer_is_up(self, stack):
        router, node = stack
        rc = router("hostC")
        rb = router("hostB", peers={"hostC": rc.endpoint()}, proxies={"hostC": "hostB"})
        ra = router(
            "hostA",
            peers={"hostC": rc.endpoint(), "hostB": rb.endpoint()},
            proxies={"hostC": "hostB"},
        )
        a = node("proc_a", "hostA", ra)
        c = node("proc_c", "hostC", rc)
        a.send(parse_term("direct"), "main:proc_c@hostC")
        assert c.recv_search(parse_term("direct"), timeout=5.0)
        assert rb.stats()["frames_in"] == 0  # proxy never involved


class TestStats:
    def test_conservation_after_mixed_traffic(self, stack):
        router, node = stack
        r = router("hostA", queue_bound=2)
        a = node("proc_a", "hostA", r)
        b = node("proc_b", "hostA", r)
        for i in range(4):
            a.send(parse_term(f"live({i})"), "main:proc_b@hostA")
        for i in range(4):
            assert b.recv_search(parse_term(f"live({i})"), timeout=5.0)
        for i in range(4):  # overflows bound of 2
            a.send(parse_term(f"dead({i})"), "main:ghost@hostA")
        a.send(parse_term("gone"), "main:x@hostNowhere")
        wait_until(
            lambda: r.stats()["frames_in"] == 9, msg="router saw all nine frames"
        )
        wait_until(lambda: r.stats()["dropped"] == 3, msg="drops settled")
        s = r.stats()
        assert s["frames_in"] == s["frames_out"] + s["queued"] + s["dropped"]
        assert s["queued"] == 2

    def test_control_frames_not_in_data_counters(self, stack):
        router, node = stack
        r = router("hostA")
        node("proc_a", "hostA", r)
        node("proc_b", "hostA", r)
        s = r.stats()
        assert s["ctl_in"] == 2 and s["ctl_out"] == 2
        assert s["frames_in"] == 0 and s["frames_out"] == 0

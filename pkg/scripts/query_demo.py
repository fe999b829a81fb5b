"""Distributed query walkthrough over two hosts.

Host A serves a graph whose far edges live on host B, reached through a `?`
annotation, so `all path(a, X)` on A quietly crosses the network.  The second
act opens a demand-driven `??` stream and stops early.  The last act forks a
worker that abandons a two-host stream chain mid-iteration; its exit hook
sweeps the orphan table and the finish message propagates host to host until
every temporary answer thread is gone.
"""

import socket
import sys
import time

from termbus import query
from termbus.query import kill_orphans, query_all, query_stream
from termbus.router import Router, RouterConfig
from termbus.runtime import Node, NodeConfig
from termbus.syntax import format_term, parse_clause, parse_goal_with_vars
from termbus.terms import Var, deref, mk


def serving(process, host, router, clauses):
    n = Node(NodeConfig(process=process, host=host, router=router)).start()
    n.attach()
    for c in clauses:
        n.assert_clause(parse_clause(c))
    n.fork(lambda: query.query_server_main(n), symbol=query.SERVER_SYMBOL)
    return n


def orphan_facts(node) -> int:
    return sum(1 for _ in node.clause_lookup(mk("remote_thread", Var(), Var())))


def free_port() -> int:
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def main() -> int:
    port_a, port_b = free_port(), free_port()
    ra = Router(RouterConfig(host="hostA", bind=f"127.0.0.1:{port_a}",
                             peers={"hostB": f"127.0.0.1:{port_b}"})).start()
    rb = Router(RouterConfig(host="hostB", bind=f"127.0.0.1:{port_b}",
                             peers={"hostA": f"127.0.0.1:{port_a}"})).start()

    a = serving("qa", "hostA", ra.endpoint(), [
        "edge(a, b).",
        "edge(X, Y) :- far_edge(X, Y) ? query_thread:qb@hostB.",
        "path(X, Y) :- edge(X, Y).",
        "path(X, Y) :- edge(X, Z), path(Z, Y).",
        "chain(X) :- far_edge(b, X) ?? query_thread:qb@hostB.",
    ])
    b = serving("qb", "hostB", rb.endpoint(), [
        "far_edge(b, c).",
        "far_edge(c, d).",
    ])
    client = Node(NodeConfig(process="shell", host="hostA",
                             router=ra.endpoint())).start()
    client.attach()
    server_a = "query_thread:qa@hostA"

    try:
        print("-- all path(a, X) asked of hostA (far edges live on hostB)")
        g, vs = parse_goal_with_vars("path(a, X)")
        for _ in query_all(client, g, server_a, timeout=10.0):
            print(f"   X = {format_term(deref(vs['X']))}")

        print("-- stream path(a, C), two answers on demand, then finish")
        g, vs = parse_goal_with_vars("path(a, C)")
        s = query_stream(client, g, server_a, timeout=10.0)
        for _ in range(2):
            s.pull()
            print(f"   C = {format_term(deref(vs['C']))}")
        s.finish()
        print("   stream closed early")

        print("-- abandon a cross-host stream chain mid-iteration")

        def fickle():
            client.on_exit(lambda: kill_orphans(client))
            g, vs = parse_goal_with_vars("chain(X)")
            st = query_stream(client, g, server_a, timeout=10.0)
            st.pull()
            print(f"   worker saw X = {format_term(deref(vs['X']))} and walked away")
            # no finish here: the exit hook sweeps the orphan table

        client.fork(fickle, label="fickle").pythread.join(timeout=10.0)
        deadline = time.monotonic() + 5.0
        while time.monotonic() < deadline:
            gens = sum(n.live_threads(label=query.GENERATOR_LABEL) for n in (a, b))
            facts = sum(orphan_facts(n) for n in (a, b, client))
            if gens == 0 and facts == 0:
                break
            time.sleep(0.05)
        print(f"   live answer generators: {gens}, orphan-table facts: {facts}")
        print("   quiescent" if gens == 0 and facts == 0 else "   NOT quiescent")
    finally:
        client.shutdown()
        b.shutdown()
        a.shutdown()
        ra.stop()
        rb.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())

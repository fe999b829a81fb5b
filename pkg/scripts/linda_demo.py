"""Tuple-space walkthrough: a producer and a consumer meeting in the middle.

Starts a router, a tuple-space server process and one client process with
two threads.  The consumer asks for work(Id, Job) before any tuple exists,
so it blocks; the producer then inserts three tuples and the consumer picks
them up one at a time.  Finishes with the non-blocking probes.
"""

import sys
import time

from termbus import linda
from termbus.router import Router, RouterConfig
from termbus.runtime import Node, NodeConfig
from termbus.syntax import format_term, parse_term
from termbus.terms import deref


def main() -> int:
    r = Router(RouterConfig(host="hostA")).start()
    server = Node(NodeConfig(process="linda_server", host="hostA",
                             router=r.endpoint())).start()
    server.attach()
    server.fork(lambda: linda.serve(server), symbol=linda.SERVER_SYMBOL)

    client = Node(NodeConfig(process="shell", host="hostA",
                             router=r.endpoint())).start()
    client.attach()
    space = f"{linda.SERVER_SYMBOL}:linda_server@hostA"

    def consumer():
        s = linda.connect(client, space)
        for _ in range(3):
            pattern = parse_term("work(Id, Job)")
            s.in_(pattern)
            print(f"  consumer took {format_term(deref(pattern))}", flush=True)
        s.disconnect()

    try:
        h = client.fork(consumer, label="consumer")
        time.sleep(0.3)  # let the consumer block on an empty space first
        s = linda.connect(client, space)
        for i, job in enumerate(["grind", "brew", "pour"], start=1):
            t = parse_term(f"work({i}, {job})")
            print(f"producer out {format_term(t)}", flush=True)
            s.out(t)
            time.sleep(0.1)
        h.pythread.join(timeout=5.0)

        probe = parse_term("work(Id, Job)")
        print("rdp work(Id, Job):", "hit" if s.rdp(probe) else "no match")
        left = parse_term("leftovers(X)")
        print("inp leftovers(X):", "hit" if s.inp(left) else "no match")
        s.disconnect()
    finally:
        client.shutdown()
        server.shutdown()
        r.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""python -m termbus <role> ...: the console entry points without installing."""

import sys

from .cli import linda_main, linda_server_main, query_main, query_server_main, router_main

_ROLES = {
    "router": router_main,
    "linda-server": linda_server_main,
    "linda": linda_main,
    "query-server": query_server_main,
    "query": query_main,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv or argv[0] not in _ROLES:
        roles = "|".join(_ROLES)
        sys.stderr.write(f"usage: python -m termbus {{{roles}}} [options]\n")
        return 2
    return _ROLES[argv[0]](argv[1:])


if __name__ == "__main__":
    sys.exit(main())

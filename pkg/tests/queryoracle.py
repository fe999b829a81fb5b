"""A from-scratch resolution oracle for checking the query engine.

Deliberately shares no machinery with the package's resolver: terms become
immutable tuples, bindings live in a substitution dictionary applied
functionally (never destructively), and clause renaming uses a counter
instead of fresh cells.  Same intended semantics: depth-first, left to
right, clauses in listed order, with true, =, and int/atom comparison
built in and no solutions for unknown predicates.
"""

import itertools

from termbus.syntax import parse_clause, parse_goal
from termbus.terms import Atom, Compound, Int, Str, Var, deref

# data terms: ('v', key) ('a', name) ('i', n) ('s', text) ('f', name, args)


def to_data(t):
    t = deref(t)
    if isinstance(t, Var):
        return ("v", t.id)
    if isinstance(t, Atom):
        return ("a", t.name)
    if isinstance(t, Int):
        return ("i", t.value)
    if isinstance(t, Str):
        return ("s", t.value)
    if isinstance(t, Compound):
        return ("f", t.functor, tuple(to_data(a) for a in t.args))
    raise TypeError(f"not a term: {t!r}")


def walk(t, s):
    while t[0] == "v" and t in s:
        t = s[t]
    return t


def unify(a, b, s):
    a, b = walk(a, s), walk(b, s)
    if a == b:
        return s
    if a[0] == "v":
        return {**s, a: b}
    if b[0] == "v":
        return {**s, b: a}
    if a[0] == "f" and b[0] == "f" and a[1] == b[1] and len(a[2]) == len(b[2]):
        for x, y in zip(a[2], b[2]):
            s = unify(x, y, s)
            if s is None:
                return None
        return s
    return None


def rename(t, mapping, fresh):
    if t[0] == "v":
        if t not in mapping:
            mapping[t] = ("v", f"r{next(fresh)}")
        return mapping[t]
    if t[0] == "f":
        return ("f", t[1], tuple(rename(a, mapping, fresh) for a in t[2]))
    return t


def _key(t):
    if t[0] == "f":
        return (t[1], len(t[2]))
    if t[0] == "a":
        return (t[1], 0)
    return None


_CMP = {
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "=<": lambda a, b: a <= b,
}


def prove(db, goal, s, fresh):
    g = walk(goal, s)
    if g == ("a", "true"):
        yield s
        return
    if g[0] == "f" and len(g[2]) == 2:
        name = g[1]
        if name == ",":
            for s1 in prove(db, g[2][0], s, fresh):
                yield from prove(db, g[2][1], s1, fresh)
            return
        if name == "=":
            s1 = unify(g[2][0], g[2][1], s)
            if s1 is not None:
                yield s1
            return
        if name in _CMP:
            a, b = walk(g[2][0], s), walk(g[2][1], s)
            if a[0] == b[0] and a[0] in ("i", "a") and _CMP[name](a[1], b[1]):
                yield s
            return
    key = _key(g)
    for head, body in db:
        if _key(head) != key:
            continue
        m = {}
        h2 = rename(head, m, fresh)
        b2 = rename(body, m, fresh)
        s1 = unify(g, h2, s)
        if s1 is not None:
            yield from prove(db, b2, s1, fresh)


def reify(t, s):
    t = walk(t, s)
    if t[0] == "f":
        return ("f", t[1], tuple(reify(a, s) for a in t[2]))
    return t


def canon(t, names=None):
    """Alpha-rename variables to _0, _1 ... in first-occurrence order."""
    if names is None:
        names = {}
    if t[0] == "v":
        if t not in names:
            names[t] = ("v", f"_{len(names)}")
        return names[t]
    if t[0] == "f":
        return ("f", t[1], tuple(canon(a, names) for a in t[2]))
    return t


def load_db(clause_texts):
    db = []
    for text in clause_texts:
        c = to_data(parse_clause(text))
        if c[0] == "f" and c[1] == ":-" and len(c[2]) == 2:
            db.append((c[2][0], c[2][1]))
        else:
            db.append((c, ("a", "true")))
    return db


def oracle_answers(clause_texts, goal_text):
    """Canonicalized solution instances of the goal, in proof order."""
    db = load_db(clause_texts)
    goal = to_data(parse_goal(goal_text))
    fresh = itertools.count()
    return [canon(reify(goal, s)) for s in prove(db, goal, {}, fresh)]

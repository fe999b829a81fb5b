import random

import pytest
from hypothesis import given

from termbus.syntax import (
    ParseError,
    format_term,
    parse_clause,
    parse_goal,
    parse_term,
    parse_term_with_vars,
)
from termbus.terms import Atom, Compound, Int, Str, Var, deref, mk, mklist, variant

from termgen import gen_term, terms


def test_parse_shared_variables():
    t = parse_term("ok(f(X,X))")
    inner = t.args[0]
    assert deref(inner.args[0]) is deref(inner.args[1])
    assert deref(inner.args[0]).name == "X"


def test_parse_anonymous_vars_are_distinct():
    t = parse_term("f(_,_)")
    assert deref(t.args[0]) is not deref(t.args[1])
    assert deref(t.args[0]).name is None


def test_parse_list_notation():
    t = parse_term("[a,b|T]")
    assert t == Compound(
        ".", (Atom("a"), Compound(".", (Atom("b"), deref(t.args[1]).args[1])))
    )
    _, tail = t.args
    assert deref(deref(tail).args[1]).name == "T"
    assert parse_term("[]") == Atom("[]")
    assert parse_term("[1]") == mklist([Int(1)])


def test_parse_quoted_atom_and_string():
    assert parse_term("'hello world'") == Atom("hello world")
    assert parse_term("'it\\'s'") == Atom("it's")
    assert parse_term('"a\\nb"') == Str("a\nb")


def test_parse_negative_int():
    assert parse_term("-42") == Int(-42)
    assert parse_term("f(-1,2)") == mk("f", Int(-1), Int(2))


def test_parse_error_carries_position():
    with pytest.raises(ParseError) as e:
        parse_term("f(")
    assert e.value.pos == 2
    with pytest.raises(ParseError):
        parse_term("f(a) junk")
    with pytest.raises(ParseError):
        parse_term("99999999999999999999999999")


def test_unknown_escape_rejected():
    with pytest.raises(ParseError):
        parse_term("'a\\qb'")


def test_parse_clause_forms():
    c = parse_clause("path(X,Y) :- edge(X,Z),path(Z,Y).")
    assert c.functor == ":-"
    body = c.args[1]
    assert body.functor == ","
    fact = parse_clause("edge(a,b).")
    assert fact == mk("edge", Atom("a"), Atom("b"))
    with pytest.raises(ParseError):
        parse_clause("edge(a,b)")  # missing stop


def test_conjunction_right_associated():
    g = parse_goal("a,b,c")
    assert g == Compound(",", (Atom("a"), Compound(",", (Atom("b"), Atom("c")))))


def test_address_terms():
    t = parse_term("main_linda_thread:linda_server@lm")
    assert t == Compound(
        ":",
        (Atom("main_linda_thread"), Compound("@", (Atom("linda_server"), Atom("lm")))),
    )
    assert parse_term("t:p") == Compound(":", (Atom("t"), Atom("p")))


def test_annotation_operators():
    g = parse_goal("edge(X,Y) ? query_thread:qs@h")
    assert g.functor == "?"
    assert g.args[0].functor == "edge"
    g2 = parse_goal("p(X)??srv:q@h")
    assert g2.functor == "??"


def test_comparison_operators():
    g = parse_goal("X < 3, Y >= 2, Z =< 1, W > 0, A = b")
    names = []
    while g.functor == ",":
        names.append(g.args[0].functor)
        g = deref(g.args[1])
    names.append(g.functor)
    assert names == ["<", ">=", "=<", ">", "="]


def test_format_examples():
    assert format_term(parse_term("f(a,[1,2|T],\"s\")")) == 'f(a,[1,2|T],"s")'
    assert format_term(Atom("two words")) == "'two words'"
    assert format_term(Atom("[]")) == "[]"
    assert format_term(Atom(".")) == "'.'"
    assert format_term(mk(",", Atom("a"), Atom("b"))) == "a,b"
    assert format_term(mk(",", Atom("a"), Atom("b"), Atom("c"))) == "','(a,b,c)"
    assert format_term(parse_clause("h :- a,b.")) == "h :- a,b"


def test_format_unnamed_vars_get_serials():
    u = Var()
    assert format_term(mk("f", u, u, Var())) == "f(_G1,_G1,_G2)"


def test_format_serial_skips_taken_names():
    named = Var("_G1")
    out = format_term(mk("f", named, Var()))
    assert out == "f(_G1,_G2)"


def test_format_sanitizes_unprintable_var_names():
    weird = Var("no good")
    assert format_term(mk("f", weird, weird)) == "f(_G1,_G1)"


def test_format_writes_bound_value():
    x = Var("X")
    x.ref = mk("g", Int(1))
    assert format_term(mk("f", x)) == "f(g(1))"
    x.ref = None


def test_nested_operators_parenthesized():
    t = parse_term("f((a,b),c)")
    assert deref(t.args[0]).functor == ","
    assert format_term(t) == "f((a,b),c)"
    t2 = parse_term("[(a,b)]")
    assert format_term(t2) == "[(a,b)]"


def test_parse_comments_and_whitespace():
    c = parse_clause("edge(a,b).  % the first edge")
    assert c == mk("edge", Atom("a"), Atom("b"))


def test_parse_term_with_vars_table():
    t, vs = parse_term_with_vars("f(X,Y,X)")
    assert set(vs) == {"X", "Y"}
    assert deref(t.args[0]) is vs["X"]


def roundtrip(t):
    text = format_term(t)
    back = parse_term(text)
    assert variant(t, back), f"{text!r} reparsed as {format_term(back)!r}"
    # canonical text is a fixed point
    assert format_term(back) == text


@given(terms())
def test_roundtrip_property(t):
    roundtrip(t)


def test_roundtrip_seeded_bulk():
    rng = random.Random(2024)
    for _ in range(500):
        roundtrip(gen_term(rng))

"""First-order terms with destructive unification and per-thread variable naming.

A term is one of Atom, Int, Str, Var or Compound.  Lists are ordinary
compounds built from the functor ``'.'`` and the atom ``[]``; helpers at the
bottom of this module build and take them apart.

Variables are mutable binding cells.  Unification binds cells in place and
records every binding on a trail so that a failed attempt can be unwound,
leaving every cell exactly as it was.  That undo discipline is what the
mailbox matching operations and the clause store lean on.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Union

INT_MIN = -(2**63)
INT_MAX = 2**63 - 1

_cell_counter = itertools.count(1)
_cell_lock = threading.Lock()


def _next_cell_id() -> int:
    with _cell_lock:
        return next(_cell_counter)


class Var:
    """A logic variable: a binding cell with a stable id and an optional name.

    Two occurrences of the same ``Var`` object are the same variable; the id
    exists for printing, serial assignment and registry bookkeeping.  ``ref``
    is the current binding (None while unbound).
    """

    __slots__ = ("id", "name", "ref")

    def __init__(self, name: Optional[str] = None):
        self.id = _next_cell_id()
        self.name = name
        self.ref: Optional[Term] = None

    def __repr__(self) -> str:
        tag = self.name if self.name is not None else f"_G{self.id}"
        if self.ref is None:
            return f"Var({tag})"
        return f"Var({tag}={self.ref!r})"


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class Int:
    value: int

    def __post_init__(self):
        if not (INT_MIN <= self.value <= INT_MAX):
            raise ValueError(f"integer out of 64-bit range: {self.value}")


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Compound:
    functor: str
    args: tuple

    def __post_init__(self):
        if len(self.args) == 0:
            raise ValueError("zero-arity compound; use Atom instead")

    @property
    def arity(self) -> int:
        return len(self.args)


Term = Union[Atom, Int, Str, Var, Compound]

# ---------------------------------------------------------------------------
# dereference / inspection


def deref(t: Term) -> Term:
    """Follow variable bindings until an unbound Var or a non-Var is reached."""
    while isinstance(t, Var) and t.ref is not None:
        t = t.ref
    return t


def resolve(t: Term) -> Term:
    """Deep snapshot of t with every bound variable replaced by its value.

    Unbound variables are kept as the very same cells, so the result still
    shares them with the input.
    """
    t = deref(t)
    if isinstance(t, Compound):
        return Compound(t.functor, tuple(resolve(a) for a in t.args))
    return t


def variables(t: Term) -> list[Var]:
    """Unbound variables of t in first-occurrence order (left to right)."""
    out: list[Var] = []
    seen: set[int] = set()

    def walk(x: Term) -> None:
        x = deref(x)
        if isinstance(x, Var):
            if x.id not in seen:
                seen.add(x.id)
                out.append(x)
        elif isinstance(x, Compound):
            for a in x.args:
                walk(a)

    walk(t)
    return out


def term_equal(a: Term, b: Term) -> bool:
    """Structural equality after dereferencing; variables compare by identity."""
    a, b = deref(a), deref(b)
    if isinstance(a, Var) or isinstance(b, Var):
        return a is b
    if type(a) is not type(b):
        return False
    if isinstance(a, Compound):
        return (
            a.functor == b.functor
            and a.arity == b.arity
            and all(term_equal(x, y) for x, y in zip(a.args, b.args))
        )
    return a == b


def variant(a: Term, b: Term) -> bool:
    """True when a and b are equal up to a consistent renaming of variables."""
    fwd: dict[int, int] = {}
    rev: dict[int, int] = {}

    def walk(x: Term, y: Term) -> bool:
        x, y = deref(x), deref(y)
        if isinstance(x, Var) and isinstance(y, Var):
            if fwd.setdefault(x.id, y.id) != y.id:
                return False
            if rev.setdefault(y.id, x.id) != x.id:
                return False
            return True
        if isinstance(x, Var) or isinstance(y, Var):
            return False
        if type(x) is not type(y):
            return False
        if isinstance(x, Compound):
            if x.functor != y.functor or x.arity != y.arity:
                return False
            return all(walk(p, q) for p, q in zip(x.args, y.args))
        return x == y

    return walk(a, b)


# ---------------------------------------------------------------------------
# unification

Trail = list  # list[Var], in binding order


def undo_to(trail: Trail, mark: int) -> None:
    """Unbind every cell recorded past mark, restoring the pre-attempt state."""
    while len(trail) > mark:
        trail.pop().ref = None


def _occurs(v: Var, t: Term) -> bool:
    t = deref(t)
    if isinstance(t, Var):
        return t is v
    if isinstance(t, Compound):
        return any(_occurs(v, a) for a in t.args)
    return False


def _bind(v: Var, t: Term, trail: Trail) -> None:
    v.ref = t
    trail.append(v)


def unify_into(a: Term, b: Term, trail: Trail, occurs_check: bool = False) -> bool:
    """Destructively unify a and b, recording bindings on trail.

    Returns False on mismatch; the caller is responsible for unwinding the
    trail to its entry mark in that case.  By default no occurs-check is
    performed; pass occurs_check=True to reject cyclic bindings.
    """
    a, b = deref(a), deref(b)
    if a is b:
        return True
    if isinstance(a, Var):
        if occurs_check and _occurs(a, b):
            return False
        _bind(a, b, trail)
        return True
    if isinstance(b, Var):
        if occurs_check and _occurs(b, a):
            return False
        _bind(b, a, trail)
        return True
    if isinstance(a, Compound) and isinstance(b, Compound):
        if a.functor != b.functor or a.arity != b.arity:
            return False
        return all(
            unify_into(x, y, trail, occurs_check) for x, y in zip(a.args, b.args)
        )
    if type(a) is not type(b):
        return False
    return a == b


class Substitution:
    """The bindings made by one successful match, with an undo handle.

    The bindings are already in effect on the cells themselves; this object
    records which cells were bound so the match can be rolled back.  It is
    always truthy, so ``unify(...) or fail`` style checks read naturally even
    for a match that bound nothing.
    """

    __slots__ = ("_trail",)

    def __init__(self, trail: Trail):
        self._trail = trail

    def __bool__(self) -> bool:
        return True

    @property
    def bound_cells(self) -> tuple:
        return tuple(self._trail)

    def __getitem__(self, v: Var) -> Term:
        return resolve(v)

    def mapping(self) -> dict[int, Term]:
        return {v.id: resolve(v) for v in self._trail}

    def undo(self) -> None:
        undo_to(self._trail, 0)

    def __repr__(self) -> str:
        inner = ", ".join(
            f"{v.name or '_G%d' % v.id}={resolve(v)!r}" for v in self._trail
        )
        return f"Substitution({inner})"


def unify(a: Term, b: Term, occurs_check: bool = False) -> Optional[Substitution]:
    """Unify two terms.  On success returns the bindings; on failure returns
    None with every cell restored to its prior state."""
    trail: Trail = []
    if unify_into(a, b, trail, occurs_check):
        return Substitution(trail)
    undo_to(trail, 0)
    return None


# ---------------------------------------------------------------------------
# copying and naming

def fresh_copy(t: Term) -> Term:
    """Structural copy with every unbound variable replaced by a fresh cell.

    Bound variables are followed, so the copy has no binding connection to
    the original; sharing among the original's unbound variables is preserved
    in the copy, and names ride along.
    """
    mapping: dict[int, Var] = {}

    def walk(x: Term) -> Term:
        x = deref(x)
        if isinstance(x, Var):
            c = mapping.get(x.id)
            if c is None:
                c = Var(x.name)
                mapping[x.id] = c
            return c
        if isinstance(x, Compound):
            return Compound(x.functor, tuple(walk(a) for a in x.args))
        return x

    return walk(t)


class VarRegistry:
    """Per-thread map from variable names to their binding cells.

    Looking up the same name always yields the same cell until the registry
    is cleared.  The registry also hands out generated names for anonymous
    variables; generated names use the reserved "_A<n>" shape and never
    collide with a name already present.
    """

    __slots__ = ("_cells", "_counter")

    GENERATED_PREFIX = "_A"

    def __init__(self):
        self._cells: dict[str, Var] = {}
        self._counter = 0

    def __len__(self) -> int:
        return len(self._cells)

    def lookup(self, name: str) -> Optional[Var]:
        return self._cells.get(name)

    def intern(self, name: str) -> Var:
        """The cell registered under name, creating a fresh one on first use."""
        c = self._cells.get(name)
        if c is None:
            c = Var(name)
            self._cells[name] = c
        return c

    def adopt(self, v: Var) -> None:
        """Record an already-named cell, first registration wins."""
        if v.name is None:
            raise ValueError("cannot adopt an unnamed variable")
        self._cells.setdefault(v.name, v)

    def generate_name(self) -> str:
        while True:
            self._counter += 1
            name = f"{self.GENERATED_PREFIX}{self._counter}"
            if name not in self._cells:
                return name

    def clear(self) -> None:
        self._cells.clear()
        self._counter = 0


def name_unnamed(t: Term, reg: VarRegistry) -> Term:
    """Give every unnamed unbound variable in t a freshly generated name.

    The name is written onto the cell itself (occurrences stay shared) and
    registered in reg, so a later reply that mentions the name is interned
    back to this very cell.  Named variables encountered on the way are
    adopted into the registry as well.  Applying the operation twice is the
    same as applying it once.
    """
    seen: set[int] = set()

    def walk(x: Term) -> None:
        x = deref(x)
        if isinstance(x, Var):
            if x.id in seen:
                return
            seen.add(x.id)
            if x.name is None:
                x.name = reg.generate_name()
                reg._cells[x.name] = x
            else:
                reg.adopt(x)
        elif isinstance(x, Compound):
            for a in x.args:
                walk(a)

    walk(t)
    return t


def intern_named(t: Term, reg: VarRegistry) -> Term:
    """Rebuild t with every named variable replaced by reg's cell for that name.

    This is the receiving half of name remembering: messages from the same
    correspondent that reuse a variable name end up sharing one local cell,
    so a binding made after the first message is visible in the second.
    Unnamed variables are left as they are.
    """

    def walk(x: Term) -> Term:
        x = deref(x)
        if isinstance(x, Var):
            if x.name is not None:
                return reg.intern(x.name)
            return x
        if isinstance(x, Compound):
            new_args = tuple(walk(a) for a in x.args)
            if all(n is o for n, o in zip(new_args, x.args)):
                return x
            return Compound(x.functor, new_args)
        return x

    return walk(t)


# ---------------------------------------------------------------------------
# lists and small builders

NIL = Atom("[]")
CONS = "."


def mk(functor: str, *args: Term) -> Term:
    return Compound(functor, tuple(args)) if args else Atom(functor)


def mklist(items, tail: Term = NIL) -> Term:
    t = tail
    for x in reversed(list(items)):
        t = Compound(CONS, (x, t))
    return t


def list_parts(t: Term) -> tuple[list, Term]:
    """Split a cons chain into (elements, tail); tail is [] for proper lists."""
    items = []
    t = deref(t)
    while isinstance(t, Compound) and t.functor == CONS and t.arity == 2:
        items.append(t.args[0])
        t = deref(t.args[1])
    return items, t

"""Temporal-logic syntax, a text grammar for it, and formula progression.

Formulas are interpreted over finite traces with strong semantics: an
unfulfilled Next/Eventually/Until at the end of a trace is false, Always is
vacuously true. ``progress`` rewrites a formula against one trace step and
``final_eval`` closes it off at the end; ``evaluate_trace`` is an independent
evaluator used to cross-check the two.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator


class FormulaError(Exception):
    """Base class for formula construction and parsing problems."""


class ParseError(FormulaError):
    """Raised on malformed formula text; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownPropositionError(FormulaError):
    """A formula refers to a proposition the ambient set does not define."""


def _normalize_text(text: str) -> str:
    return " ".join(text.split()).lower()


@dataclass(frozen=True)
class Proposition:
    """One natural-language event phrase, e.g. "woman pours hot water over granola"."""

    id: int
    text: str

    def __post_init__(self):
        if self.id < 0:
            raise ValueError(f"proposition id must be non-negative, got {self.id}")
        if not self.text.strip():
            raise ValueError("proposition text must be non-empty")
        if '"' in self.text:
            raise ValueError("proposition text must not contain double quotes")


class PropositionSet:
    """Ordered propositions with dense ids 0..n-1 and duplicate-free texts."""

    def __init__(self, items: Iterable[Proposition]):
        items = tuple(items)
        for expected, prop in enumerate(items):
            if prop.id != expected:
                raise ValueError(
                    f"proposition ids must be dense 0..n-1; position {expected} has id {prop.id}"
                )
        seen: dict[str, int] = {}
        for prop in items:
            key = _normalize_text(prop.text)
            if key in seen:
                raise ValueError(
                    f"duplicate proposition text {prop.text!r} (ids {seen[key]} and {prop.id})"
                )
            seen[key] = prop.id
        self._items = items
        self._by_text = seen

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "PropositionSet":
        return cls(Proposition(i, t) for i, t in enumerate(texts))

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Proposition]:
        return iter(self._items)

    def __getitem__(self, pid: int) -> Proposition:
        return self._items[pid]

    def __eq__(self, other) -> bool:
        return isinstance(other, PropositionSet) and self._items == other._items

    def id_for(self, phrase: str) -> int:
        """Look up a proposition id by phrase, tolerant of case and spacing."""
        key = _normalize_text(phrase)
        if key not in self._by_text:
            raise UnknownPropositionError(f"unknown proposition phrase {phrase!r}")
        return self._by_text[key]

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(p.text for p in self._items)


# --- abstract syntax -------------------------------------------------------

class TLFormula:
    """Base node. Structural equality and hashing make formulas usable as memo keys."""

    __slots__ = ()


@dataclass(frozen=True)
class TrueF(TLFormula):
    pass


@dataclass(frozen=True)
class FalseF(TLFormula):
    pass


@dataclass(frozen=True)
class Atom(TLFormula):
    pid: int


@dataclass(frozen=True)
class Not(TLFormula):
    sub: TLFormula


@dataclass(frozen=True)
class And(TLFormula):
    left: TLFormula
    right: TLFormula


@dataclass(frozen=True)
class Or(TLFormula):
    left: TLFormula
    right: TLFormula


@dataclass(frozen=True)
class Implies(TLFormula):
    left: TLFormula
    right: TLFormula


@dataclass(frozen=True)
class Next(TLFormula):
    sub: TLFormula


@dataclass(frozen=True)
class Eventually(TLFormula):
    sub: TLFormula


@dataclass(frozen=True)
class Always(TLFormula):
    sub: TLFormula


@dataclass(frozen=True)
class Until(TLFormula):
    left: TLFormula
    right: TLFormula


def _cached_hash(self) -> int:
    # Hashing recurses through subformulas; memo-heavy callers (progression,
    # the checker's tables) hash the same nodes constantly, so cache per node.
    try:
        return object.__getattribute__(self, "_hash_cache")
    except AttributeError:
        value = hash(
            (type(self).__name__,)
            + tuple(getattr(self, f.name) for f in dataclasses.fields(self))
        )
        object.__setattr__(self, "_hash_cache", value)
        return value


for _cls in (TrueF, FalseF, Atom, Not, And, Or, Implies, Next, Eventually, Always, Until):
    _cls.__hash__ = _cached_hash  # type: ignore[method-assign]


TRUE = TrueF()
FALSE = FalseF()


@lru_cache(maxsize=None)
def _structural_key(f: TLFormula) -> str:
    """Total order key for deterministic canonical ordering of operands."""
    if isinstance(f, TrueF):
        return "T"
    if isinstance(f, FalseF):
        return "F"
    if isinstance(f, Atom):
        return f"p{f.pid}"
    if isinstance(f, Not):
        return f"(!{_structural_key(f.sub)})"
    if isinstance(f, Next):
        return f"(X{_structural_key(f.sub)})"
    if isinstance(f, Eventually):
        return f"(F{_structural_key(f.sub)})"
    if isinstance(f, Always):
        return f"(G{_structural_key(f.sub)})"
    if isinstance(f, And):
        return f"(&{_structural_key(f.left)}{_structural_key(f.right)})"
    if isinstance(f, Or):
        return f"(|{_structural_key(f.left)}{_structural_key(f.right)})"
    if isinstance(f, Implies):
        return f"(>{_structural_key(f.left)}{_structural_key(f.right)})"
    if isinstance(f, Until):
        return f"(U{_structural_key(f.left)}{_structural_key(f.right)})"
    raise TypeError(f"not a formula node: {f!r}")


# Simplifying constructors. Used by progression so residual obligations never
# carry And(True, x) / Or(False, x) / Not(Not(x)) shapes; commutative operands
# are put in canonical order so structurally equal residuals coincide as memo
# keys.

def not_(f: TLFormula) -> TLFormula:
    if isinstance(f, TrueF):
        return FALSE
    if isinstance(f, FalseF):
        return TRUE
    if isinstance(f, Not):
        return f.sub
    return Not(f)


def and_(f: TLFormula, g: TLFormula) -> TLFormula:
    if isinstance(f, FalseF) or isinstance(g, FalseF):
        return FALSE
    if isinstance(f, TrueF):
        return g
    if isinstance(g, TrueF):
        return f
    if f == g:
        return f
    if _structural_key(g) < _structural_key(f):
        f, g = g, f
    return And(f, g)


def or_(f: TLFormula, g: TLFormula) -> TLFormula:
    if isinstance(f, TrueF) or isinstance(g, TrueF):
        return TRUE
    if isinstance(f, FalseF):
        return g
    if isinstance(g, FalseF):
        return f
    if f == g:
        return f
    if _structural_key(g) < _structural_key(f):
        f, g = g, f
    return Or(f, g)


def implies_(f: TLFormula, g: TLFormula) -> TLFormula:
    if isinstance(f, FalseF) or isinstance(g, TrueF):
        return TRUE
    if isinstance(f, TrueF):
        return g
    if isinstance(g, FalseF):
        return not_(f)
    return Implies(f, g)


@lru_cache(maxsize=None)
def atoms_of(f: TLFormula) -> frozenset[int]:
    """Ids of all propositions the formula mentions."""
    if isinstance(f, (TrueF, FalseF)):
        return frozenset()
    if isinstance(f, Atom):
        return frozenset({f.pid})
    if isinstance(f, (Not, Next, Eventually, Always)):
        return atoms_of(f.sub)
    return atoms_of(f.left) | atoms_of(f.right)


@lru_cache(maxsize=None)
def simplify(f: TLFormula) -> TLFormula:
    """Rebuild with the simplifying boolean constructors.

    Temporal nodes are kept structural: under strong finite-trace semantics
    ``F true`` is false on the empty trace, so it must not collapse to true.
    """
    if isinstance(f, (TrueF, FalseF, Atom)):
        return f
    if isinstance(f, Not):
        return not_(simplify(f.sub))
    if isinstance(f, And):
        return and_(simplify(f.left), simplify(f.right))
    if isinstance(f, Or):
        return or_(simplify(f.left), simplify(f.right))
    if isinstance(f, Implies):
        return implies_(simplify(f.left), simplify(f.right))
    if isinstance(f, Next):
        return Next(simplify(f.sub))
    if isinstance(f, Eventually):
        return Eventually(simplify(f.sub))
    if isinstance(f, Always):
        return Always(simplify(f.sub))
    if isinstance(f, Until):
        return Until(simplify(f.left), simplify(f.right))
    raise TypeError(f"not a formula node: {f!r}")


def progress(f: TLFormula, labels: Iterable[int]) -> TLFormula:
    """Residual obligation after consuming one trace step labelled ``labels``."""
    return _progress(simplify(f), frozenset(labels))


@lru_cache(maxsize=200_000)
def _progress(f: TLFormula, labels: frozenset[int]) -> TLFormula:
    if isinstance(f, (TrueF, FalseF)):
        return f
    if isinstance(f, Atom):
        return TRUE if f.pid in labels else FALSE
    if isinstance(f, Not):
        return not_(_progress(f.sub, labels))
    if isinstance(f, And):
        return and_(_progress(f.left, labels), _progress(f.right, labels))
    if isinstance(f, Or):
        return or_(_progress(f.left, labels), _progress(f.right, labels))
    if isinstance(f, Implies):
        return implies_(_progress(f.left, labels), _progress(f.right, labels))
    if isinstance(f, Next):
        return f.sub
    if isinstance(f, Eventually):
        return or_(_progress(f.sub, labels), f)
    if isinstance(f, Always):
        return and_(_progress(f.sub, labels), f)
    if isinstance(f, Until):
        return or_(_progress(f.right, labels), and_(_progress(f.left, labels), f))
    raise TypeError(f"not a formula node: {f!r}")


@lru_cache(maxsize=200_000)
def final_eval(f: TLFormula) -> bool:
    """Truth of the residual obligation on the empty continuation."""
    if isinstance(f, TrueF):
        return True
    if isinstance(f, (FalseF, Atom, Next, Eventually, Until)):
        return False
    if isinstance(f, Always):
        return True
    if isinstance(f, Not):
        return not final_eval(f.sub)
    if isinstance(f, And):
        return final_eval(f.left) and final_eval(f.right)
    if isinstance(f, Or):
        return final_eval(f.left) or final_eval(f.right)
    if isinstance(f, Implies):
        return (not final_eval(f.left)) or final_eval(f.right)
    raise TypeError(f"not a formula node: {f!r}")


def evaluate_trace(f: TLFormula, trace: list[frozenset[int]] | tuple[frozenset[int], ...]) -> bool:
    """Direct finite-trace semantics, independent of progression.

    Temporal operators quantify over the real positions of the trace; Next may
    step onto the empty suffix just past the end, where atoms and eventualities
    are false and Always holds.
    """
    return _holds(f, tuple(trace), 0)


def _holds(f: TLFormula, trace: tuple[frozenset[int], ...], i: int) -> bool:
    k = len(trace)
    if isinstance(f, TrueF):
        return True
    if isinstance(f, FalseF):
        return False
    if isinstance(f, Atom):
        return i < k and f.pid in trace[i]
    if isinstance(f, Not):
        return not _holds(f.sub, trace, i)
    if isinstance(f, And):
        return _holds(f.left, trace, i) and _holds(f.right, trace, i)
    if isinstance(f, Or):
        return _holds(f.left, trace, i) or _holds(f.right, trace, i)
    if isinstance(f, Implies):
        return (not _holds(f.left, trace, i)) or _holds(f.right, trace, i)
    if isinstance(f, Next):
        return i < k and _holds(f.sub, trace, i + 1)
    if isinstance(f, Eventually):
        return any(_holds(f.sub, trace, j) for j in range(i, k))
    if isinstance(f, Always):
        return all(_holds(f.sub, trace, j) for j in range(i, k))
    if isinstance(f, Until):
        return any(
            _holds(f.right, trace, j) and all(_holds(f.left, trace, m) for m in range(i, j))
            for j in range(i, k)
        )
    raise TypeError(f"not a formula node: {f!r}")


# --- concrete grammar ------------------------------------------------------
#
# formula  := implies
# implies  := or ("->" implies)?                    (right associative)
# or       := and ("|" and)*                        (left associative)
# and      := until ("&" until)*                    (left associative)
# until    := unary ("U" until)?                    (right associative)
# unary    := ("!" | "X" | "F" | "G") unary | primary
# primary  := "true" | "false" | QUOTED | p<digits> | "(" formula ")"
#
# QUOTED is a double-quoted proposition phrase; p<digits> is an index alias.

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<quoted>"[^"]*")
  | (?P<arrow>->)
  | (?P<punct>[!&|()UXFG])
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)

_UNARY_PUNCT = {"!", "X", "F", "G"}


class _Token:
    __slots__ = ("kind", "value", "offset")

    def __init__(self, kind: str, value: str, offset: int):
        self.kind = kind
        self.value = value
        self.offset = offset


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup == "ws":
            pos = m.end()
            continue
        value = m.group()
        if m.lastgroup == "quoted":
            tokens.append(_Token("quoted", value[1:-1], pos))
        elif m.lastgroup == "arrow":
            tokens.append(_Token("->", value, pos))
        elif m.lastgroup == "punct":
            tokens.append(_Token(value, value, pos))
        else:  # word
            if value in ("true", "false"):
                tokens.append(_Token(value, value, pos))
            elif re.fullmatch(r"p\d+", value):
                tokens.append(_Token("pidx", value, pos))
            else:
                raise ParseError(f"unknown token {value!r}", pos)
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], props: PropositionSet):
        self.tokens = tokens
        self.props = props
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def take(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self) -> TLFormula:
        f = self.implies()
        tok = self.peek()
        if tok.kind != "eof":
            if tok.kind == ")":
                raise ParseError("unbalanced parentheses", tok.offset)
            raise ParseError(f"unexpected trailing input {tok.value!r}", tok.offset)
        return f

    def implies(self) -> TLFormula:
        left = self.or_()
        if self.peek().kind == "->":
            self.take()
            return Implies(left, self.implies())
        return left

    def or_(self) -> TLFormula:
        f = self.and_()
        while self.peek().kind == "|":
            self.take()
            f = Or(f, self.and_())
        return f

    def and_(self) -> TLFormula:
        f = self.until()
        while self.peek().kind == "&":
            self.take()
            f = And(f, self.until())
        return f

    def until(self) -> TLFormula:
        left = self.unary()
        if self.peek().kind == "U":
            self.take()
            return Until(left, self.until())
        return left

    def unary(self) -> TLFormula:
        tok = self.peek()
        if tok.kind in _UNARY_PUNCT:
            self.take()
            sub = self.unary()
            if tok.kind == "!":
                return Not(sub)
            if tok.kind == "X":
                return Next(sub)
            if tok.kind == "F":
                return Eventually(sub)
            return Always(sub)
        return self.primary()

    def _atom_by_index(self, alias: str) -> TLFormula:
        pid = int(alias[1:])
        if pid >= len(self.props):
            raise UnknownPropositionError(
                f"proposition index {alias} out of range (set has {len(self.props)})"
            )
        return Atom(pid)

    def primary(self) -> TLFormula:
        tok = self.take()
        if tok.kind == "true":
            return TRUE
        if tok.kind == "false":
            return FALSE
        if tok.kind == "quoted":
            # A quoted p<i> counts as an index alias unless a proposition is
            # literally named that way.
            try:
                return Atom(self.props.id_for(tok.value))
            except UnknownPropositionError:
                if re.fullmatch(r"p\d+", tok.value.strip()):
                    return self._atom_by_index(tok.value.strip())
                raise
        if tok.kind == "pidx":
            return self._atom_by_index(tok.value)
        if tok.kind == "(":
            f = self.implies()
            closing = self.peek()
            if closing.kind != ")":
                raise ParseError("unbalanced parentheses", closing.offset)
            self.take()
            return f
        if tok.kind == "eof":
            raise ParseError("unexpected end of input", tok.offset)
        raise ParseError(f"unexpected token {tok.value!r}", tok.offset)


def parse_tl(text: str, props: PropositionSet) -> TLFormula:
    """Parse formula text against a proposition set.

    Atoms are quoted proposition phrases or ``p<i>`` index aliases; operators
    are ``! & | -> X F G U`` with precedence unary > U > & > | > ->.
    """
    return _Parser(_tokenize(text), props).parse()


_PRECEDENCE = {
    Implies: 1,
    Or: 2,
    And: 3,
    Until: 4,
}
_UNARY_LEVEL = 5


def _prec(f: TLFormula) -> int:
    return _PRECEDENCE.get(type(f), _UNARY_LEVEL)


def render(f: TLFormula, props: PropositionSet) -> str:
    """Formula text that parses back to a structurally equal tree."""
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Atom):
        if f.pid >= len(props):
            raise UnknownPropositionError(f"dangling atom id {f.pid}")
        return f'"{props[f.pid].text}"'
    if isinstance(f, (Not, Next, Eventually, Always)):
        op = {Not: "!", Next: "X", Eventually: "F", Always: "G"}[type(f)]
        sub = render(f.sub, props)
        if _prec(f.sub) < _UNARY_LEVEL:
            sub = f"({sub})"
        return f"{op} {sub}" if op != "!" else f"!{sub}"
    op, level = {And: ("&", 3), Or: ("|", 2), Implies: ("->", 1), Until: ("U", 4)}[type(f)]
    left = render(f.left, props)
    right = render(f.right, props)
    # And/Or associate left, Implies/Until right; parenthesize the other side.
    if isinstance(f, (And, Or)):
        if _prec(f.left) < level:
            left = f"({left})"
        if _prec(f.right) <= level:
            right = f"({right})"
    else:
        if _prec(f.left) <= level:
            left = f"({left})"
        if _prec(f.right) < level:
            right = f"({right})"
    return f"{left} {op} {right}"

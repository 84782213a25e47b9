import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlvr.logic import (
    FALSE,
    TRUE,
    Always,
    And,
    Atom,
    Eventually,
    FormulaError,
    Implies,
    Next,
    Not,
    Or,
    ParseError,
    Proposition,
    PropositionSet,
    TLFormula,
    UnknownPropositionError,
    Until,
    atoms_of,
    evaluate_trace,
    final_eval,
    parse_tl,
    progress,
    render,
)

from genutil import all_traces, progression_verdict, random_formula

RUNNING_EXAMPLE = PropositionSet.from_texts([
    "woman pours hot water over granola",
    "woman spoons yogurt into bowl",
    "woman places topping",
])


def test_proposition_set_rejects_sparse_ids():
    with pytest.raises(ValueError):
        PropositionSet([Proposition(0, "a"), Proposition(2, "b")])


def test_proposition_set_rejects_duplicate_texts_after_normalization():
    with pytest.raises(ValueError):
        PropositionSet.from_texts(["man walks", "  Man   Walks "])


def test_parse_running_example_spec():
    text = (
        '("woman pours hot water over granola" & "woman spoons yogurt into bowl")'
        ' & F "woman places topping"'
    )
    assert parse_tl(text, RUNNING_EXAMPLE) == And(
        And(Atom(0), Atom(1)), Eventually(Atom(2))
    )


def test_parse_single_atom():
    assert parse_tl('"p0"', RUNNING_EXAMPLE) == Atom(0)


def test_parse_parenthesization_is_a_noop():
    assert parse_tl('"p0" U "p1"', RUNNING_EXAMPLE) == parse_tl(
        '("p0") U ("p1")', RUNNING_EXAMPLE
    )


def test_parse_precedence():
    props = PropositionSet.from_texts(["a", "b", "c"])
    # unary > U > & > | > ->
    assert parse_tl('!"a" U "b"', props) == Until(Not(Atom(0)), Atom(1))
    assert parse_tl('"a" U "b" & "c"', props) == And(Until(Atom(0), Atom(1)), Atom(2))
    assert parse_tl('"a" & "b" | "c"', props) == Or(And(Atom(0), Atom(1)), Atom(2))
    assert parse_tl('"a" | "b" -> "c"', props) == Implies(Or(Atom(0), Atom(1)), Atom(2))
    assert parse_tl('"a" -> "b" -> "c"', props) == Implies(
        Atom(0), Implies(Atom(1), Atom(2))
    )
    assert parse_tl('"a" U "b" U "c"', props) == Until(Atom(0), Until(Atom(1), Atom(2)))
    assert parse_tl("X F G !true", props) == Next(Eventually(Always(Not(TRUE))))


def test_parse_errors_carry_offsets():
    with pytest.raises(ParseError) as exc:
        parse_tl('"p0" @ "p1"', RUNNING_EXAMPLE)
    assert exc.value.offset == 5
    with pytest.raises(ParseError):
        parse_tl('("p0" & "p1"', RUNNING_EXAMPLE)
    with pytest.raises(ParseError):
        parse_tl('"p0")', RUNNING_EXAMPLE)
    with pytest.raises(UnknownPropositionError):
        parse_tl('"man rides horse"', RUNNING_EXAMPLE)
    with pytest.raises(UnknownPropositionError):
        parse_tl("p7", RUNNING_EXAMPLE)


def test_render_atoms_and_eventually():
    assert render(Atom(0), RUNNING_EXAMPLE) == '"woman pours hot water over granola"'
    assert render(Eventually(Atom(2)), RUNNING_EXAMPLE) == 'F "woman places topping"'


def test_render_dangling_atom():
    with pytest.raises(UnknownPropositionError):
        render(Atom(9), RUNNING_EXAMPLE)


def test_roundtrip_500_random_formulas_depth_6():
    props = PropositionSet.from_texts(["a", "b", "c", "d"])
    rng = random.Random(20240601)
    for _ in range(500):
        f = random_formula(rng, len(props), max_depth=6)
        assert parse_tl(render(f, props), props) == f


@st.composite
def formulas(draw, n_props=2, max_depth=4):
    depth = draw(st.integers(0, max_depth))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_formula(random.Random(seed), n_props, depth)


@given(formulas())
@settings(max_examples=200)
def test_roundtrip_property(f):
    props = PropositionSet.from_texts(["a", "b"])
    assert parse_tl(render(f, props), props) == f


def test_progress_examples():
    assert progress(Eventually(Atom(0)), {0}) == TRUE
    assert progress(Eventually(Atom(0)), set()) == Eventually(Atom(0))
    u = Until(Atom(0), Atom(1))
    assert progress(u, {0}) == u
    assert progress(u, {1}) == TRUE


def test_progress_until_agrees_with_trace_oracle():
    u = Until(Atom(0), Atom(1))
    for trace in all_traces(2, 4):
        assert progression_verdict(u, trace) == evaluate_trace(u, trace)


def test_final_eval_examples():
    assert final_eval(Always(Atom(0))) is True
    assert final_eval(Eventually(Atom(0))) is False
    assert final_eval(Not(Next(Atom(0)))) is True


@given(formulas())
@settings(max_examples=300)
def test_progression_soundness_property(f):
    rng = random.Random(hash(f) & 0xFFFF)
    for _ in range(8):
        length = rng.randrange(0, 5)
        trace = tuple(
            frozenset(p for p in range(2) if rng.random() < 0.5) for _ in range(length)
        )
        assert progression_verdict(f, trace) == evaluate_trace(f, trace)


def _no_banned_shapes(f: TLFormula) -> bool:
    if isinstance(f, And) and (TRUE in (f.left, f.right)):
        return False
    if isinstance(f, Or) and (FALSE in (f.left, f.right)):
        return False
    if isinstance(f, Not) and isinstance(f.sub, Not):
        return False
    if isinstance(f, (Not, Next, Eventually, Always)):
        return _no_banned_shapes(f.sub)
    if isinstance(f, (And, Or, Implies, Until)):
        return _no_banned_shapes(f.left) and _no_banned_shapes(f.right)
    return True


@given(formulas(max_depth=5))
@settings(max_examples=300)
def test_progress_output_is_simplified(f):
    for labels in ({0}, {1}, {0, 1}, set()):
        assert _no_banned_shapes(progress(f, labels))


@given(formulas(max_depth=3))
@settings(max_examples=200)
def test_negation_duality(f):
    for trace in all_traces(2, 2):
        assert evaluate_trace(Not(f), trace) == (not evaluate_trace(f, trace))


def test_atoms_of():
    f = And(Atom(0), Until(Atom(2), Not(Atom(1))))
    assert atoms_of(f) == frozenset({0, 1, 2})
    assert atoms_of(TRUE) == frozenset()

import pytest
from hypothesis import given, strategies as st

from draftrl.cod import (EMPTY_ANSWER, TOO_MANY_WORDS, Draft, EmptyDraft, EmptyInput,
                         MalformedLine, MissingAnswerLine, ReasoningStep, diversity,
                         parse_draft, parse_drafts, render_draft, validate_draft, validate_step)


def draft_with_lengths(lengths, answer="1"):
    return Draft.from_texts([" ".join(["w"] * n) for n in lengths], answer)


@pytest.mark.parametrize("text, ok", [
    ("add four to seven", True),
    ("add the operand four to seven", False),
    ("", False),
    ("   ", False),
    ("one", True),
    ("a b c d e", True),
    ("x=3, y=4; done", True),  # punctuation sticks to its word
])
def test_validate_step(text, ok):
    assert validate_step(ReasoningStep(text)) is ok


def test_word_count_uses_unicode_whitespace():
    step = ReasoningStep("a　b c")
    assert step.word_count == 3


def test_step_with_newline_is_invalid():
    assert not validate_step("two\nlines")


def test_validate_draft_cases():
    rep = validate_draft(draft_with_lengths([3, 5, 2]))
    assert rep.valid and rep.violations == []

    rep = validate_draft(draft_with_lengths([3, 6]))
    assert not rep.valid
    assert rep.violations == [(1, TOO_MANY_WORDS)]

    rep = validate_draft(draft_with_lengths([2], answer=""))
    assert not rep.valid
    assert rep.violations == [("answer", EMPTY_ANSWER)]


def test_parse_draft_examples():
    d = parse_draft("step: halve the input\nstep: add one back\n#### 42")
    assert d.step_texts == ["halve the input", "add one back"]
    assert d.answer == "42"
    with pytest.raises(MissingAnswerLine):
        parse_draft("step: only a step")
    with pytest.raises(EmptyDraft):
        parse_draft("#### 7")


def test_parse_draft_malformed_line_number():
    with pytest.raises(MalformedLine) as exc:
        parse_draft("step: fine\nnonsense here\n#### 3")
    assert exc.value.lineno == 2


def test_parse_drafts_multiple_blocks():
    text = "step: a b\n#### 1\n\nstep: c d e\nstep: f\n#### 2\n"
    drafts = parse_drafts(text)
    assert [d.answer for d in drafts] == ["1", "2"]
    assert len(drafts[1].steps) == 2
    with pytest.raises(MalformedLine) as exc:
        parse_drafts("step: a\n#### 1\nstep: b\nbad\n#### 2")
    assert exc.value.lineno == 4


def test_parse_trims_whitespace():
    d = parse_draft("  step:   add   four  \n####   9  ")
    assert d.step_texts == ["add four"]
    assert d.answer == "9"


words = st.text(alphabet="abcxyz0123456789-+=", min_size=1, max_size=6)
steps = st.lists(words, min_size=1, max_size=5).map(" ".join)


@given(st.lists(steps, min_size=1, max_size=6), words)
def test_render_parse_round_trip(step_texts, answer):
    d = Draft.from_texts(step_texts, answer)
    back = parse_draft(render_draft(d))
    assert back.step_texts == step_texts
    assert back.answer == answer
    assert render_draft(back) == render_draft(d)


def test_diversity_examples():
    a = Draft.from_texts(["apply add 4 get 7"], "7")
    assert diversity([a]) == 0.0
    assert diversity([a, a, a]) == 0.0
    b = Draft.from_texts(["zz yy"], "qq")
    assert diversity([a, b]) == 1.0
    with pytest.raises(EmptyInput):
        diversity([])


def test_diversity_partial_overlap():
    # tokens {a, b, 1} vs {a, c, 1}: jaccard 2/4
    a = Draft.from_texts(["a b"], "1")
    b = Draft.from_texts(["a c"], "1")
    assert diversity([a, b]) == pytest.approx(0.5)


drafts_st = st.lists(
    st.builds(lambda s, a: Draft.from_texts(s, a), st.lists(steps, min_size=1, max_size=3), words),
    min_size=1, max_size=6,
)


@given(drafts_st, st.randoms())
def test_diversity_permutation_invariant_and_bounded(drafts, rnd):
    shuffled = list(drafts)
    rnd.shuffle(shuffled)
    d = diversity(drafts)
    assert 0.0 <= d <= 1.0
    assert d == pytest.approx(diversity(shuffled), abs=1e-12)


@given(drafts_st)
def test_diversity_zero_iff_token_identical(drafts):
    token_sets = {frozenset(" ".join(x.step_texts + [x.answer]).lower().split()) for x in drafts}
    assert (diversity(drafts) == 0.0) == (len(token_sets) == 1)

"""Chain-of-Draft data model, wire format, step validation and diversity.

A draft is a short list of reasoning steps followed by an answer. Each step
may hold at most ``MAX_STEP_WORDS`` whitespace-delimited words and at least
one. The text wire format is line oriented::

    step: apply add 4 get 7
    step: apply mul 2 get 14
    #### 14
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

MAX_STEP_WORDS = 5
STEP_PREFIX = "step:"
ANSWER_PREFIX = "####"

TOO_MANY_WORDS = "TooManyWords"
NO_WORDS = "NoWords"
EMPTY_ANSWER = "EmptyAnswer"
NEWLINE_IN_STEP = "NewlineInStep"


class DraftFormatError(ValueError):
    """Base class for wire-format parse failures."""


class MissingAnswerLine(DraftFormatError):
    pass


class EmptyDraft(DraftFormatError):
    pass


class MalformedLine(DraftFormatError):
    def __init__(self, lineno: int, line: str):
        super().__init__(f"line {lineno}: malformed draft line {line!r}")
        self.lineno = lineno
        self.line = line


class EmptyInput(ValueError):
    pass


def word_count(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class ReasoningStep:
    text: str

    @property
    def word_count(self) -> int:
        return word_count(self.text)


@dataclass(frozen=True)
class GenerationMeta:
    temperature: float
    strategy_id: int
    history_len: int
    seed: int


@dataclass(frozen=True)
class Draft:
    steps: tuple[ReasoningStep, ...]
    answer: str
    agent_id: int = 0
    draft_index: int = 0
    meta: GenerationMeta | None = None

    @classmethod
    def from_texts(cls, steps: Sequence[str], answer: str, **kwargs) -> "Draft":
        return cls(tuple(ReasoningStep(s) for s in steps), answer, **kwargs)

    @property
    def step_texts(self) -> list[str]:
        return [s.text for s in self.steps]

    @property
    def ref(self) -> tuple[int, int]:
        return (self.agent_id, self.draft_index)

    def render(self) -> str:
        return render_draft(self)

    def to_record(self) -> dict:
        """JSON-ready dict used in event logs."""
        rec = {
            "agent_id": self.agent_id,
            "draft_index": self.draft_index,
            "steps": self.step_texts,
            "answer": self.answer,
            "meta": None,
        }
        if self.meta is not None:
            rec["meta"] = {
                "temperature": self.meta.temperature,
                "strategy_id": self.meta.strategy_id,
                "history_len": self.meta.history_len,
                "seed": self.meta.seed,
            }
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Draft":
        meta = rec.get("meta")
        return cls.from_texts(
            rec["steps"],
            rec["answer"],
            agent_id=rec.get("agent_id", 0),
            draft_index=rec.get("draft_index", 0),
            meta=GenerationMeta(**meta) if meta else None,
        )


@dataclass
class ValidationReport:
    violations: list[tuple[int | str, str]] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations


def validate_step(step: ReasoningStep | str) -> bool:
    text = step.text if isinstance(step, ReasoningStep) else step
    if "\n" in text or "\r" in text:
        return False
    return 1 <= word_count(text) <= MAX_STEP_WORDS


def _step_reason(text: str) -> str | None:
    if "\n" in text or "\r" in text:
        return NEWLINE_IN_STEP
    n = word_count(text)
    if n == 0:
        return NO_WORDS
    if n > MAX_STEP_WORDS:
        return TOO_MANY_WORDS
    return None


def validate_draft(draft: Draft) -> ValidationReport:
    report = ValidationReport()
    for i, step in enumerate(draft.steps):
        reason = _step_reason(step.text)
        if reason is not None:
            report.violations.append((i, reason))
    if not draft.steps:
        report.violations.append(("steps", NO_WORDS))
    if not draft.answer.strip():
        report.violations.append(("answer", EMPTY_ANSWER))
    return report


def render_draft(draft: Draft) -> str:
    lines = [f"{STEP_PREFIX} {s.text.strip()}" for s in draft.steps]
    lines.append(f"{ANSWER_PREFIX} {draft.answer.strip()}")
    return "\n".join(lines)


def parse_draft(text: str) -> Draft:
    """Parse one draft in the line format; blank lines are ignored.

    Raises MissingAnswerLine, EmptyDraft or MalformedLine.
    """
    steps: list[str] = []
    answer = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if answer is not None:
            raise MalformedLine(lineno, raw)
        if line.startswith(ANSWER_PREFIX):
            answer = line[len(ANSWER_PREFIX):].strip()
        elif line.startswith(STEP_PREFIX):
            steps.append(" ".join(line[len(STEP_PREFIX):].split()))
        else:
            raise MalformedLine(lineno, raw)
    if answer is None:
        raise MissingAnswerLine("no '#### <answer>' line")
    if not steps:
        raise EmptyDraft("draft has no step lines")
    return Draft.from_texts(steps, answer)


def parse_drafts(text: str) -> list[Draft]:
    """Split a multi-draft document on answer lines and parse each block.

    Raises MalformedLine with the line number in the whole document.
    """
    blocks: list[tuple[int, list[str]]] = []
    start, cur = 1, []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not cur and not raw.strip():
            start = lineno + 1
            continue
        cur.append(raw)
        if raw.strip().startswith(ANSWER_PREFIX):
            blocks.append((start, cur))
            start, cur = lineno + 1, []
    if any(line.strip() for line in cur):
        blocks.append((start, cur))
    if not blocks:
        raise EmptyDraft("no drafts found")
    drafts = []
    for offset, lines in blocks:
        try:
            drafts.append(parse_draft("\n".join(lines)))
        except MalformedLine as exc:
            raise MalformedLine(exc.lineno + offset - 1, exc.line) from None
    return drafts


def _tokens(draft: Draft) -> frozenset[str]:
    words = []
    for s in draft.steps:
        words.extend(s.text.lower().split())
    words.extend(draft.answer.lower().split())
    return frozenset(words)


def jaccard_distance(a: frozenset[str], b: frozenset[str]) -> float:
    union = a | b
    if not union:
        return 0.0
    return 1.0 - len(a & b) / len(union)


def pairwise_distances(drafts: Sequence[Draft]) -> list[list[float]]:
    toks = [_tokens(d) for d in drafts]
    n = len(toks)
    out = [[0.0] * n for _ in range(n)]
    for i, j in itertools.combinations(range(n), 2):
        out[i][j] = out[j][i] = jaccard_distance(toks[i], toks[j])
    return out


def diversity(drafts: Sequence[Draft]) -> float:
    """Mean pairwise token-level Jaccard distance; 0.0 for one draft."""
    if not drafts:
        raise EmptyInput("diversity of an empty draft list")
    n = len(drafts)
    if n == 1:
        return 0.0
    dist = pairwise_distances(drafts)
    total = sum(dist[i][j] for i, j in itertools.combinations(range(n), 2))
    return total / (n * (n - 1) / 2)

"""Chain-arithmetic task environment.

A task starts from an integer and applies a short chain of ``add``/``sub``/
``mul`` operations with small operands. The prompt is a canonical rendering
such as ``"start 3; add 4; mul 2; ?"`` and the ground truth is the final
value. Drafts are scored by :func:`task_reward`.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from .cod import Draft

OPS = ("add", "sub", "mul")
MAX_DEPTH = 8
INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1

_INT_RE = re.compile(r"[-+]?\d+")


class BadDepth(ValueError):
    pass


class UnparseableAnswer(ValueError):
    pass


def apply_op(op: str, value: int, operand: int) -> int:
    if op == "add":
        return value + operand
    if op == "sub":
        return value - operand
    if op == "mul":
        return value * operand
    raise ValueError(f"unknown operator {op!r}")


@dataclass(frozen=True)
class ChainSpec:
    start: int
    ops: tuple[tuple[str, int], ...]

    @property
    def depth(self) -> int:
        return len(self.ops)

    def intermediates(self) -> list[int]:
        """Value after each operation; the last entry is the answer."""
        out, v = [], self.start
        for op, operand in self.ops:
            v = apply_op(op, v, operand)
            if not INT64_MIN <= v <= INT64_MAX:
                raise OverflowError("chain value leaves the int64 range")
            out.append(v)
        return out


@dataclass(frozen=True)
class Query:
    id: int
    prompt: str
    payload: ChainSpec
    truth: int

    @property
    def depth(self) -> int:
        return self.payload.depth

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "payload": {
                "start": self.payload.start,
                "ops": [[op, n] for op, n in self.payload.ops],
            },
            "truth": self.truth,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Query":
        spec = ChainSpec(
            int(rec["payload"]["start"]),
            tuple((str(op), int(n)) for op, n in rec["payload"]["ops"]),
        )
        return make_query(int(rec["id"]), spec)


@dataclass(frozen=True)
class TaskReward:
    value: float
    answer_correct: bool
    intermediate_fraction: float


def render_prompt(payload: ChainSpec) -> str:
    parts = [f"start {payload.start}"]
    parts += [f"{op} {n}" for op, n in payload.ops]
    parts.append("?")
    return "; ".join(parts)


def parse_prompt(prompt: str) -> ChainSpec:
    """Inverse of :func:`render_prompt`."""
    parts = [p.strip() for p in prompt.split(";")]
    if len(parts) < 2 or parts[-1] != "?" or not parts[0].startswith("start "):
        raise ValueError(f"not a chain prompt: {prompt!r}")
    start = int(parts[0].split()[1])
    ops = []
    for p in parts[1:-1]:
        op, n = p.split()
        if op not in OPS:
            raise ValueError(f"unknown operator {op!r}")
        ops.append((op, int(n)))
    return ChainSpec(start, tuple(ops))


def make_query(qid: int, spec: ChainSpec) -> Query:
    return Query(qid, render_prompt(spec), spec, spec.intermediates()[-1])


def generate_task(seed: int, depth: int, operand_range: tuple[int, int] = (1, 9)) -> Query:
    """Deterministic task from ``(seed, depth, operand_range)``; the seed doubles as id."""
    if not 1 <= depth <= MAX_DEPTH:
        raise BadDepth(f"depth must be in [1, {MAX_DEPTH}], got {depth}")
    lo, hi = operand_range
    rng = np.random.default_rng([seed & (2**64 - 1), depth, lo, hi])
    start = int(rng.integers(lo, hi + 1))
    ops = tuple(
        (OPS[int(rng.integers(len(OPS)))], int(rng.integers(lo, hi + 1)))
        for _ in range(depth)
    )
    return make_query(seed, ChainSpec(start, ops))


def generate_suite(n: int, depth: int = 3, seed: int = 42,
                   operand_range: tuple[int, int] = (1, 9)) -> list[Query]:
    """``n`` tasks whose per-task seeds are drawn from ``seed``; ids are 0..n-1."""
    rng = np.random.default_rng(seed)
    task_seeds = rng.integers(0, 2**62, size=n)
    out = []
    for i, s in enumerate(task_seeds):
        q = generate_task(int(s), depth, operand_range)
        out.append(Query(i, q.prompt, q.payload, q.truth))
    return out


def write_suite(queries: Iterable[Query], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for q in queries:
            f.write(json.dumps(q.to_record(), sort_keys=True) + "\n")


def read_suite(path: str | Path) -> list[Query]:
    with open(path, encoding="utf-8") as f:
        return [Query.from_record(json.loads(line)) for line in f if line.strip()]


def load_dev500() -> list[Query]:
    """The bundled 500-task suite (depth 3, seed 42)."""
    ref = resources.files("draftrl") / "data" / "dev500.jsonl"
    with resources.as_file(ref) as p:
        return read_suite(p)


def step_value(text: str) -> int | None:
    """Declared intermediate value of a step: its last integer literal."""
    found = _INT_RE.findall(text)
    return int(found[-1]) if found else None


def parse_answer(answer: str) -> int:
    s = answer.strip()
    if not re.fullmatch(r"[-+]?\d+", s):
        raise UnparseableAnswer(answer)
    return int(s)


def task_reward(draft: Draft, query: Query, answer_weight: float = 0.7,
                intermediate_weight: float = 0.3) -> TaskReward:
    try:
        correct = parse_answer(draft.answer) == query.truth
    except UnparseableAnswer:
        correct = False
    truth_chain = query.payload.intermediates()
    declared = [step_value(s.text) for s in draft.steps]
    n = min(len(declared), len(truth_chain))
    hits = sum(1 for d, t in zip(declared[:n], truth_chain[:n]) if d == t)
    frac = hits / n if n else 0.0
    value = answer_weight * float(correct) + intermediate_weight * frac
    return TaskReward(value, correct, frac)


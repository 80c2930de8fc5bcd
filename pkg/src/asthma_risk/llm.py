"""Text protocol for language-model risk prediction.

Each record becomes a run of ``NAME is VALUE,`` fragments separated by a
space. Fine-tuning lines put the outcome fragment last after a per-record
shuffle of the features; inference prompts end with ``OUTCOME is`` so the
model completes the value. No model runs here; a provider object supplies
completions.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .data_io import Cohort
from .schema import MISSING, FeatureKind, FeatureSchema, PatientRecord

OUTCOME_NAMES = {"ed": "ED_visit", "admission": "Hospital_admission"}
MISSING_TEXT = "missing"
UNPARSEABLE_SCORE = 0.5
_TRUE_TOKENS = {"1", "true", "yes"}
_FALSE_TOKENS = {"0", "false", "no"}


class ProviderError(RuntimeError):
    pass


@dataclass(frozen=True)
class SerializedRecord:
    text: str
    column_order: tuple[str, ...]


def format_value(kind: FeatureKind, value) -> str:
    if value is MISSING:
        return MISSING_TEXT
    if kind is FeatureKind.BOOLEAN:
        return "True" if value else "False"
    if kind is FeatureKind.CATEGORICAL:
        return str(value)
    return format(float(value), ".6g")


def _fragment(name: str, text: str) -> str:
    return f"{name} is {text},"


def serialize_record(schema: FeatureSchema, record: PatientRecord, order: Sequence[str]) -> SerializedRecord:
    frags = []
    for name in order:
        if name not in schema:
            raise KeyError(f"feature {name!r} not in schema")
        spec = schema.spec(name)
        frags.append(_fragment(name, format_value(spec.kind, record.values.get(name, MISSING))))
    return SerializedRecord(" ".join(frags), tuple(order))


def parse_fragments(text: str) -> list[tuple[str, str]]:
    """Split serialized text back into ``(name, value text)`` pairs."""
    text = text.strip()
    if not text:
        return []
    if not text.endswith(","):
        raise ValueError("serialized text must end with a comma")
    out = []
    for frag in text[:-1].split(", "):
        name, sep, value = frag.partition(" is ")
        if not sep:
            raise ValueError(f"malformed fragment {frag!r}")
        out.append((name, value))
    return out


def parse_value(kind: FeatureKind, text: str):
    if text == MISSING_TEXT:
        return MISSING
    if kind is FeatureKind.BOOLEAN:
        return text == "True"
    if kind is FeatureKind.CATEGORICAL:
        return text
    return float(text)


def permute_outcome_last(names: Sequence[str], outcome: str, seed) -> list[str]:
    if outcome in names:
        raise ValueError(f"outcome {outcome!r} is also a feature name")
    rng = np.random.default_rng(seed)
    return [names[i] for i in rng.permutation(len(names))] + [outcome]


def _record_seeds(seed, n: int) -> list[np.random.SeedSequence]:
    """Child seeds derived without mutating ``seed`` (unlike ``spawn``)."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(list(seed) if isinstance(seed, (tuple, list)) else seed)
    return [np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key + (i,)) for i in range(n)]


def corpus_line(schema: FeatureSchema, record: PatientRecord, label: int, outcome: str, seed) -> str:
    order = permute_outcome_last(schema.names, outcome, seed)[:-1]
    body = serialize_record(schema, record, order).text
    tail = _fragment(outcome, str(int(label)))
    return f"{body} {tail}" if body else tail


def export_finetune_corpus(cohort: Cohort, outcome: str, seed, path) -> int:
    """Write one shuffled, outcome-last line per record; returns line count."""
    seeds = _record_seeds(seed, len(cohort))
    lines = [corpus_line(cohort.schema, r, y, outcome, s)
             for r, y, s in zip(cohort.records, cohort.y, seeds)]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return len(lines)


def build_inference_prompt(schema: FeatureSchema, record: PatientRecord, outcome: str, seed) -> str:
    order = permute_outcome_last(schema.names, outcome, seed)[:-1]
    body = serialize_record(schema, record, order).text
    return f"{body} {outcome} is" if body else f"{outcome} is"


def parse_outcome(completion: str) -> int | None:
    tokens = completion.strip().split()
    if not tokens:
        return None
    tok = tokens[0].strip(",.;:!\"'").lower()
    if tok in _TRUE_TOKENS:
        return 1
    if tok in _FALSE_TOKENS:
        return 0
    return None


class CompletionProvider(Protocol):
    def complete(self, prompt: str, seed) -> str: ...


@dataclass(frozen=True)
class MockProvider:
    """Answers ``1`` when ``key`` occurs in the prompt, else ``0``.

    Stateless and deterministic; stands in for a locally hosted model.
    """

    key: str
    positive: str = " 1,"
    negative: str = " 0,"

    def complete(self, prompt: str, seed) -> str:
        return self.positive if self.key in prompt else self.negative


def predict_averaged(
    schema: FeatureSchema,
    record: PatientRecord,
    provider: CompletionProvider,
    outcome: str,
    repeats: int = 5,
    seed=0,
) -> float:
    """Mean parsed prediction over ``repeats`` differently shuffled prompts;
    unparseable completions count as 0.5."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    seeds = _record_seeds(seed, repeats)
    votes = []
    for i, s in enumerate(seeds):
        prompt = build_inference_prompt(schema, record, outcome, s)
        try:
            completion = provider.complete(prompt, int(s.generate_state(1)[0]))
        except Exception as exc:
            raise ProviderError(f"provider failed on repeat {i}: {exc}") from exc
        v = parse_outcome(completion)
        votes.append(UNPARSEABLE_SCORE if v is None else float(v))
    return float(np.mean(votes))


def predict_cohort(
    cohort: Cohort,
    provider: CompletionProvider,
    outcome: str,
    repeats: int = 5,
    seed=0,
    workers: int = 1,
) -> np.ndarray:
    seeds = _record_seeds(seed, len(cohort))

    def one(i):
        return predict_averaged(cohort.schema, cohort.records[i], provider, outcome, repeats, seeds[i])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(one, range(len(cohort)))))
    return np.array([one(i) for i in range(len(cohort))])

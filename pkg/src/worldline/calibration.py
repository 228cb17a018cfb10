"""Dual calibration: retrieval-grounded fact scoring with bounded revision, and
pairwise logic checking with bounded regeneration of the later event."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .core import (
    AblationMode,
    CalibStatus,
    DeductionConfig,
    EventNode,
    derive_seed,
)
from .errors import InvalidArgumentError, NotFoundError, ProviderError
from .knowledge import KnowledgeIndex, retrieve_fact
from .providers import TemplateSet, default_templates

REVISION_TEMPERATURE = 0.3
REGEN_TEMPERATURE = 0.7

VALID = "valid"
INVALID = "invalid"


class TraceKind(str, Enum):
    FACT = "fact"
    LOGIC = "logic"


class TraceOutcome(str, Enum):
    ACCEPTED = "accepted"
    REVISED = "revised"
    REGENERATED = "regenerated"
    UNRESOLVED = "unresolved"


@dataclass
class CalibrationAttempt:
    candidate_text: str
    score_or_verdict: object
    fact_ref: Optional[str] = None
    rationale: str = ""

    def to_dict(self) -> dict:
        return {
            "candidate_text": self.candidate_text,
            "score_or_verdict": self.score_or_verdict,
            "fact_ref": self.fact_ref,
            "rationale": self.rationale,
        }


@dataclass
class CalibrationTrace:
    """Audit record of one calibration pass over one node."""

    node_id: str
    kind: TraceKind
    attempts: list[CalibrationAttempt] = field(default_factory=list)
    outcome: TraceOutcome = TraceOutcome.UNRESOLVED

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "kind": self.kind.value,
            "attempts": [a.to_dict() for a in self.attempts],
            "outcome": self.outcome.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationTrace":
        return cls(
            node_id=data["node_id"],
            kind=TraceKind(data["kind"]),
            attempts=[
                CalibrationAttempt(
                    candidate_text=a["candidate_text"],
                    score_or_verdict=a["score_or_verdict"],
                    fact_ref=a.get("fact_ref"),
                    rationale=a.get("rationale", ""),
                )
                for a in data.get("attempts", [])
            ],
            outcome=TraceOutcome(data["outcome"]),
        )


def calibrate_event_fact(
    event: EventNode,
    index: KnowledgeIndex,
    judge,
    generator,
    config: DeductionConfig,
    templates: Optional[TemplateSet] = None,
) -> tuple[EventNode, CalibrationTrace]:
    """Score one event against its closest knowledge passage; revise up to the budget.

    Returns the updated node (never mutates the input) and the trace. When no
    passage overlaps the event at all, the event is flagged unresolved with an
    empty fact reference instead of being grounded in an irrelevant passage.
    On exhaustion the best-scoring candidate seen is kept.
    """
    if not event.text or not event.text.strip():
        raise InvalidArgumentError("event text must be non-empty")
    templates = templates or default_templates()
    trace = CalibrationTrace(node_id=event.id, kind=TraceKind.FACT)

    try:
        fact = retrieve_fact(index, event.text)
    except NotFoundError:
        node = event.with_status(CalibStatus.FACT_UNRESOLVED, fact_ref=None)
        return node, trace

    text = event.text
    score = judge.judge_fact(text, fact.text)
    trace.attempts.append(CalibrationAttempt(text, score, fact_ref=fact.id))
    if score >= config.delta_fact:
        trace.outcome = TraceOutcome.ACCEPTED
        node = event.with_status(CalibStatus.FACT_OK, fact_score=score, fact_ref=fact.id)
        return node, trace

    for attempt in range(config.max_fact_revisions):
        prompt = templates.render("revise_fact", event=text, fact=fact.text)
        text = generator.generate(
            prompt,
            temperature=REVISION_TEMPERATURE,
            seed=derive_seed(config.rng_seed, event.id, "fact", attempt),
        )
        score = judge.judge_fact(text, fact.text)
        trace.attempts.append(CalibrationAttempt(text, score, fact_ref=fact.id))
        if score >= config.delta_fact:
            trace.outcome = TraceOutcome.REVISED
            node = event.with_status(
                CalibStatus.FACT_REVISED, text=text, fact_score=score, fact_ref=fact.id
            )
            return node, trace

    best = max(trace.attempts, key=lambda a: a.score_or_verdict)
    trace.outcome = TraceOutcome.UNRESOLVED
    node = event.with_status(
        CalibStatus.FACT_UNRESOLVED,
        text=best.candidate_text,
        fact_score=best.score_or_verdict,
        fact_ref=fact.id,
    )
    return node, trace


def check_pair_logic(prev: EventNode, nxt: EventNode, judge) -> tuple[str, str]:
    """Binary validity verdict plus a short rationale for one adjacent pair."""
    if not prev.text or not nxt.text:
        raise InvalidArgumentError("both event texts must be non-empty")
    if nxt.stage != prev.stage + 1:
        raise InvalidArgumentError(
            f"pair stages must be adjacent, got {prev.stage} -> {nxt.stage}"
        )
    verdict, rationale = judge.judge_logic(prev.text, nxt.text)
    return verdict, rationale


def calibrate_pair_logic(
    prev: EventNode,
    nxt: EventNode,
    generator,
    judge,
    index: Optional[KnowledgeIndex],
    config: DeductionConfig,
    templates: Optional[TemplateSet] = None,
) -> tuple[EventNode, CalibrationTrace]:
    """Check one adjacent pair; regenerate the later event up to the budget.

    The earlier event is committed history and never rewritten. On exhaustion
    the last regenerated candidate is kept, flagged unresolved.
    """
    templates = templates or default_templates()
    trace = CalibrationTrace(node_id=nxt.id, kind=TraceKind.LOGIC)

    verdict, rationale = check_pair_logic(prev, nxt, judge)
    trace.attempts.append(CalibrationAttempt(nxt.text, verdict, rationale=rationale))
    if verdict == VALID:
        trace.outcome = TraceOutcome.ACCEPTED
        return nxt.with_status(CalibStatus.LOGIC_OK), trace

    facts = ""
    if index is not None:
        try:
            facts = retrieve_fact(index, prev.text).text
        except NotFoundError:
            facts = ""

    text = nxt.text
    for attempt in range(config.max_logic_regens):
        prompt = templates.render(
            "regen_logic",
            prev=prev.text,
            rationale=rationale,
            facts=facts or "(no domain facts retrieved)",
        )
        text = generator.generate(
            prompt,
            temperature=REGEN_TEMPERATURE,
            seed=derive_seed(config.rng_seed, nxt.id, "logic", attempt),
        )
        verdict, rationale = judge.judge_logic(prev.text, text)
        trace.attempts.append(CalibrationAttempt(text, verdict, rationale=rationale))
        if verdict == VALID:
            trace.outcome = TraceOutcome.REGENERATED
            return nxt.with_status(CalibStatus.LOGIC_REGENERATED, text=text), trace

    trace.outcome = TraceOutcome.UNRESOLVED
    return nxt.with_status(CalibStatus.LOGIC_UNRESOLVED, text=text), trace


def _validate_path(path: Sequence[EventNode]) -> None:
    if not path:
        raise InvalidArgumentError("path must be non-empty")
    if path[0].parent_id is not None:
        raise InvalidArgumentError("path must start at the root")
    for prev, nxt in zip(path, path[1:]):
        if nxt.parent_id != prev.id or nxt.stage != prev.stage + 1:
            raise InvalidArgumentError(f"path link {prev.id} -> {nxt.id} is not parent->child")


def calibrate_world_line(
    path: Sequence[EventNode],
    index: KnowledgeIndex,
    judge,
    generator,
    config: DeductionConfig,
    templates: Optional[TemplateSet] = None,
) -> tuple[list[EventNode], list[CalibrationTrace]]:
    """Calibrate a committed root-to-node path.

    Fact calibration runs over every non-root event first, then logic
    calibration over every adjacent pair in order, so each pair check sees the
    accepted form of its earlier event. The ablation mode can skip either pass.
    Events whose enabled passes all succeeded are promoted to fully_calibrated
    (only the full mode verifies both constraints; the root is promoted
    vacuously, it is the given instance). Provider failures abort with the
    traces collected so far attached to the exception.
    """
    _validate_path(path)
    templates = templates or default_templates()
    mode = config.ablation_mode

    out = list(path)
    traces: list[CalibrationTrace] = []
    fact_outcomes: dict[str, TraceOutcome] = {}
    logic_outcomes: dict[str, TraceOutcome] = {}

    try:
        if mode in (AblationMode.FULL, AblationMode.FACT_ONLY):
            for i in range(1, len(out)):
                node, trace = calibrate_event_fact(out[i], index, judge, generator, config, templates)
                out[i] = node
                traces.append(trace)
                fact_outcomes[node.id] = trace.outcome
        if mode in (AblationMode.FULL, AblationMode.LOGIC_ONLY):
            for i in range(1, len(out)):
                node, trace = calibrate_pair_logic(
                    out[i - 1], out[i], generator, judge, index, config, templates
                )
                out[i] = node
                traces.append(trace)
                logic_outcomes[node.id] = trace.outcome
    except ProviderError as exc:
        exc.partial_traces = traces
        raise

    if mode is AblationMode.FULL:
        for i, node in enumerate(out):
            if i == 0:
                out[i] = node.with_status(CalibStatus.FULLY_CALIBRATED)
                continue
            fact_ok = fact_outcomes.get(node.id) in (TraceOutcome.ACCEPTED, TraceOutcome.REVISED)
            logic_ok = logic_outcomes.get(node.id) in (TraceOutcome.ACCEPTED, TraceOutcome.REGENERATED)
            if fact_ok and logic_ok:
                out[i] = node.with_status(CalibStatus.FULLY_CALIBRATED)
    return out, traces


def path_fact_indicators(path: Sequence[EventNode], delta_fact: float) -> list[int]:
    """Eq-style binary indicators for the judged (non-root) events of a path."""
    return [
        1 if node.fact_score is not None and node.fact_score >= delta_fact else 0
        for node in path[1:]
        if node.fact_score is not None or _was_fact_checked(node)
    ]


def _was_fact_checked(node: EventNode) -> bool:
    fact_statuses = {
        CalibStatus.FACT_OK.value,
        CalibStatus.FACT_REVISED.value,
        CalibStatus.FACT_UNRESOLVED.value,
    }
    return any(status in fact_statuses for status in node.status_history)


def path_logic_indicators(path: Sequence[EventNode], traces: Sequence[CalibrationTrace]) -> list[int]:
    """Binary pair indicators from the most recent logic trace of each path pair."""
    last_outcome: dict[str, TraceOutcome] = {}
    for trace in traces:
        if trace.kind is TraceKind.LOGIC:
            last_outcome[trace.node_id] = trace.outcome
    indicators = []
    for node in path[1:]:
        outcome = last_outcome.get(node.id)
        if outcome is None:
            continue
        indicators.append(1 if outcome in (TraceOutcome.ACCEPTED, TraceOutcome.REGENERATED) else 0)
    return indicators

"""Consistency metrics, the EID benchmark file format, and the benchmark runner."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Protocol, Sequence

from .core import AblationMode, DeductionConfig, WorldLineTree, expand_node
from .errors import (
    FormatError,
    InvalidArgumentError,
    NotFoundError,
    ProviderError,
    RunError,
    ValidationError,
)
from .knowledge import KnowledgeIndex, retrieve_fact
from .providers import TemplateSet, default_templates

EID_FORMAT = "eid-v1"
EID_DEPTH = 3
EID_DEFAULT_NODE_COUNT = 14


def factual_consistency(indicators: Sequence[int]) -> float:
    """Fraction of events judged factually consistent, computed in exact rationals."""
    if len(indicators) == 0:
        raise InvalidArgumentError("indicator list must be non-empty")
    return float(Fraction(sum(indicators), len(indicators)))


def logical_consistency(pair_indicators: Sequence[int]) -> float:
    """Fraction of adjacent pairs judged logically valid (a path of T events yields T-1 pairs)."""
    if len(pair_indicators) == 0:
        raise InvalidArgumentError("pair indicator list must be non-empty")
    return float(Fraction(sum(pair_indicators), len(pair_indicators)))


# -- EID format ---------------------------------------------------------------


@dataclass
class EIDBranchNode:
    id: str
    parent: Optional[str]
    stage: int
    text: str

    def to_dict(self) -> dict:
        return {"id": self.id, "parent": self.parent, "stage": self.stage, "text": self.text}


@dataclass
class EIDLabels:
    most_probable_leaf: str
    per_path: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"most_probable_leaf": self.most_probable_leaf, "per_path": dict(self.per_path)}


@dataclass
class EIDEntry:
    id: str
    domain: str
    initial: str
    branches: list[EIDBranchNode]
    labels: EIDLabels

    def children_of(self, parent: Optional[str]) -> list[EIDBranchNode]:
        return sorted((b for b in self.branches if b.parent == parent), key=lambda b: b.id)

    def leaves(self) -> list[EIDBranchNode]:
        parents = {b.parent for b in self.branches if b.parent is not None}
        return sorted((b for b in self.branches if b.id not in parents), key=lambda b: b.id)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "domain": self.domain,
            "initial": self.initial,
            "branches": [b.to_dict() for b in sorted(self.branches, key=lambda b: (b.stage, b.id))],
            "labels": self.labels.to_dict(),
        }


def validate_eid_entry(entry: EIDEntry, nodes_per_entry: int = EID_DEFAULT_NODE_COUNT) -> None:
    """Structural validation; raises ValidationError naming the entry and the broken rule."""

    def fail(rule: str, message: str):
        raise ValidationError(f"entry {entry.id}: {message}", entry_id=entry.id, rule=rule)

    if not entry.initial or not entry.initial.strip():
        fail("initial", "initial scenario text is empty")
    if len(entry.branches) != nodes_per_entry:
        fail("count", f"expected {nodes_per_entry} branch nodes, found {len(entry.branches)}")

    by_id: dict[str, EIDBranchNode] = {}
    for node in entry.branches:
        if node.id in by_id:
            fail("id", f"duplicate branch node id {node.id}")
        by_id[node.id] = node
    for node in entry.branches:
        if node.stage < 1 or node.stage > EID_DEPTH:
            fail("depth", f"node {node.id} at stage {node.stage}, outside 1..{EID_DEPTH}")
        if node.parent is None:
            if node.stage != 1:
                fail("stage", f"node {node.id} has no parent but stage {node.stage}")
        else:
            parent = by_id.get(node.parent)
            if parent is None:
                fail("parent", f"node {node.id} references unknown parent {node.parent}")
            if node.stage != parent.stage + 1:
                fail("stage", f"node {node.id} stage {node.stage} != parent stage + 1")
        if not node.text:
            fail("text", f"node {node.id} has empty text")

    leaves = {b.id for b in entry.leaves()}
    for leaf_id in leaves:
        if by_id[leaf_id].stage != EID_DEPTH:
            fail("depth", f"leaf {leaf_id} ends at stage {by_id[leaf_id].stage}, expected {EID_DEPTH}")

    labels = entry.labels
    if labels.most_probable_leaf not in leaves:
        fail("label", f"most_probable_leaf {labels.most_probable_leaf} is not a leaf")
    if set(labels.per_path) != leaves:
        missing = leaves - set(labels.per_path)
        extra = set(labels.per_path) - leaves
        fail("label", f"per_path must cover exactly the leaves (missing {sorted(missing)}, extra {sorted(extra)})")
    for leaf_id, annotation in labels.per_path.items():
        probability = annotation.get("probability")
        if not isinstance(probability, (int, float)) or not 0.0 <= probability <= 1.0:
            fail("probability", f"leaf {leaf_id} probability {probability!r} outside [0, 1]")
        severity = annotation.get("loss_severity")
        if not isinstance(severity, int) or isinstance(severity, bool) or not 1 <= severity <= 5:
            fail("severity", f"leaf {leaf_id} loss_severity {severity!r} outside 1..5")


def _entry_from_dict(data: dict) -> EIDEntry:
    branches = [
        EIDBranchNode(id=b["id"], parent=b.get("parent"), stage=b["stage"], text=b["text"])
        for b in data["branches"]
    ]
    labels_data = data["labels"]
    labels = EIDLabels(
        most_probable_leaf=labels_data["most_probable_leaf"],
        per_path={k: dict(v) for k, v in labels_data["per_path"].items()},
    )
    return EIDEntry(
        id=data["id"], domain=data["domain"], initial=data["initial"], branches=branches, labels=labels
    )


def load_eid(path: str | Path, validate: bool = True) -> list[EIDEntry]:
    """Load a JSON Lines EID file; an optional first-line header can override the node count."""
    path = Path(path)
    entries: list[EIDEntry] = []
    nodes_per_entry = EID_DEFAULT_NODE_COUNT
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {line_no}: {exc.msg}") from exc
            if line_no == 1 and "format" in record:
                if record["format"] != EID_FORMAT:
                    raise FormatError(f"{path}: line 1: unsupported format {record['format']!r}")
                if record.get("depth", EID_DEPTH) != EID_DEPTH:
                    raise FormatError(f"{path}: line 1: only depth {EID_DEPTH} is supported")
                nodes_per_entry = record.get("nodes_per_entry", EID_DEFAULT_NODE_COUNT)
                continue
            try:
                entry = _entry_from_dict(record)
            except (KeyError, TypeError) as exc:
                raise FormatError(f"{path}: line {line_no}: malformed entry ({exc})") from exc
            if validate:
                validate_eid_entry(entry, nodes_per_entry)
            entries.append(entry)
    return entries


def serialize_eid(entries: Sequence[EIDEntry], nodes_per_entry: int = EID_DEFAULT_NODE_COUNT) -> str:
    """Canonical byte form: header first, sorted keys, sorted branches, one entry per line."""
    header = {"depth": EID_DEPTH, "format": EID_FORMAT, "nodes_per_entry": nodes_per_entry}
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False)]
    for entry in entries:
        lines.append(json.dumps(entry.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False))
    return "\n".join(lines) + "\n"


def save_eid(entries: Sequence[EIDEntry], path: str | Path,
             nodes_per_entry: int = EID_DEFAULT_NODE_COUNT) -> None:
    Path(path).write_text(serialize_eid(entries, nodes_per_entry), encoding="utf-8")


# -- benchmark runner ----------------------------------------------------------


class DeductionBackend(Protocol):
    """Predict-and-deduce surface the benchmark drives."""

    def deduce(self, initial: str, steps: int) -> list[str]:
        """Produce one event text per step, continuing from the initial instance."""

    def score_candidates(self, context: Sequence[str], candidates: Sequence[tuple[str, str]]) -> list[float]:
        """Score each (id, text) candidate as the continuation of ``context``."""


@dataclass
class EntryResult:
    entry_id: str
    fc: float
    lc: float
    predicted_leaf: str
    label_leaf: str
    correct: bool

    def to_dict(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "fc": self.fc,
            "lc": self.lc,
            "predicted_leaf": self.predicted_leaf,
            "label_leaf": self.label_leaf,
            "correct": self.correct,
        }


@dataclass
class EvaluationReport:
    fc: float
    lc: float
    accuracy: float
    per_entry: list[EntryResult] = field(default_factory=list)
    provider_call_count: int = 0
    skipped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "fc": self.fc,
            "lc": self.lc,
            "accuracy": self.accuracy,
            "per_entry": [r.to_dict() for r in self.per_entry],
            "provider_call_count": self.provider_call_count,
            "skipped": list(self.skipped),
        }


def predict_leaf(entry: EIDEntry, backend: DeductionBackend) -> str:
    """Stagewise argmax over the labeled candidate branches; ties pick the smallest id."""
    context = [entry.initial]
    parent: Optional[str] = None
    choice: Optional[EIDBranchNode] = None
    for _stage in range(EID_DEPTH):
        candidates = entry.children_of(parent)
        if not candidates:
            break
        scores = backend.score_candidates(context, [(c.id, c.text) for c in candidates])
        best_i = 0
        for i in range(1, len(candidates)):
            if scores[i] > scores[best_i]:
                best_i = i
        choice = candidates[best_i]
        context.append(choice.text)
        parent = choice.id
    if choice is None:
        raise InvalidArgumentError(f"entry {entry.id} has no stage-1 candidates")
    return choice.id


def run_benchmark(
    entries: Sequence[EIDEntry],
    system: DeductionBackend,
    judge,
    config: DeductionConfig,
    index: Optional[KnowledgeIndex] = None,
) -> EvaluationReport:
    """Score a deduction backend over EID entries.

    Per entry the backend deduces a three-step world line from the initial
    instance, the judge scores every produced event and every adjacent pair, and
    the backend's stagewise choice over the labeled branches is compared with the
    most-probable-leaf label. FC/LC are micro-averaged over all pooled
    indicators; accuracy is the mean of per-entry correctness. Provider failures
    skip the entry (recorded in the report); if everything is skipped the run
    itself fails.
    """
    if not entries:
        raise InvalidArgumentError("benchmark needs at least one entry")

    calls_before = len(judge.records) if hasattr(judge, "records") else 0
    per_entry: list[EntryResult] = []
    all_fact: list[int] = []
    all_logic: list[int] = []
    skipped: list[str] = []

    for entry in entries:
        try:
            events = system.deduce(entry.initial, steps=EID_DEPTH)
            fact_indicators = []
            for text in events:
                fact_text = _fact_context(index, text, entry.initial)
                score = judge.judge_fact(text, fact_text)
                fact_indicators.append(1 if score >= config.delta_fact else 0)
            sequence = [entry.initial] + list(events)
            logic_indicators = []
            for prev, nxt in zip(sequence, sequence[1:]):
                verdict, _ = judge.judge_logic(prev, nxt)
                logic_indicators.append(1 if verdict == "valid" else 0)
            predicted = predict_leaf(entry, system)
            per_entry.append(
                EntryResult(
                    entry_id=entry.id,
                    fc=factual_consistency(fact_indicators),
                    lc=logical_consistency(logic_indicators),
                    predicted_leaf=predicted,
                    label_leaf=entry.labels.most_probable_leaf,
                    correct=predicted == entry.labels.most_probable_leaf,
                )
            )
            all_fact.extend(fact_indicators)
            all_logic.extend(logic_indicators)
        except ProviderError:
            skipped.append(entry.id)

    if not per_entry:
        raise RunError(f"all {len(entries)} entries failed with provider errors")

    calls_after = len(judge.records) if hasattr(judge, "records") else 0
    return EvaluationReport(
        fc=factual_consistency(all_fact),
        lc=logical_consistency(all_logic),
        accuracy=float(Fraction(sum(1 for r in per_entry if r.correct), len(per_entry))),
        per_entry=per_entry,
        provider_call_count=calls_after - calls_before,
        skipped=skipped,
    )


def _fact_context(index: Optional[KnowledgeIndex], event_text: str, fallback: str) -> str:
    if index is not None:
        try:
            return retrieve_fact(index, event_text).text
        except NotFoundError:
            pass
    return fallback


# -- concrete backends -----------------------------------------------------------


class WldsBackend:
    """Full pipeline backend: branch expansion plus dual calibration, auto-selecting
    the candidate with the highest fact score at every stage."""

    def __init__(self, provider, config: DeductionConfig, index: Optional[KnowledgeIndex] = None,
                 templates: Optional[TemplateSet] = None):
        self.provider = provider
        self.config = config
        self.index = index
        self.templates = templates or default_templates()

    def deduce(self, initial: str, steps: int) -> list[str]:
        tree = WorldLineTree.create("bench", initial)
        config = self.config
        node_id = tree.root_id
        produced: list[str] = []
        for _ in range(steps):
            children = expand_node(tree, node_id, config, self.provider, self.index, self.templates)
            best = children[0]
            if self.index is not None and config.ablation_mode in (AblationMode.FULL, AblationMode.FACT_ONLY):
                from .calibration import calibrate_event_fact

                scored = []
                for child in children:
                    node, _trace = calibrate_event_fact(
                        child, self.index, self.provider, self.provider, config, self.templates
                    )
                    tree.update_node(node)
                    scored.append(node)
                best = max(scored, key=lambda n: (n.fact_score or 0.0, n.id))
            tree.selected_path.append(best.id)
            produced.append(tree.nodes[best.id].text)
            node_id = best.id
        return produced

    def score_candidates(self, context, candidates):
        anchor = context[-1]
        scores = []
        for _cid, text in candidates:
            fact_text = _fact_context(self.index, text, anchor)
            scores.append(self.provider.judge_fact(text, fact_text))
        return scores


class RawBackend:
    """Baseline backend: plain single-branch generation, no calibration."""

    def __init__(self, provider, config: DeductionConfig, templates: Optional[TemplateSet] = None):
        self.provider = provider
        self.config = config
        self.templates = templates or default_templates()

    def deduce(self, initial: str, steps: int) -> list[str]:
        from .core import derive_seed

        context = [initial]
        for step in range(steps):
            prompt = self.templates.render(
                "expand",
                context="\n".join(f"Stage {i}: {t}" for i, t in enumerate(context)),
                facts="(no domain facts retrieved)",
                stage=step + 1,
            )
            text = self.provider.generate(
                prompt, temperature=1.0, seed=derive_seed(self.config.rng_seed, "raw", step)
            )
            context.append(text)
        return context[1:]

    def score_candidates(self, context, candidates):
        anchor = context[-1]
        return [self.provider.judge_fact(text, anchor) for _cid, text in candidates]

"""Accident dataset and domain knowledge base: lexical retrieval plus cross-domain instance transformation."""

from __future__ import annotations

import json
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .core import derive_seed
from .errors import FormatError, InvalidArgumentError, NotFoundError

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop empty tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class KnowledgePassage:
    id: str
    domain: str
    text: str
    source: str = ""

    def to_dict(self) -> dict:
        return {"id": self.id, "domain": self.domain, "text": self.text, "source": self.source}


@dataclass(frozen=True)
class AccidentRecord:
    """One record of the cross-domain accident dataset; same shape as a passage plus severity."""

    id: str
    domain: str
    text: str
    source: str = ""
    severity: str = ""


@dataclass
class EmergencyInstance:
    """A generated target-domain emergency description, with the records it was conditioned on."""

    id: str
    domain: str
    text: str
    provenance: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"id": self.id, "domain": self.domain, "text": self.text, "provenance": list(self.provenance)}


@dataclass
class KnowledgeIndex:
    passages: list[KnowledgePassage]
    doc_freq: dict[str, int]
    term_counts: list[dict[str, int]]
    token_totals: list[int]
    by_id: dict[str, int]

    def __len__(self) -> int:
        return len(self.passages)


def build_index(passages: Sequence[KnowledgePassage]) -> KnowledgeIndex:
    if not passages:
        raise InvalidArgumentError("cannot index an empty corpus")
    seen: set[str] = set()
    for p in passages:
        if p.id in seen:
            raise InvalidArgumentError(f"duplicate passage id {p.id}")
        if not p.text:
            raise InvalidArgumentError(f"passage {p.id} has empty text")
        seen.add(p.id)

    term_counts = [dict(Counter(tokenize(p.text))) for p in passages]
    doc_freq: Counter = Counter()
    for counts in term_counts:
        doc_freq.update(counts.keys())
    return KnowledgeIndex(
        passages=list(passages),
        doc_freq=dict(doc_freq),
        term_counts=term_counts,
        token_totals=[sum(c.values()) for c in term_counts],
        by_id={p.id: i for i, p in enumerate(passages)},
    )


def relevance_score(index: KnowledgeIndex, query_terms: Sequence[str], position: int) -> float:
    """Sum of term-count / document-frequency over the query terms, length-normalized.

    The inverse document frequency is the literal 1/df so scores never depend on
    corpus size; adding unrelated passages cannot reshuffle an existing ranking.
    Terms are visited in sorted order so a brute-force recount reproduces the
    exact same float.
    """
    total = index.token_totals[position]
    if total == 0:
        return 0.0
    counts = index.term_counts[position]
    score = 0.0
    for term in query_terms:
        c = counts.get(term, 0)
        if c:
            score += c * (1.0 / index.doc_freq[term])
    return score / math.sqrt(total)


def retrieve_fact(
    index: KnowledgeIndex, query: str, domain_filter: Optional[str] = None
) -> KnowledgePassage:
    """Top-1 passage for ``query``; ties broken by smallest passage id.

    Raises NotFoundError when the domain filter matches nothing or when no
    candidate shares a single token with the query (calibration then marks the
    event unresolved rather than grounding it in an irrelevant fact).
    """
    if not query or not query.strip():
        raise InvalidArgumentError("query must be non-empty")
    candidates = [
        i for i, p in enumerate(index.passages) if domain_filter is None or p.domain == domain_filter
    ]
    if not candidates:
        raise NotFoundError(f"no passage matches domain filter {domain_filter!r}")

    query_terms = sorted(set(tokenize(query)))
    best_position: Optional[int] = None
    best_score = 0.0
    for i in candidates:
        score = relevance_score(index, query_terms, i)
        if score <= 0.0:
            continue
        passage_id = index.passages[i].id
        if best_position is None or score > best_score or (
            score == best_score and passage_id < index.passages[best_position].id
        ):
            best_position = i
            best_score = score
    if best_position is None:
        raise NotFoundError("no passage shares a token with the query")
    return index.passages[best_position]


def read_passages(path: str | Path) -> list[KnowledgePassage]:
    """Load a JSON Lines corpus: one {id, domain, text, source} object per line."""
    passages = []
    for line_no, record in _iter_jsonl(path):
        try:
            passages.append(
                KnowledgePassage(
                    id=record["id"],
                    domain=record.get("domain", ""),
                    text=record["text"],
                    source=record.get("source", ""),
                )
            )
        except KeyError as exc:
            raise FormatError(f"{path}: line {line_no} missing field {exc}") from exc
    return passages


def read_accidents(path: str | Path) -> list[AccidentRecord]:
    """Same ingestion path as passages, with the optional severity field kept."""
    records = []
    for line_no, record in _iter_jsonl(path):
        try:
            records.append(
                AccidentRecord(
                    id=record["id"],
                    domain=record.get("domain", ""),
                    text=record["text"],
                    source=record.get("source", ""),
                    severity=record.get("severity", ""),
                )
            )
        except KeyError as exc:
            raise FormatError(f"{path}: line {line_no} missing field {exc}") from exc
    return records


def _iter_jsonl(path: str | Path):
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {line_no} is not valid JSON: {exc.msg}") from exc


def save_index(index: KnowledgeIndex, out_dir: str | Path) -> Path:
    """Persist the corpus; statistics stay derived, so loading rebuilds and re-checks them."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = out_dir / "passages.jsonl"
    with corpus.open("w", encoding="utf-8") as handle:
        for p in index.passages:
            handle.write(json.dumps(p.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    stats = {
        "passage_count": len(index.passages),
        "vocabulary": len(index.doc_freq),
        "tokens": sum(index.token_totals),
    }
    (out_dir / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return corpus


def load_index(index_dir: str | Path) -> KnowledgeIndex:
    return build_index(read_passages(Path(index_dir) / "passages.jsonl"))


EXEMPLARS_PER_PROMPT = 3


def transform_instances(
    d_acc: Sequence[AccidentRecord],
    index: Optional[KnowledgeIndex],
    target_domain: str,
    prompt_template,
    generator,
    n: int,
    seed: int = 0,
    temperature: float = 1.0,
) -> list[EmergencyInstance]:
    """Generate ``n`` draft emergency instances for ``target_domain``.

    Each draft conditions the generator on a few accident-record exemplars
    (sampled with the given seed), the closest knowledge-base passage, and the
    prompt template. Provenance records exactly the exemplar ids used.
    """
    if not d_acc:
        raise InvalidArgumentError("accident dataset must be non-empty")
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")

    rng = random.Random(seed)
    instances = []
    for i in range(n):
        exemplars = rng.sample(list(d_acc), min(EXEMPLARS_PER_PROMPT, len(d_acc)))
        kb_text = ""
        if index is not None:
            combined = " ".join(e.text for e in exemplars)
            for domain_filter in (target_domain, None):
                try:
                    kb_text = retrieve_fact(index, combined, domain_filter=domain_filter).text
                    break
                except NotFoundError:
                    continue
        prompt = prompt_template.render(
            "transform",
            domain=target_domain,
            exemplars="\n".join(f"- {e.text}" for e in exemplars),
            facts=kb_text or "(no domain facts retrieved)",
        )
        text = generator.generate(prompt, temperature=temperature, seed=derive_seed(seed, "transform", i))
        instances.append(
            EmergencyInstance(
                id=f"trans-{i:04d}",
                domain=target_domain,
                text=text,
                provenance=[e.id for e in exemplars],
            )
        )
    return instances

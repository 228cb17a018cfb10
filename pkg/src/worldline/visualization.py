"""Keyframe binding via embedding alignment with a generation fallback, plus
knowledge-graph export of a calibrated world line."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .core import DeductionConfig, EventNode
from .errors import FormatError, InvalidArgumentError, ProviderError, StorageError
from .providers import TemplateSet, default_templates

logger = logging.getLogger(__name__)

GRAPH_CATEGORIES = ("object", "role", "device", "event", "phenomenon", "state")
GRAPH_RELATIONS = ("logical", "causal")


@dataclass
class KeyframeEntry:
    id: str
    caption: str
    image_path: str
    embedding: Optional[list[float]] = None

    def ensure_embedding(self, embedder) -> list[float]:
        if self.embedding is None:
            self.embedding = embedder.embed(self.caption)
        return self.embedding

    def to_dict(self) -> dict:
        return {"id": self.id, "caption": self.caption, "image_path": self.image_path}


class KeyframeLibrary:
    """Append-only image library; a session overlay keeps generated keyframes
    separate from the shared base entries."""

    def __init__(self, entries: Optional[list[KeyframeEntry]] = None,
                 base: Optional["KeyframeLibrary"] = None):
        self.base = base
        self.entries: list[KeyframeEntry] = list(entries or [])

    @classmethod
    def load(cls, manifest_path: str | Path) -> "KeyframeLibrary":
        manifest_path = Path(manifest_path)
        entries = []
        with manifest_path.open("r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{manifest_path}: line {line_no}: {exc.msg}") from exc
                image_path = Path(record["image_path"])
                if not image_path.is_absolute():
                    image_path = manifest_path.parent / image_path
                if not image_path.exists():
                    raise StorageError(f"{manifest_path}: line {line_no}: missing image {image_path}")
                entries.append(
                    KeyframeEntry(id=record["id"], caption=record["caption"], image_path=str(image_path))
                )
        return cls(entries)

    def all_entries(self) -> list[KeyframeEntry]:
        combined = self.base.all_entries() if self.base else []
        return combined + self.entries

    def append(self, entry: KeyframeEntry) -> None:
        self.entries.append(entry)

    def find(self, entry_id: str) -> Optional[KeyframeEntry]:
        for entry in self.all_entries():
            if entry.id == entry_id:
                return entry
        return None

    def __len__(self) -> int:
        return len(self.all_entries())


@dataclass
class VisualizedWorldLine:
    session_id: str
    pairs: list[tuple[str, Optional[str]]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "pairs": [[n, k] for n, k in self.pairs]}

    @classmethod
    def from_dict(cls, data: dict) -> "VisualizedWorldLine":
        return cls(session_id=data["session_id"], pairs=[(n, k) for n, k in data["pairs"]])


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    if list(a) == list(b):
        return 1.0
    dot = sum(x * y for x, y in zip(a, b))
    na = sum(x * x for x in a) ** 0.5
    nb = sum(y * y for y in b) ** 0.5
    if na == 0 or nb == 0:
        return 0.0
    return dot / (na * nb)


def alignment_score(event_text: str, entry: KeyframeEntry, embedder) -> float:
    """Cosine similarity of event and caption embeddings mapped affinely onto [0, 1].

    Identical embeddings score exactly 1.0, orthogonal ones 0.5.
    """
    event_vec = embedder.embed(event_text)
    entry_vec = entry.ensure_embedding(embedder)
    return min(1.0, max(0.0, (1.0 + cosine(event_vec, entry_vec)) / 2.0))


def select_keyframe(
    event: EventNode,
    library: KeyframeLibrary,
    image_gen,
    embedder,
    delta_align: float,
    media_dir: Optional[str | Path] = None,
) -> Optional[str]:
    """Best-aligned keyframe id for the event, or None when nothing clears the gate.

    When the whole library scores below the threshold and a generator is
    available, one candidate image is generated from the event text, persisted
    into the library overlay, and considered alongside the rest. An entry below
    ``delta_align`` is never returned.
    """
    entries = library.all_entries()
    if not entries and image_gen is None:
        return None

    event_vec = embedder.embed(event.text)

    def score(entry: KeyframeEntry) -> float:
        entry_vec = entry.ensure_embedding(embedder)
        return min(1.0, max(0.0, (1.0 + cosine(event_vec, entry_vec)) / 2.0))

    best: Optional[KeyframeEntry] = None
    best_score = 0.0
    for entry in entries:
        s = score(entry)
        if best is None or s > best_score or (s == best_score and entry.id < best.id):
            best = entry
            best_score = s

    if best is not None and best_score >= delta_align:
        return best.id

    if image_gen is not None:
        if media_dir is None:
            raise InvalidArgumentError("media_dir required when image generation is enabled")
        name = f"kf-{sum(1 for e in library.entries if e.id.startswith('kf-')) + 1:04d}"
        path, caption = image_gen.generate_image(event.text, media_dir, name_hint=name)
        generated = KeyframeEntry(id=name, caption=caption, image_path=str(path))
        library.append(generated)
        s = score(generated)
        # re-take the argmax over the extended set
        if best is None or s > best_score or (s == best_score and generated.id < best.id):
            best, best_score = generated, s
        if best_score >= delta_align:
            return best.id

    return None


def visualize_world_line(
    path: Sequence[EventNode],
    library: KeyframeLibrary,
    image_gen,
    embedder,
    config: DeductionConfig,
    media_dir: Optional[str | Path] = None,
    session_id: str = "",
) -> VisualizedWorldLine:
    """Bind a keyframe (or None) to every event of the path, root included."""
    if not path:
        raise InvalidArgumentError("path must be non-empty")
    pairs = []
    for node in path:
        keyframe = select_keyframe(node, library, image_gen, embedder, config.delta_align, media_dir)
        pairs.append((node.id, keyframe))
    return VisualizedWorldLine(session_id=session_id, pairs=pairs)


@dataclass
class KnowledgeGraph:
    nodes: list[dict] = field(default_factory=list)
    edges: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"nodes": list(self.nodes), "edges": list(self.edges)}


def _extract_json_block(reply: str) -> dict:
    text = reply.strip()
    text = re.sub(r"^```(?:json)?\s*|\s*```$", "", text)
    start, end = text.find("{"), text.rfind("}")
    if start == -1 or end <= start:
        raise ValueError("no JSON object in extractor reply")
    return json.loads(text[start : end + 1])


def export_knowledge_graph(
    path: Sequence[EventNode],
    extractor,
    templates: Optional[TemplateSet] = None,
) -> KnowledgeGraph:
    """Ask the extractor for typed entities and relations over the path texts.

    Elements with unknown categories, unknown relations, or dangling endpoints
    are dropped with a warning; nothing is silently invented in their place.
    """
    if not path:
        raise InvalidArgumentError("path must be non-empty")
    templates = templates or default_templates()
    events = "\n".join(f"Stage {node.stage}: {node.text}" for node in path)
    prompt = templates.render("graph_extract", events=events)

    payload = None
    for attempt in range(2):
        reply = extractor.generate(prompt, temperature=0.0, seed=attempt)
        try:
            payload = _extract_json_block(reply)
            break
        except (ValueError, json.JSONDecodeError):
            payload = None
    if payload is None:
        raise ProviderError("knowledge-graph extractor reply was not parseable JSON", kind="parse")

    graph = KnowledgeGraph()
    seen_ids: set[str] = set()
    for node in payload.get("nodes", []):
        node_id, label = str(node.get("id", "")), str(node.get("label", ""))
        category = str(node.get("category", ""))
        if not node_id or node_id in seen_ids:
            logger.warning("graph node dropped: missing or duplicate id %r", node_id)
            continue
        if category not in GRAPH_CATEGORIES:
            logger.warning("graph node %r dropped: unknown category %r", node_id, category)
            continue
        seen_ids.add(node_id)
        graph.nodes.append({"id": node_id, "label": label, "category": category})
    for edge in payload.get("edges", []):
        src, dst = str(edge.get("from", "")), str(edge.get("to", ""))
        relation = str(edge.get("relation", ""))
        if src not in seen_ids or dst not in seen_ids:
            logger.warning("graph edge %r->%r dropped: dangling endpoint", src, dst)
            continue
        if relation not in GRAPH_RELATIONS:
            logger.warning("graph edge %r->%r dropped: unknown relation %r", src, dst, relation)
            continue
        graph.edges.append({"from": src, "to": dst, "relation": relation})
    return graph


_DOT_COLORS = {
    "object": "lightblue",
    "role": "palegreen",
    "device": "khaki",
    "event": "salmon",
    "phenomenon": "plum",
    "state": "lightgrey",
}


def to_dot(graph: KnowledgeGraph) -> str:
    """DOT rendering with category-colored nodes, for standard graph viewers."""
    lines = ["digraph worldline {", "  rankdir=LR;"]
    for node in graph.nodes:
        color = _DOT_COLORS.get(node["category"], "white")
        label = node["label"].replace('"', "'")
        lines.append(
            f'  "{node["id"]}" [label="{label}\\n({node["category"]})" style=filled fillcolor={color}];'
        )
    for edge in graph.edges:
        style = "solid" if edge["relation"] == "causal" else "dashed"
        lines.append(f'  "{edge["from"]}" -> "{edge["to"]}" [label="{edge["relation"]}" style={style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"

"""World-line tree data model and the sampling math every other module builds on."""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

from .errors import InvalidArgumentError, NotFoundError, StageLimitError


class CalibStatus(str, Enum):
    RAW = "raw"
    FACT_OK = "fact_ok"
    FACT_REVISED = "fact_revised"
    FACT_UNRESOLVED = "fact_unresolved"
    LOGIC_OK = "logic_ok"
    LOGIC_REGENERATED = "logic_regenerated"
    LOGIC_UNRESOLVED = "logic_unresolved"
    FULLY_CALIBRATED = "fully_calibrated"


class AblationMode(str, Enum):
    FULL = "full"
    FACT_ONLY = "fact_only"
    LOGIC_ONLY = "logic_only"
    NONE = "none"


UNRESOLVED_STATUSES = (CalibStatus.FACT_UNRESOLVED, CalibStatus.LOGIC_UNRESOLVED)


@dataclass
class EventNode:
    """One scenario description at one deduction stage.

    Ids are content-free and monotonically assigned per session so a revised
    event keeps its identity. ``status_history`` records every calibration
    status the node has passed through, in order.
    """

    id: str
    parent_id: Optional[str]
    stage: int
    text: str
    temperature: Optional[float] = None
    calib_status: CalibStatus = CalibStatus.RAW
    fact_score: Optional[float] = None
    fact_ref: Optional[str] = None
    keyframe: Optional[str] = None
    status_history: list[str] = field(default_factory=list)

    def with_status(self, status: CalibStatus, **changes) -> "EventNode":
        """Copy of this node with a new status appended to its history."""
        history = list(self.status_history) + [status.value]
        return replace(self, calib_status=status, status_history=history, **changes)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parent_id": self.parent_id,
            "stage": self.stage,
            "text": self.text,
            "temperature": self.temperature,
            "calib_status": self.calib_status.value,
            "fact_score": self.fact_score,
            "fact_ref": self.fact_ref,
            "keyframe": self.keyframe,
            "status_history": list(self.status_history),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EventNode":
        return cls(
            id=data["id"],
            parent_id=data.get("parent_id"),
            stage=data["stage"],
            text=data["text"],
            temperature=data.get("temperature"),
            calib_status=CalibStatus(data.get("calib_status", "raw")),
            fact_score=data.get("fact_score"),
            fact_ref=data.get("fact_ref"),
            keyframe=data.get("keyframe"),
            status_history=list(data.get("status_history", [])),
        )


@dataclass
class DeductionConfig:
    """All tunables of one deduction session.

    ``temperatures`` must hold exactly ``branch_count`` positive values; branch k
    of every expansion is generated at ``temperatures[k]``.
    """

    branch_count: int = 3
    temperatures: list[float] = field(default_factory=lambda: [0.3, 0.7, 1.2])
    delta_fact: float = 0.8
    delta_align: float = 0.75
    max_fact_revisions: int = 3
    max_logic_regens: int = 3
    max_stage: int = 3
    rng_seed: int = 0
    ablation_mode: AblationMode = AblationMode.FULL
    calibrate_after_selection: bool = False
    auto_finalize: bool = True

    def validate(self) -> None:
        if self.branch_count < 1:
            raise InvalidArgumentError("branch_count must be >= 1")
        if len(self.temperatures) != self.branch_count:
            raise InvalidArgumentError(
                f"temperatures must have exactly {self.branch_count} entries, got {len(self.temperatures)}"
            )
        if any(not (t > 0) or not math.isfinite(t) for t in self.temperatures):
            raise InvalidArgumentError("all temperatures must be positive and finite")
        for name in ("delta_fact", "delta_align"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise InvalidArgumentError(f"{name} must lie in [0, 1]")
        for name in ("max_fact_revisions", "max_logic_regens"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be >= 0")
        if self.max_stage < 1:
            raise InvalidArgumentError("max_stage must be >= 1")

    def to_dict(self) -> dict:
        return {
            "branch_count": self.branch_count,
            "temperatures": list(self.temperatures),
            "delta_fact": self.delta_fact,
            "delta_align": self.delta_align,
            "max_fact_revisions": self.max_fact_revisions,
            "max_logic_regens": self.max_logic_regens,
            "max_stage": self.max_stage,
            "rng_seed": self.rng_seed,
            "ablation_mode": self.ablation_mode.value,
            "calibrate_after_selection": self.calibrate_after_selection,
            "auto_finalize": self.auto_finalize,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DeductionConfig":
        config = cls(
            branch_count=data.get("branch_count", 3),
            temperatures=list(data.get("temperatures", [0.3, 0.7, 1.2])),
            delta_fact=data.get("delta_fact", 0.8),
            delta_align=data.get("delta_align", 0.75),
            max_fact_revisions=data.get("max_fact_revisions", 3),
            max_logic_regens=data.get("max_logic_regens", 3),
            max_stage=data.get("max_stage", 3),
            rng_seed=data.get("rng_seed", 0),
            ablation_mode=AblationMode(data.get("ablation_mode", "full")),
            calibrate_after_selection=data.get("calibrate_after_selection", False),
            auto_finalize=data.get("auto_finalize", True),
        )
        config.validate()
        return config


@dataclass
class WorldLineTree:
    """Rooted branching structure of all deduced scenarios for one session.

    ``selected_path`` is the operator's committed world line, root first.
    """

    session_id: str
    nodes: dict[str, EventNode] = field(default_factory=dict)
    root_id: str = ""
    selected_path: list[str] = field(default_factory=list)

    @classmethod
    def create(cls, session_id: str, root_text: str) -> "WorldLineTree":
        if not root_text or not root_text.strip():
            raise InvalidArgumentError("root text must be non-empty")
        tree = cls(session_id=session_id)
        root = EventNode(id=tree.next_id(), parent_id=None, stage=0, text=root_text)
        tree.nodes[root.id] = root
        tree.root_id = root.id
        tree.selected_path = [root.id]
        return tree

    def next_id(self) -> str:
        indices = [int(node_id[1:]) for node_id in self.nodes if node_id[1:].isdigit()]
        return f"n{(max(indices) + 1 if indices else 0):04d}"

    def add_node(self, node: EventNode) -> None:
        if node.id in self.nodes:
            raise InvalidArgumentError(f"duplicate node id {node.id}")
        if node.parent_id is not None and node.parent_id not in self.nodes:
            raise InvalidArgumentError(f"parent {node.parent_id} not in tree")
        self.nodes[node.id] = node

    def update_node(self, node: EventNode) -> None:
        if node.id not in self.nodes:
            raise NotFoundError(f"node {node.id} not in tree")
        self.nodes[node.id] = node

    def children_of(self, node_id: str) -> list[EventNode]:
        return sorted(
            (n for n in self.nodes.values() if n.parent_id == node_id),
            key=lambda n: n.id,
        )

    def endpoint(self) -> EventNode:
        return self.nodes[self.selected_path[-1]]

    def leaves(self) -> list[EventNode]:
        parents = {n.parent_id for n in self.nodes.values() if n.parent_id is not None}
        return sorted((n for n in self.nodes.values() if n.id not in parents), key=lambda n: n.id)

    def to_dict(self, config: Optional[DeductionConfig] = None) -> dict:
        snapshot = {
            "session_id": self.session_id,
            "root_id": self.root_id,
            "nodes": [self.nodes[node_id].to_dict() for node_id in sorted(self.nodes)],
            "selected_path": list(self.selected_path),
        }
        if config is not None:
            snapshot["config"] = config.to_dict()
        return snapshot

    @classmethod
    def from_dict(cls, data: dict) -> "WorldLineTree":
        tree = cls(
            session_id=data["session_id"],
            nodes={n["id"]: EventNode.from_dict(n) for n in data["nodes"]},
            root_id=data["root_id"],
            selected_path=list(data["selected_path"]),
        )
        validate_tree(tree)
        return tree


def validate_tree(tree: WorldLineTree, delta_fact: Optional[float] = None) -> None:
    """Check every structural invariant; raises InvalidArgumentError on violation.

    When ``delta_fact`` is given, also checks that fully calibrated non-root
    nodes either meet the threshold or carry an explicit unresolved flag in
    their history.
    """
    roots = [n for n in tree.nodes.values() if n.parent_id is None]
    if len(roots) != 1:
        raise InvalidArgumentError(f"tree must have exactly one root, found {len(roots)}")
    if roots[0].id != tree.root_id:
        raise InvalidArgumentError("root_id does not match the parentless node")
    if roots[0].stage != 0:
        raise InvalidArgumentError("root stage must be 0")

    for node in tree.nodes.values():
        if node.id != tree.root_id:
            parent = tree.nodes.get(node.parent_id or "")
            if parent is None:
                raise InvalidArgumentError(f"node {node.id} has unresolvable parent {node.parent_id}")
            if node.stage != parent.stage + 1:
                raise InvalidArgumentError(f"node {node.id} stage {node.stage} != parent stage + 1")
        if not node.text:
            raise InvalidArgumentError(f"node {node.id} has empty text")
        if node.fact_score is not None and not (0.0 <= node.fact_score <= 1.0):
            raise InvalidArgumentError(f"node {node.id} fact_score outside [0, 1]")
        if node.temperature is not None and not node.temperature > 0:
            raise InvalidArgumentError(f"node {node.id} temperature must be positive")
        # walk to root to prove acyclicity; bounded by node count
        seen = {node.id}
        cursor = node
        while cursor.parent_id is not None:
            if cursor.parent_id in seen:
                raise InvalidArgumentError(f"cycle detected at node {cursor.id}")
            seen.add(cursor.parent_id)
            cursor = tree.nodes[cursor.parent_id]
        if (
            delta_fact is not None
            and node.id != tree.root_id
            and node.calib_status == CalibStatus.FULLY_CALIBRATED
        ):
            below = node.fact_score is None or node.fact_score < delta_fact
            flagged = CalibStatus.FACT_UNRESOLVED.value in node.status_history
            if below and not flagged:
                raise InvalidArgumentError(
                    f"node {node.id} fully calibrated below delta_fact without unresolved flag"
                )

    if not tree.selected_path or tree.selected_path[0] != tree.root_id:
        raise InvalidArgumentError("selected_path must start at the root")
    for prev_id, next_id in zip(tree.selected_path, tree.selected_path[1:]):
        child = tree.nodes.get(next_id)
        if child is None or child.parent_id != prev_id:
            raise InvalidArgumentError(f"selected_path link {prev_id} -> {next_id} is not parent->child")


def temperature_distribution(logits: Sequence[float], tau: float) -> list[float]:
    """Softmax of ``logits / tau`` with max-subtraction for numerical stability.

    Entries are strictly positive as long as (min - max) / tau stays above the
    float64 exp() underflow knee (about -745); beyond that, far-from-max entries
    round to exactly 0.0 while normalization still holds.
    """
    if len(logits) == 0:
        raise InvalidArgumentError("logits must be non-empty")
    if not (tau > 0) or not math.isfinite(tau):
        raise InvalidArgumentError("tau must be a positive finite real")
    if any(not math.isfinite(z) for z in logits):
        raise InvalidArgumentError("logits must all be finite")
    peak = max(logits)
    exps = [math.exp((z - peak) / tau) for z in logits]
    total = sum(exps)
    return [e / total for e in exps]


def shannon_entropy(dist: Sequence[float]) -> float:
    return -sum(p * math.log(p) for p in dist if p > 0)


def sample_index(dist: Sequence[float], rng: random.Random) -> int:
    """Inverse-CDF draw over ``dist`` in the given ordering; deterministic per rng state."""
    if len(dist) == 0:
        raise InvalidArgumentError("distribution must be non-empty")
    if any(p < 0 or not math.isfinite(p) for p in dist):
        raise InvalidArgumentError("distribution entries must be finite and non-negative")
    if abs(sum(dist) - 1.0) > 1e-6:
        raise InvalidArgumentError(f"distribution sums to {sum(dist)}, expected 1 within 1e-6")
    u = rng.random()
    cumulative = 0.0
    for i, p in enumerate(dist):
        cumulative += p
        if u < cumulative:
            return i
    return len(dist) - 1


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from arbitrary labelled parts; keeps runs reproducible."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def extract_path(tree: WorldLineTree, node_id: str) -> list[EventNode]:
    """Ordered node list from the root down to ``node_id``."""
    if node_id not in tree.nodes:
        raise NotFoundError(f"node {node_id} not in tree")
    path = []
    cursor: Optional[str] = node_id
    while cursor is not None:
        node = tree.nodes[cursor]
        path.append(node)
        cursor = node.parent_id
    path.reverse()
    return path


def path_context_text(path: Sequence[EventNode]) -> str:
    return "\n".join(f"Stage {node.stage}: {node.text}" for node in path)


def expand_node(
    tree: WorldLineTree,
    node_id: str,
    config: DeductionConfig,
    generator,
    kb_context=None,
    templates=None,
) -> list[EventNode]:
    """Append exactly ``branch_count`` children to ``node_id``, one per temperature.

    Child k is generated at ``temperatures[k]`` from the root-to-node context plus
    any domain facts retrieved from ``kb_context`` (a knowledge index or None).
    Results are appended in temperature-index order so runs stay reproducible.
    """
    from .knowledge import retrieve_fact  # late import to avoid a cycle

    if node_id not in tree.nodes:
        raise NotFoundError(f"node {node_id} not in tree")
    node = tree.nodes[node_id]
    if node.stage >= config.max_stage:
        raise StageLimitError(f"node {node_id} already at stage limit {config.max_stage}")

    if templates is None:
        from .providers import default_templates

        templates = default_templates()

    path = extract_path(tree, node_id)
    context = path_context_text(path)
    domain_facts = ""
    if kb_context is not None:
        try:
            domain_facts = retrieve_fact(kb_context, node.text).text
        except NotFoundError:
            domain_facts = ""

    children = []
    for k, tau in enumerate(config.temperatures):
        prompt = templates.render(
            "expand",
            context=context,
            facts=domain_facts or "(no domain facts retrieved)",
            stage=node.stage + 1,
        )
        seed = derive_seed(config.rng_seed, node_id, k)
        text = generator.generate(prompt, temperature=tau, seed=seed)
        child = EventNode(
            id=tree.next_id(),
            parent_id=node_id,
            stage=node.stage + 1,
            text=text,
            temperature=tau,
        )
        tree.add_node(child)
        children.append(child)
    return children

"""Shared builders for scripted mocks, corpora, and EID fixtures."""

from __future__ import annotations

import pytest

from worldline.core import DeductionConfig, EventNode, WorldLineTree
from worldline.evaluation import EIDBranchNode, EIDEntry, EIDLabels
from worldline.knowledge import KnowledgePassage, build_index
from worldline.providers import MockProvider


def gen(text: str) -> dict:
    return {"capability": "generate", "reply": text}


def fact(score: float) -> dict:
    return {"capability": "judge_fact", "reply": f"SCORE: {score:.2f}"}


def logic(valid: bool, rationale: str = "") -> dict:
    verdict = "VALID" if valid else "INVALID"
    return {"capability": "judge_logic", "reply": f"VERDICT: {verdict}\nREASON: {rationale}"}


def scripted(*entries) -> MockProvider:
    return MockProvider(script=list(entries), seed=0)


def count_calls(provider: MockProvider, capability: str) -> int:
    return sum(1 for r in provider.records if r.capability.value == capability)


RAIL_PASSAGES = [
    KnowledgePassage("p1", "urban_rail_transit",
                     "Platform fires are fought with class-rated portable extinguishers by trained staff."),
    KnowledgePassage("p2", "urban_rail_transit",
                     "Heavy smoke triggers the station alarm and the mechanical ventilation system."),
    KnowledgePassage("p3", "urban_rail_transit",
                     "Evacuation routes guide passengers through marked exits to street level."),
    KnowledgePassage("p4", "urban_rail_transit",
                     "Trains are held outside the station while the platform remains hazardous."),
]


@pytest.fixture
def rail_index():
    return build_index(RAIL_PASSAGES)


@pytest.fixture
def config():
    return DeductionConfig(rng_seed=0)


def make_tree(texts: list[str], session_id: str = "t") -> WorldLineTree:
    """Linear chain tree: texts[0] is the root, the rest form the selected path."""
    tree = WorldLineTree.create(session_id, texts[0])
    parent = tree.root_id
    for stage, text in enumerate(texts[1:], 1):
        node = EventNode(id=tree.next_id(), parent_id=parent, stage=stage, text=text, temperature=0.7)
        tree.add_node(node)
        tree.selected_path.append(node.id)
        parent = node.id
    return tree


def make_path(texts: list[str]) -> list[EventNode]:
    tree = make_tree(texts)
    return [tree.nodes[node_id] for node_id in tree.selected_path]


def make_eid_entry(entry_id: str = "e1", domain: str = "urban_rail_transit",
                   most_probable: str | None = None) -> EIDEntry:
    """Canonical 2+4+8 binary entry: 14 non-root nodes over exactly three stages."""
    branches = []
    stage1 = [f"{entry_id}-s1-{i}" for i in range(2)]
    for i, node_id in enumerate(stage1):
        branches.append(EIDBranchNode(node_id, None, 1, f"stage-1 development {i} of {entry_id}"))
    stage2 = []
    for i, parent in enumerate(stage1):
        for j in range(2):
            node_id = f"{entry_id}-s2-{i}{j}"
            stage2.append(node_id)
            branches.append(EIDBranchNode(node_id, parent, 2, f"stage-2 development {i}{j}"))
    leaves = []
    for i, parent in enumerate(stage2):
        for j in range(2):
            node_id = f"{entry_id}-s3-{i}{j}"
            leaves.append(node_id)
            branches.append(EIDBranchNode(node_id, parent, 3, f"stage-3 outcome {i}{j}"))
    labels = EIDLabels(
        most_probable_leaf=most_probable or leaves[0],
        per_path={leaf: {"probability": round(1.0 / (i + 2), 4), "loss_severity": (i % 5) + 1}
                  for i, leaf in enumerate(leaves)},
    )
    return EIDEntry(id=entry_id, domain=domain,
                    initial=f"initial emergency instance of {entry_id}",
                    branches=branches, labels=labels)

#!/usr/bin/env python3
"""Showcase run: one default session diverges into seven world lines.

A full session with three branches per stage over three stages leaves exactly
seven leaves behind (3 + 2 + 2): every leaf is one world line. The script runs
the whole loop offline against the mock provider, then prints each world line
with its model-estimated probability and loss severity, the final-path FC/LC,
and writes the knowledge-graph DOT plus the session snapshot into --out.
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from worldline.core import DeductionConfig
from worldline.knowledge import build_index, read_passages
from worldline.orchestrator import Orchestrator, SessionStore
from worldline.providers import MockProvider


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo-output", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--initial",
        default="A waste bin on the subway platform caught fire, emitting thick smoke.",
    )
    parser.add_argument("--kb", default=str(Path(__file__).resolve().parents[1] / "data/demo_kb.jsonl"))
    args = parser.parse_args()

    out = Path(args.out)
    orchestrator = Orchestrator(
        SessionStore(out / "store"),
        MockProvider(seed=args.seed),
        index=build_index(read_passages(args.kb)),
    )
    session = orchestrator.run_auto(args.initial, DeductionConfig(rng_seed=args.seed),
                                    session_id="seven-line-demo")

    tree = session.tree
    estimates = orchestrator.estimate_world_lines(session.session_id)
    print(f"initial instance: {tree.nodes[tree.root_id].text}\n")
    for line_no, estimate in enumerate(estimates):
        print(f"world line {line_no}  "
              f"(p={estimate['probability']:.2f}, severity={estimate['loss_severity']}, "
              f"{estimate['label']})")
        for node_id in estimate["path"]:
            node = tree.nodes[node_id]
            marker = "*" if node_id in tree.selected_path else " "
            print(f"  {marker} stage {node.stage}: {node.text}")
        print()

    print(f"committed world line: {' -> '.join(tree.selected_path)}")
    print(f"final-path metrics: FC={session.metrics['fc']:.4f} LC={session.metrics['lc']:.4f}")

    graph = orchestrator.knowledge_graph(session.session_id)
    (out / "worldlines.dot").write_text(graph["dot"], encoding="utf-8")
    print(f"knowledge graph: {len(graph['nodes'])} nodes, {len(graph['edges'])} edges "
          f"-> {out / 'worldlines.dot'}")
    print(f"session snapshot -> {orchestrator.store.snapshot_path(session.session_id)}")


if __name__ == "__main__":
    main()

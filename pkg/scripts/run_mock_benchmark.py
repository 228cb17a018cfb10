#!/usr/bin/env python3
"""Offline benchmark run over the committed demo EID file.

Compares the full pipeline backend against the raw single-branch baseline using
the deterministic mock provider, printing FC / LC / accuracy for both.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from worldline.core import DeductionConfig
from worldline.evaluation import RawBackend, WldsBackend, load_eid, run_benchmark
from worldline.knowledge import build_index, read_passages
from worldline.providers import MockProvider

REPO = Path(__file__).resolve().parents[1]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", default=str(REPO / "data/demo_eid.jsonl"))
    parser.add_argument("--kb", default=str(REPO / "data/demo_kb.jsonl"))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    entries = load_eid(args.dataset)
    index = build_index(read_passages(args.kb))
    config = DeductionConfig(rng_seed=args.seed)

    for name in ("wlds", "raw"):
        provider = MockProvider(seed=args.seed)
        if name == "wlds":
            backend = WldsBackend(provider, config, index)
        else:
            backend = RawBackend(provider, config)
        report = run_benchmark(entries, backend, provider, config, index=index)
        print(f"{name:>4}: FC={report.fc:.4f} LC={report.lc:.4f} "
              f"accuracy={report.accuracy:.4f} "
              f"entries={len(report.per_entry)} skipped={len(report.skipped)} "
              f"provider_calls={report.provider_call_count}")


if __name__ == "__main__":
    main()

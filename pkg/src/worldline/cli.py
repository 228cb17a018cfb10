"""Command-line interface: serve, deduce, transform, eval, kb build."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .core import AblationMode, DeductionConfig
from .errors import WorldLineError
from .evaluation import RawBackend, WldsBackend, load_eid, run_benchmark
from .knowledge import build_index, load_index, read_accidents, read_passages, save_index
from .orchestrator import Orchestrator, SessionStore
from .providers import HttpGateway, MockProvider, load_provider_config
from .visualization import KeyframeLibrary


def _build_provider(mock: str | None, config: str | None, seed: int = 0):
    if mock:
        return MockProvider.from_file(mock, seed=seed)
    if config:
        return HttpGateway(load_provider_config(config))
    click.echo("no provider config given; using the offline mock provider", err=True)
    return MockProvider(seed=seed)


def _load_optional_index(kb: str | None):
    if not kb:
        return None
    path = Path(kb)
    if path.is_dir():
        return load_index(path)
    return build_index(read_passages(path))


@click.group()
def main():
    """World-line divergence engine for emergency-scenario deduction."""


@main.group()
def kb():
    """Knowledge-base maintenance."""


@kb.command("build")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True),
              help="JSON Lines corpus, one passage per line")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="index output directory")
def kb_build(input_path: str, out_dir: str):
    """Build and persist a lexical retrieval index."""
    passages = read_passages(input_path)
    index = build_index(passages)
    save_index(index, out_dir)
    click.echo(f"indexed {len(index)} passages ({len(index.doc_freq)} terms) into {out_dir}")


@main.command()
@click.option("--initial", required=True, help="initial scenario text, or a path to a text file")
@click.option("--auto", is_flag=True, help="auto-select the best-scored candidate at every stage")
@click.option("--out", "out_path", type=click.Path(), help="write the final session snapshot here")
@click.option("--mock", type=click.Path(exists=True), help="scripted mock provider file")
@click.option("--config", "config_path", type=click.Path(exists=True), help="provider config JSON")
@click.option("--kb", "kb_path", type=click.Path(exists=True), help="knowledge corpus or index dir")
@click.option("--library", "library_path", type=click.Path(exists=True), help="keyframe manifest")
@click.option("--store", "store_dir", type=click.Path(), default=".worldline-store")
@click.option("--seed", type=int, default=0)
@click.option("--ablation", type=click.Choice([m.value for m in AblationMode]), default="full")
@click.option("--no-image-gen", is_flag=True, help="disable keyframe generation fallback")
def deduce(initial, auto, out_path, mock, config_path, kb_path, library_path, store_dir,
           seed, ablation, no_image_gen):
    """Run one unattended deduction and write the finalized snapshot."""
    if not auto:
        raise click.UsageError("interactive steering lives in `worldline serve`; pass --auto here")
    text = Path(initial).read_text(encoding="utf-8").strip() if Path(initial).is_file() else initial
    provider = _build_provider(mock, config_path, seed)
    library = KeyframeLibrary.load(library_path) if library_path else None
    orchestrator = Orchestrator(
        SessionStore(store_dir),
        provider,
        index=_load_optional_index(kb_path),
        library=library,
        image_generation=not no_image_gen,
    )
    config = DeductionConfig(rng_seed=seed, ablation_mode=AblationMode(ablation))
    session = orchestrator.run_auto(text, config=config)
    snapshot = json.dumps(session.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)
    if out_path:
        Path(out_path).write_text(snapshot + "\n", encoding="utf-8")
        click.echo(f"session {session.session_id} finalized -> {out_path}")
    else:
        click.echo(snapshot)
    metrics = session.metrics or {}
    click.echo(f"FC={metrics.get('fc')} LC={metrics.get('lc')}", err=True)


@main.command()
@click.option("--domain", required=True, help="target domain tag")
@click.option("-n", "count", type=int, default=1, help="number of instances to draft")
@click.option("--accidents", "accidents_path", required=True, type=click.Path(exists=True))
@click.option("--kb", "kb_path", type=click.Path(exists=True))
@click.option("--mock", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", type=click.Path())
def transform(domain, count, accidents_path, kb_path, mock, config_path, seed, out_path):
    """Draft target-domain emergency instances from the cross-domain accident dataset."""
    from .knowledge import transform_instances
    from .providers import default_templates

    provider = _build_provider(mock, config_path, seed)
    instances = transform_instances(
        read_accidents(accidents_path),
        _load_optional_index(kb_path),
        domain,
        default_templates(),
        provider,
        count,
        seed=seed,
    )
    lines = "\n".join(json.dumps(i.to_dict(), ensure_ascii=False, sort_keys=True) for i in instances)
    if out_path:
        Path(out_path).write_text(lines + "\n", encoding="utf-8")
        click.echo(f"wrote {count} instances to {out_path}")
    else:
        click.echo(lines)


@main.command("eval")
@click.option("--dataset", required=True, type=click.Path(exists=True), help="EID JSON Lines file")
@click.option("--backend", type=click.Choice(["wlds", "raw"]), default="wlds")
@click.option("--report", "report_path", type=click.Path(), help="write the full report JSON here")
@click.option("--mock", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--kb", "kb_path", type=click.Path(exists=True))
@click.option("--seed", type=int, default=0)
def eval_command(dataset, backend, report_path, mock, config_path, kb_path, seed):
    """Run the FC/LC/accuracy benchmark over an EID-format dataset."""
    provider = _build_provider(mock, config_path, seed)
    index = _load_optional_index(kb_path)
    config = DeductionConfig(rng_seed=seed)
    entries = load_eid(dataset)
    if backend == "raw":
        system = RawBackend(provider, config)
    else:
        system = WldsBackend(provider, config, index)
    report = run_benchmark(entries, system, provider, config, index=index)
    click.echo(f"entries={len(report.per_entry)} skipped={len(report.skipped)} "
               f"FC={report.fc:.4f} LC={report.lc:.4f} accuracy={report.accuracy:.4f}")
    if report_path:
        Path(report_path).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        click.echo(f"report -> {report_path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), help="provider config JSON")
@click.option("--mock", type=click.Path(exists=True), help="scripted mock provider file")
@click.option("--store", "store_dir", type=click.Path(), default=".worldline-store")
@click.option("--port", type=int, default=8080)
@click.option("--host", default="127.0.0.1")
@click.option("--kb", "kb_path", type=click.Path(exists=True))
@click.option("--accidents", "accidents_path", type=click.Path(exists=True))
@click.option("--library", "library_path", type=click.Path(exists=True))
@click.option("--ui-dir", "ui_dir", type=click.Path(), default=None,
              help="static UI bundle directory (defaults to ./frontend/dist when present)")
@click.option("--no-image-gen", is_flag=True)
@click.option("--seed", type=int, default=0)
def serve(config_path, mock, store_dir, port, host, kb_path, accidents_path, library_path,
          ui_dir, no_image_gen, seed):
    """Serve the HTTP API (and the operator UI when a bundle is available)."""
    import uvicorn

    from .server import build_app

    provider = _build_provider(mock, config_path, seed)
    accidents = read_accidents(accidents_path) if accidents_path else None
    library = KeyframeLibrary.load(library_path) if library_path else None
    orchestrator = Orchestrator(
        SessionStore(store_dir),
        provider,
        index=_load_optional_index(kb_path),
        library=library,
        accidents=accidents,
        image_generation=not no_image_gen,
    )
    if ui_dir is None:
        default_bundle = Path("frontend/dist")
        ui_dir = str(default_bundle) if default_bundle.is_dir() else None
    app = build_app(orchestrator, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def run():
    try:
        main(standalone_mode=True)
    except WorldLineError as exc:
        click.echo(f"error [{exc.code}]: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    run()

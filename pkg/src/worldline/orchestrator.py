"""Session state machine over the deduction workflow, with atomic snapshot persistence.

A full default session (3 branches per stage, 3 stages) diverges into exactly
seven world lines; scripts/seven_line_demo.py packages that showcase.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
import uuid
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from .calibration import (
    CalibrationTrace,
    TraceOutcome,
    calibrate_event_fact,
    calibrate_pair_logic,
    path_fact_indicators,
    path_logic_indicators,
)
from .core import (
    AblationMode,
    CalibStatus,
    DeductionConfig,
    EventNode,
    WorldLineTree,
    derive_seed,
    expand_node,
    extract_path,
    validate_tree,
)
from .errors import (
    BusyError,
    FormatError,
    IllegalStateError,
    InvalidArgumentError,
    NotFoundError,
    ProviderError,
    StageLimitError,
    StorageError,
)
from .evaluation import factual_consistency, logical_consistency
from .knowledge import (
    AccidentRecord,
    EmergencyInstance,
    KnowledgeIndex,
    transform_instances,
)
from .providers import TemplateSet, default_templates
from .visualization import (
    KeyframeEntry,
    KeyframeLibrary,
    VisualizedWorldLine,
    export_knowledge_graph,
    to_dot,
    visualize_world_line,
)


class SessionState(str, Enum):
    CREATED = "created"
    ROOTS_PROPOSED = "roots_proposed"
    EXPANDED = "expanded"
    AWAITING_SELECTION = "awaiting_selection"
    CALIBRATING = "calibrating"
    FINALIZED = "finalized"
    FAILED = "failed"


@dataclass
class Session:
    session_id: str
    tree: WorldLineTree
    config: DeductionConfig
    state: SessionState = SessionState.CREATED
    traces: list[CalibrationTrace] = field(default_factory=list)
    visualization: Optional[VisualizedWorldLine] = None
    keyframes: list[KeyframeEntry] = field(default_factory=list)
    metrics: Optional[dict] = None
    graph: Optional[dict] = None
    estimates: Optional[list] = None
    created_at: float = 0.0
    updated_at: float = 0.0

    def to_dict(self) -> dict:
        snapshot = self.tree.to_dict(self.config)
        snapshot.update(
            {
                "state": self.state.value,
                "traces": [t.to_dict() for t in self.traces],
                "visualization": self.visualization.to_dict() if self.visualization else None,
                "keyframes": [k.to_dict() for k in self.keyframes],
                "metrics": self.metrics,
                "graph": self.graph,
                "estimates": self.estimates,
                "created_at": self.created_at,
                "updated_at": self.updated_at,
            }
        )
        return snapshot

    @classmethod
    def from_dict(cls, data: dict) -> "Session":
        try:
            tree = WorldLineTree.from_dict(data)
            session = cls(
                session_id=data["session_id"],
                tree=tree,
                config=DeductionConfig.from_dict(data["config"]),
                state=SessionState(data["state"]),
                traces=[CalibrationTrace.from_dict(t) for t in data.get("traces", [])],
                visualization=(
                    VisualizedWorldLine.from_dict(data["visualization"])
                    if data.get("visualization")
                    else None
                ),
                keyframes=[
                    KeyframeEntry(id=k["id"], caption=k["caption"], image_path=k["image_path"])
                    for k in data.get("keyframes", [])
                ],
                metrics=data.get("metrics"),
                graph=data.get("graph"),
                estimates=data.get("estimates"),
                created_at=data.get("created_at", 0.0),
                updated_at=data.get("updated_at", 0.0),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed session snapshot: {exc}") from exc
        return session


class SessionStore:
    """One directory per session: session.json snapshot plus a media/ subdirectory.

    Saves write a temp file and rename it into place, so a crash between any two
    persisted steps always leaves the previous loadable snapshot behind.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def session_dir(self, session_id: str) -> Path:
        return self.root / session_id

    def snapshot_path(self, session_id: str) -> Path:
        return self.session_dir(session_id) / "session.json"

    def media_dir(self, session_id: str) -> Path:
        return self.session_dir(session_id) / "media"

    def save(self, session: Session) -> Path:
        target = self.snapshot_path(session.session_id)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            payload = json.dumps(session.to_dict(), sort_keys=True, indent=2, ensure_ascii=False)
            temp = target.with_suffix(".json.tmp")
            temp.write_text(payload + "\n", encoding="utf-8")
            os.replace(temp, target)
        except OSError as exc:
            raise StorageError(f"cannot persist session {session.session_id}: {exc}") from exc
        return target

    def load(self, session_id: str) -> Session:
        path = self.snapshot_path(session_id)
        if not path.exists():
            raise NotFoundError(f"no session {session_id} in store")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: corrupt snapshot: {exc.msg}") from exc
        except OSError as exc:
            raise StorageError(f"cannot read {path}: {exc}") from exc
        session = Session.from_dict(data)
        if session.session_id != session_id:
            raise FormatError(f"{path}: snapshot id {session.session_id} does not match {session_id}")
        return session

    def list_ids(self) -> list[str]:
        return sorted(p.parent.name for p in self.root.glob("*/session.json"))


_ESTIMATE_PROB_RE = re.compile(r"probability\s*[:=]\s*([01](?:\.\d+)?|\.\d+)", re.IGNORECASE)
_ESTIMATE_SEV_RE = re.compile(r"severity\s*[:=]\s*([1-5])", re.IGNORECASE)

_EXPANDABLE = (
    SessionState.CREATED,
    SessionState.ROOTS_PROPOSED,
    SessionState.EXPANDED,
    SessionState.AWAITING_SELECTION,
    SessionState.FAILED,
)


class Orchestrator:
    """Drives sessions through create -> (expand <-> select)* -> finalize.

    Within one session mutating calls are serialized: a second concurrent call
    gets a busy error instead of blocking. Provider failures roll the tree back
    to its pre-call shape and park the session in the failed state, from which
    the same call may simply be retried.
    """

    def __init__(
        self,
        store: SessionStore,
        provider,
        index: Optional[KnowledgeIndex] = None,
        library: Optional[KeyframeLibrary] = None,
        accidents: Optional[Sequence[AccidentRecord]] = None,
        templates: Optional[TemplateSet] = None,
        clock=time.time,
        image_generation: bool = True,
    ):
        self.store = store
        self.provider = provider
        self.index = index
        self.library = library or KeyframeLibrary()
        self.accidents = list(accidents or [])
        self.templates = templates or default_templates()
        self.clock = clock
        self.image_generation = image_generation
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.RLock] = defaultdict(threading.RLock)

    # -- session lifecycle ----------------------------------------------------

    def create_session(
        self,
        initial,
        config: Optional[DeductionConfig] = None,
        session_id: Optional[str] = None,
    ) -> Session:
        config = config or DeductionConfig()
        config.validate()
        if isinstance(initial, EmergencyInstance):
            text = initial.text
            state = SessionState.ROOTS_PROPOSED
        else:
            text = str(initial)
            state = SessionState.CREATED
        if not text or not text.strip():
            raise InvalidArgumentError("initial scenario text must be non-empty")
        session_id = session_id or uuid.uuid4().hex[:12]
        if session_id in self._sessions or self.store.snapshot_path(session_id).exists():
            raise InvalidArgumentError(f"session {session_id} already exists")
        now = self.clock()
        session = Session(
            session_id=session_id,
            tree=WorldLineTree.create(session_id, text),
            config=config,
            state=state,
            created_at=now,
            updated_at=now,
        )
        self._sessions[session_id] = session
        self.store.save(session)
        return session

    def get_session(self, session_id: str) -> Session:
        if session_id not in self._sessions:
            self._sessions[session_id] = self.store.load(session_id)
        return self._sessions[session_id]

    def _locked(self, session_id: str) -> threading.RLock:
        lock = self._locks[session_id]
        if not lock.acquire(blocking=False):
            raise BusyError(f"a mutating call is already running on session {session_id}")
        return lock

    def _touch(self, session: Session) -> None:
        session.updated_at = self.clock()
        self.store.save(session)

    # -- expansion and selection ------------------------------------------------

    def expand_frontier(self, session_id: str) -> list[EventNode]:
        lock = self._locked(session_id)
        try:
            session = self.get_session(session_id)
            self._require_state(session, _EXPANDABLE)
            tree, config = session.tree, session.config
            endpoint = tree.endpoint()
            if endpoint.stage >= config.max_stage:
                raise StageLimitError(f"endpoint already at stage {config.max_stage}")

            before = set(tree.nodes)
            try:
                children = expand_node(tree, endpoint.id, config, self.provider, self.index, self.templates)
                if config.ablation_mode is not AblationMode.NONE and not config.calibrate_after_selection:
                    session.state = SessionState.CALIBRATING
                    self._touch(session)
                    self._calibrate_candidates(session, endpoint, [c.id for c in children])
            except ProviderError:
                for node_id in set(tree.nodes) - before:
                    del tree.nodes[node_id]
                session.state = SessionState.FAILED
                self._touch(session)
                raise
            session.state = SessionState.AWAITING_SELECTION
            self._touch(session)
            return [tree.nodes[c.id] for c in children]
        finally:
            lock.release()

    def _calibrate_candidates(self, session: Session, endpoint: EventNode, candidate_ids: list[str]) -> None:
        """Fact pass over all candidates, then logic pass over all (endpoint, candidate) pairs."""
        tree, config = session.tree, session.config
        mode = config.ablation_mode
        fact_outcomes: dict[str, TraceOutcome] = {}
        logic_outcomes: dict[str, TraceOutcome] = {}

        if mode in (AblationMode.FULL, AblationMode.FACT_ONLY) and self.index is not None:
            for node_id in candidate_ids:
                node, trace = calibrate_event_fact(
                    tree.nodes[node_id], self.index, self.provider, self.provider, config, self.templates
                )
                tree.update_node(node)
                session.traces.append(trace)
                fact_outcomes[node_id] = trace.outcome
        if mode in (AblationMode.FULL, AblationMode.LOGIC_ONLY):
            for node_id in candidate_ids:
                node, trace = calibrate_pair_logic(
                    tree.nodes[endpoint.id],
                    tree.nodes[node_id],
                    self.provider,
                    self.provider,
                    self.index,
                    config,
                    self.templates,
                )
                tree.update_node(node)
                session.traces.append(trace)
                logic_outcomes[node_id] = trace.outcome

        if mode is AblationMode.FULL and self.index is not None:
            accepted = (TraceOutcome.ACCEPTED, TraceOutcome.REVISED, TraceOutcome.REGENERATED)
            for node_id in candidate_ids:
                if fact_outcomes.get(node_id) in accepted and logic_outcomes.get(node_id) in accepted:
                    tree.update_node(tree.nodes[node_id].with_status(CalibStatus.FULLY_CALIBRATED))

    def select_branch(self, session_id: str, node_id: str) -> Session:
        lock = self._locked(session_id)
        try:
            session = self.get_session(session_id)
            self._require_state(session, (SessionState.AWAITING_SELECTION,))
            tree, config = session.tree, session.config
            endpoint = tree.endpoint()
            node = tree.nodes.get(node_id)
            if node is None or node.parent_id != endpoint.id:
                raise InvalidArgumentError(f"{node_id} is not a candidate child of {endpoint.id}")

            tree.selected_path.append(node_id)
            if config.calibrate_after_selection and config.ablation_mode is not AblationMode.NONE:
                session.state = SessionState.CALIBRATING
                self._touch(session)
                try:
                    self._calibrate_candidates(session, endpoint, [node_id])
                except ProviderError:
                    session.state = SessionState.FAILED
                    self._touch(session)
                    raise
            if tree.nodes[node_id].stage >= config.max_stage and config.auto_finalize:
                session.state = SessionState.EXPANDED
                self._touch(session)
                return self.finalize_session(session_id)
            session.state = SessionState.EXPANDED
            self._touch(session)
            return session
        finally:
            lock.release()

    def finalize_session(self, session_id: str) -> Session:
        lock = self._locked(session_id)
        try:
            session = self.get_session(session_id)
            self._require_state(
                session,
                (SessionState.EXPANDED, SessionState.AWAITING_SELECTION, SessionState.FAILED),
            )
            tree, config = session.tree, session.config
            endpoint = tree.endpoint()
            if endpoint.stage != config.max_stage:
                raise IllegalStateError(
                    f"cannot finalize at stage {endpoint.stage}, deduction depth is {config.max_stage}"
                )
            path = extract_path(tree, endpoint.id)
            self._require_calibrated(session, path)

            overlay = KeyframeLibrary(entries=list(session.keyframes), base=self.library)
            image_gen = self.provider if self.image_generation else None
            session_dir = self.store.session_dir(session.session_id)
            try:
                visualization = visualize_world_line(
                    path,
                    overlay,
                    image_gen,
                    self.provider,
                    config,
                    media_dir=self.store.media_dir(session.session_id),
                    session_id=session.session_id,
                )
            except ProviderError:
                session.state = SessionState.FAILED
                self._touch(session)
                raise
            for entry in overlay.entries:
                if Path(entry.image_path).is_absolute():
                    entry.image_path = os.path.relpath(entry.image_path, session_dir)
            session.keyframes = overlay.entries
            for node_id, keyframe in visualization.pairs:
                node = tree.nodes[node_id]
                if node.keyframe != keyframe:
                    tree.update_node(replace(node, keyframe=keyframe))
            session.visualization = visualization

            fact_indicators = path_fact_indicators(path, config.delta_fact)
            logic_indicators = path_logic_indicators(path, session.traces)
            session.metrics = {
                "fc": factual_consistency(fact_indicators) if fact_indicators else None,
                "lc": logical_consistency(logic_indicators) if logic_indicators else None,
            }
            session.state = SessionState.FINALIZED
            self._touch(session)
            return session
        finally:
            lock.release()

    def _require_state(self, session: Session, allowed: Sequence[SessionState]) -> None:
        if session.state not in allowed:
            raise IllegalStateError(
                f"operation not legal in state {session.state.value} "
                f"(expected one of {[s.value for s in allowed]})"
            )

    def _require_calibrated(self, session: Session, path: Sequence[EventNode]) -> None:
        mode = session.config.ablation_mode
        if mode is AblationMode.NONE:
            return
        if mode in (AblationMode.FULL, AblationMode.FACT_ONLY) and self.index is None:
            return
        fact_statuses = {CalibStatus.FACT_OK.value, CalibStatus.FACT_REVISED.value,
                         CalibStatus.FACT_UNRESOLVED.value}
        logic_statuses = {CalibStatus.LOGIC_OK.value, CalibStatus.LOGIC_REGENERATED.value,
                          CalibStatus.LOGIC_UNRESOLVED.value}
        unresolved = {CalibStatus.FACT_UNRESOLVED.value, CalibStatus.LOGIC_UNRESOLVED.value}
        for node in path[1:]:
            history = set(node.status_history)
            if mode is AblationMode.FULL:
                ok = node.calib_status is CalibStatus.FULLY_CALIBRATED or history & unresolved
            elif mode is AblationMode.FACT_ONLY:
                ok = history & fact_statuses
            else:
                ok = history & logic_statuses
            if not ok:
                raise IllegalStateError(f"path event {node.id} has not been calibrated")

    # -- derived artifacts -------------------------------------------------------

    def knowledge_graph(self, session_id: str) -> dict:
        session = self.get_session(session_id)
        if session.graph is None:
            path = extract_path(session.tree, session.tree.selected_path[-1])
            graph = export_knowledge_graph(path, self.provider, self.templates)
            session.graph = {**graph.to_dict(), "dot": to_dot(graph)}
            self._touch(session)
        return session.graph

    def estimate_world_lines(self, session_id: str) -> list:
        """Judge-provider probability and loss-severity estimate per world line,
        labeled as model output (not a trained scorer)."""
        session = self.get_session(session_id)
        if session.estimates is None:
            results = []
            for leaf in session.tree.leaves():
                path = extract_path(session.tree, leaf.id)
                events = "\n".join(f"Stage {n.stage}: {n.text}" for n in path)
                prompt = self.templates.render("estimate", events=events)
                probability, severity = self._parse_estimate(prompt, session.config.rng_seed, leaf.id)
                results.append(
                    {
                        "leaf_id": leaf.id,
                        "path": [n.id for n in path],
                        "probability": probability,
                        "loss_severity": severity,
                        "label": "model-estimated",
                    }
                )
            session.estimates = results
            self._touch(session)
        return session.estimates

    def _parse_estimate(self, prompt: str, seed: int, leaf_id: str) -> tuple[float, int]:
        for attempt in range(2):
            reply = self.provider.generate(
                prompt, temperature=0.0, seed=derive_seed(seed, "estimate", leaf_id, attempt)
            )
            prob_match = _ESTIMATE_PROB_RE.search(reply)
            severity_match = _ESTIMATE_SEV_RE.search(reply)
            if prob_match and severity_match:
                return float(prob_match.group(1)), int(severity_match.group(1))
        raise ProviderError("estimate reply was not parseable", kind="parse")

    def transform(self, domain: str, n: int, seed: int = 0) -> list[EmergencyInstance]:
        if not self.accidents:
            raise InvalidArgumentError("no accident dataset configured")
        return transform_instances(
            self.accidents, self.index, domain, self.templates, self.provider, n, seed=seed
        )

    def find_media(self, session_id: str, keyframe_id: str) -> Path:
        session = self.get_session(session_id)
        for entry in session.keyframes:
            if entry.id == keyframe_id:
                path = Path(entry.image_path)
                if not path.is_absolute():
                    path = self.store.session_dir(session_id) / path
                return path
        base_entry = self.library.find(keyframe_id)
        if base_entry is not None:
            return Path(base_entry.image_path)
        raise NotFoundError(f"no keyframe {keyframe_id} in session {session_id}")

    # -- batch convenience ---------------------------------------------------------

    def run_auto(self, initial, config: Optional[DeductionConfig] = None,
                 session_id: Optional[str] = None) -> Session:
        """Unattended loop: expand, auto-select the best-scored candidate, repeat.

        Candidate preference is highest fact score, ties to the smallest id. This
        is an operator-free convenience for batch runs; interactive sessions never
        auto-select.
        """
        session = self.create_session(initial, config=config, session_id=session_id)
        while session.state is not SessionState.FINALIZED:
            candidates = self.expand_frontier(session.session_id)
            best = max(candidates, key=lambda c: (c.fact_score or 0.0, -int(c.id[1:])))
            session = self.select_branch(session.session_id, best.id)
            if session.state is SessionState.EXPANDED and session.tree.endpoint().stage >= session.config.max_stage:
                session = self.finalize_session(session.session_id)
        return session

    def validate_session(self, session: Session) -> None:
        validate_tree(session.tree, delta_fact=session.config.delta_fact)

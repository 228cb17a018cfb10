"""Uniform gateway to generative capabilities over HTTP, plus a deterministic scripted mock.

Five capabilities: text generation, fact judging, logic judging, embedding, and
image generation. Every capability call appends exactly one CallRecord, which is
what the calibration budget tests count.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import random
import re
import threading
import time
import zlib
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

from .core import sample_index, temperature_distribution
from .errors import FormatError, InvalidArgumentError, ProviderError, StorageError
from .knowledge import tokenize


class Capability(str, Enum):
    GENERATE = "generate"
    JUDGE_FACT = "judge_fact"
    JUDGE_LOGIC = "judge_logic"
    EMBED = "embed"
    IMAGE = "image"


@dataclass
class CallRecord:
    capability: Capability
    request_digest: str
    temperature: Optional[float] = None
    latency: float = 0.0
    outcome: str = "ok"


@dataclass
class ProviderConfig:
    """One HTTP provider endpoint. The API key itself never lives in config files,
    only the name of the environment variable holding it."""

    name: str
    base_url: str
    api_key_env: str = ""
    model_id: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    retry_backoff: float = 1.0

    def validate(self) -> None:
        if not self.timeout > 0:
            raise InvalidArgumentError("timeout must be positive")
        if self.max_retries < 0:
            raise InvalidArgumentError("max_retries must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "ProviderConfig":
        config = cls(
            name=data.get("name", ""),
            base_url=data["base_url"],
            api_key_env=data.get("api_key_env", ""),
            model_id=data.get("model_id", ""),
            timeout=data.get("timeout", 30.0),
            max_retries=data.get("max_retries", 2),
            retry_backoff=data.get("retry_backoff", 1.0),
        )
        config.validate()
        return config


def load_provider_config(path: str | Path) -> dict[str, ProviderConfig]:
    """Read {providers: {generator, judge, embedder, image}} from a JSON file."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc.msg}") from exc
    providers = payload.get("providers", {})
    return {role: ProviderConfig.from_dict(cfg) for role, cfg in providers.items()}


class TemplateSet:
    """Plain-text prompt templates with named placeholders, loaded from a directory."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._cache: dict[str, str] = {}

    def render(self, name: str, **values) -> str:
        if name not in self._cache:
            path = self.directory / f"{name}.txt"
            if not path.exists():
                raise StorageError(f"missing template {path}")
            self._cache[name] = path.read_text(encoding="utf-8")
        return self._cache[name].format(**values)


def default_templates() -> TemplateSet:
    return TemplateSet(Path(__file__).parent / "templates")


SCORE_GRID = 0.05

_SCORE_RE = re.compile(r"score\s*[:=]\s*([01](?:\.\d+)?|\.\d+)", re.IGNORECASE)
_VERDICT_RE = re.compile(r"verdict\s*[:=]\s*(valid|invalid)", re.IGNORECASE)
_REASON_RE = re.compile(r"reason\s*[:=]\s*(.+)", re.IGNORECASE)


def snap_score(value: float) -> float:
    """Snap to the 0.05 grid, rounding exact halves down, clamped to [0, 1]."""
    steps = math.ceil(value / SCORE_GRID - 0.5)
    return min(1.0, max(0.0, steps * 5 / 100.0))


def parse_score(reply: str) -> float:
    match = _SCORE_RE.search(reply)
    if not match:
        raise ValueError(f"no score found in judge reply: {reply[:80]!r}")
    return snap_score(float(match.group(1)))


def parse_verdict(reply: str) -> tuple[str, str]:
    match = _VERDICT_RE.search(reply)
    if not match:
        raise ValueError(f"no verdict found in judge reply: {reply[:80]!r}")
    reason = _REASON_RE.search(reply)
    return match.group(1).lower(), (reason.group(1).strip() if reason else "")


def _normalize_messages(prompt) -> list[dict]:
    if isinstance(prompt, str):
        return [{"role": "user", "content": prompt}]
    return [dict(m) for m in prompt]


def request_digest(payload) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, ensure_ascii=False, default=str).encode("utf-8")
    ).hexdigest()


EMBED_DIM = 256


def token_bucket(token: str, dim: int = EMBED_DIM) -> int:
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:4], "big") % dim


def hashed_embedding(text: str, dim: int = EMBED_DIM) -> list[float]:
    """Deterministic bag-of-tokens projection, L2-normalized. Two texts with no
    shared tokens land in disjoint buckets (barring hash collisions), so their
    cosine similarity is zero."""
    vector = [0.0] * dim
    tokens = tokenize(text)
    if not tokens:
        vector[token_bucket(text, dim)] = 1.0
        return vector
    for token in tokens:
        vector[token_bucket(token, dim)] += 1.0
    norm = math.sqrt(sum(v * v for v in vector))
    return [v / norm for v in vector]


def _placeholder_png() -> bytes:
    def chunk(kind: bytes, data: bytes) -> bytes:
        header = len(data).to_bytes(4, "big") + kind + data
        return header + zlib.crc32(kind + data).to_bytes(4, "big")

    ihdr = (1).to_bytes(4, "big") + (1).to_bytes(4, "big") + bytes([8, 2, 0, 0, 0])
    idat = zlib.compress(b"\x00\xc8\xc8\xc8")
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", idat) + chunk(b"IEND", b"")


PLACEHOLDER_PNG = _placeholder_png()


class GatewayBase:
    """Shared capability wrappers: record-keeping, constrained-output parsing, retry-once on parse."""

    def __init__(self, templates: Optional[TemplateSet] = None):
        self.templates = templates or default_templates()
        self.records: list[CallRecord] = []
        self._record_lock = threading.Lock()
        self._image_counter = 0

    # -- capability surface -------------------------------------------------

    def generate(self, prompt, temperature: float, seed: int = 0) -> str:
        messages = _normalize_messages(prompt)
        digest = request_digest({"capability": "generate", "messages": messages,
                                 "temperature": temperature, "seed": seed})
        with self._timed(Capability.GENERATE, digest, temperature):
            text = self._generate_raw(messages, temperature, seed, digest)
            if not text or not text.strip():
                raise ProviderError("provider returned an empty completion", kind="empty")
            return text

    def judge_fact(self, event: str, fact: str) -> float:
        if not event or not fact:
            raise InvalidArgumentError("judge_fact requires non-empty event and fact texts")
        prompt = self.templates.render("judge_fact", event=event, fact=fact)
        digest = request_digest({"capability": "judge_fact", "event": event, "fact": fact})
        with self._timed(Capability.JUDGE_FACT, digest):
            return self._parse_with_retry(
                lambda: self._judge_raw(Capability.JUDGE_FACT, prompt), parse_score
            )

    def judge_logic(self, prev: str, nxt: str) -> tuple[str, str]:
        if not prev or not nxt:
            raise InvalidArgumentError("judge_logic requires non-empty texts")
        prompt = self.templates.render("judge_logic", prev=prev, next=nxt)
        digest = request_digest({"capability": "judge_logic", "prev": prev, "next": nxt})
        with self._timed(Capability.JUDGE_LOGIC, digest):
            return self._parse_with_retry(
                lambda: self._judge_raw(Capability.JUDGE_LOGIC, prompt), parse_verdict
            )

    def embed(self, text: str) -> list[float]:
        if not text:
            raise InvalidArgumentError("embed requires non-empty text")
        digest = request_digest({"capability": "embed", "text": text})
        with self._timed(Capability.EMBED, digest):
            vector = self._embed_raw(text)
            norm = math.sqrt(sum(v * v for v in vector))
            if norm == 0:
                raise ProviderError("embedder returned a zero vector", kind="parse")
            return [v / norm for v in vector]

    def generate_image(self, description: str, media_dir: str | Path,
                       name_hint: Optional[str] = None) -> tuple[Path, str]:
        if not description:
            raise InvalidArgumentError("image description must be non-empty")
        digest = request_digest({"capability": "image", "description": description})
        with self._timed(Capability.IMAGE, digest):
            payload = self._image_raw(description)
            media_dir = Path(media_dir)
            try:
                media_dir.mkdir(parents=True, exist_ok=True)
                if name_hint is None:
                    self._image_counter += 1
                    name_hint = f"img-{self._image_counter:04d}-{digest[:8]}"
                path = media_dir / f"{name_hint}.png"
                path.write_bytes(payload)
            except OSError as exc:
                raise StorageError(f"cannot write image into {media_dir}: {exc}") from exc
            return path, description

    # -- helpers -------------------------------------------------------------

    def _parse_with_retry(self, fetch: Callable[[], str], parser):
        reply = fetch()
        try:
            return parser(reply)
        except ValueError:
            retry = fetch()
            try:
                return parser(retry)
            except ValueError as exc:
                raise ProviderError(str(exc), kind="parse") from exc

    def _timed(self, capability: Capability, digest: str, temperature: Optional[float] = None):
        gateway = self

        class _Recorder:
            def __enter__(self):
                self.start = time.monotonic()
                return self

            def __exit__(self, exc_type, exc, tb):
                record = CallRecord(
                    capability=capability,
                    request_digest=digest,
                    temperature=temperature,
                    latency=time.monotonic() - self.start,
                    outcome="ok" if exc_type is None else "error",
                )
                with gateway._record_lock:
                    gateway.records.append(record)
                return False

        return _Recorder()

    # -- backend hooks -------------------------------------------------------

    def _generate_raw(self, messages: list[dict], temperature: float, seed: int, digest: str) -> str:
        raise NotImplementedError

    def _judge_raw(self, capability: Capability, prompt: str) -> str:
        raise NotImplementedError

    def _embed_raw(self, text: str) -> list[float]:
        raise NotImplementedError

    def _image_raw(self, description: str) -> bytes:
        raise NotImplementedError


DEFAULT_CANDIDATE_TABLE = [
    "Emergency responders arrive on scene and begin a coordinated containment effort.",
    "The situation escalates as smoke and heat spread toward adjacent areas.",
    "Staff activate the alarm system and start guiding people away from the hazard.",
    "Initial suppression succeeds and operations gradually return to normal.",
    "Authorities suspend service while specialists inspect the affected equipment.",
    "Conditions deteriorate and the incident command requests additional resources.",
    "A secondary failure is discovered during the response, widening the affected zone.",
    "The area is cordoned off and an investigation into the root cause begins.",
]


class MockProvider(GatewayBase):
    """Fully offline provider: scripted replies first, deterministic synthesis after.

    Scripted entries are {capability, reply} consumed in file order, one queue per
    capability. When a queue is empty the mock synthesizes: generation picks from a
    candidate table by temperature-softmax over logits derived from the prompt
    digest; judges reply cooperatively; embeddings are hashed bag-of-token
    projections; images are one-pixel placeholders.
    """

    def __init__(self, script: Optional[Sequence[dict]] = None, seed: int = 0,
                 templates: Optional[TemplateSet] = None,
                 candidate_table: Optional[Sequence[str]] = None):
        super().__init__(templates)
        self.seed = seed
        self.candidate_table = list(candidate_table or DEFAULT_CANDIDATE_TABLE)
        self._queues: dict[str, deque] = {}
        self._script_lock = threading.Lock()
        for entry in script or []:
            capability = entry["capability"]
            self._queues.setdefault(capability, deque()).append(entry["reply"])

    @classmethod
    def from_file(cls, path: str | Path, seed: int = 0) -> "MockProvider":
        try:
            script = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc.msg}") from exc
        return cls(script=script, seed=seed)

    def pending_script(self) -> int:
        return sum(len(q) for q in self._queues.values())

    def _pop_script(self, capability: Capability):
        with self._script_lock:
            queue = self._queues.get(capability.value)
            if queue:
                return queue.popleft()
        return None

    def _generate_raw(self, messages, temperature, seed, digest) -> str:
        scripted = self._pop_script(Capability.GENERATE)
        if scripted is not None:
            return str(scripted)
        prompt_text = " ".join(m.get("content", "") for m in messages)
        raw = hashlib.sha256(f"{digest}:{self.seed}".encode("utf-8")).digest()
        if "PROBABILITY:" in prompt_text:
            prob = (raw[0] % 20) * 5 / 100.0
            severity = raw[1] % 5 + 1
            return f"PROBABILITY: {prob:.2f}\nSEVERITY: {severity}"
        if "knowledge graph" in prompt_text.lower():
            return self._synthesize_graph(raw)
        logits = [b / 32.0 for b in raw[: len(self.candidate_table)]]
        dist = temperature_distribution(logits, temperature)
        rng = random.Random(int.from_bytes(raw[8:16], "big"))
        return self.candidate_table[sample_index(dist, rng)]

    def _synthesize_graph(self, raw: bytes) -> str:
        labels = ["responder", "alarm system", "smoke", "evacuation", "platform", "fire"]
        categories = ["role", "device", "phenomenon", "event", "object", "phenomenon"]
        first, second = raw[0] % 6, (raw[0] % 6 + 1 + raw[1] % 5) % 6
        graph = {
            "nodes": [
                {"id": "g1", "label": labels[first], "category": categories[first]},
                {"id": "g2", "label": labels[second], "category": categories[second]},
            ],
            "edges": [{"from": "g1", "to": "g2", "relation": "causal" if raw[2] % 2 else "logical"}],
        }
        return json.dumps(graph)

    def _judge_raw(self, capability: Capability, prompt: str) -> str:
        scripted = self._pop_script(capability)
        if scripted is not None:
            if isinstance(scripted, (int, float)) and capability is Capability.JUDGE_FACT:
                return f"SCORE: {float(scripted):.2f}"
            if isinstance(scripted, dict) and capability is Capability.JUDGE_LOGIC:
                verdict = str(scripted.get("verdict", "valid")).upper()
                return f"VERDICT: {verdict}\nREASON: {scripted.get('rationale', '')}"
            return str(scripted)
        if capability is Capability.JUDGE_FACT:
            return "SCORE: 0.90"
        return "VERDICT: VALID\nREASON: consistent with the preceding events"

    def _embed_raw(self, text: str) -> list[float]:
        scripted = self._pop_script(Capability.EMBED)
        if scripted is not None:
            return [float(v) for v in scripted]
        return hashed_embedding(text)

    def _image_raw(self, description: str) -> bytes:
        self._pop_script(Capability.IMAGE)
        return PLACEHOLDER_PNG


class HttpGateway(GatewayBase):
    """Chat-completion-shaped HTTP adapter covering all capabilities.

    One ProviderConfig per role (generator, judge, embedder, image). Timeouts and
    connection failures are retried up to max_retries with geometric backoff;
    non-2xx responses fail immediately with the status attached.
    """

    def __init__(self, configs: dict[str, ProviderConfig],
                 templates: Optional[TemplateSet] = None,
                 post_fn: Optional[Callable] = None,
                 sleep_fn: Callable[[float], None] = time.sleep):
        super().__init__(templates)
        self.configs = configs
        self._sleep = sleep_fn
        if post_fn is None:
            import requests

            post_fn = requests.post
        self._post = post_fn

    def _config(self, role: str) -> ProviderConfig:
        if role not in self.configs:
            raise InvalidArgumentError(f"no provider configured for role {role}")
        return self.configs[role]

    def _headers(self, config: ProviderConfig) -> dict:
        headers = {"Content-Type": "application/json"}
        if config.api_key_env:
            import os

            key = os.environ.get(config.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _request(self, role: str, body: dict) -> dict:
        import requests

        config = self._config(role)
        delay = config.retry_backoff
        attempts = config.max_retries + 1
        for attempt in range(attempts):
            try:
                response = self._post(
                    config.base_url,
                    json=body,
                    headers=self._headers(config),
                    timeout=config.timeout,
                )
            except (requests.Timeout, requests.ConnectionError) as exc:
                if attempt == attempts - 1:
                    raise ProviderError(
                        f"{config.name or role}: no response after {attempts} attempts", kind="timeout"
                    ) from exc
                self._sleep(delay)
                delay *= 2
                continue
            if not 200 <= response.status_code < 300:
                raise ProviderError(
                    f"{config.name or role}: HTTP {response.status_code}", kind="status"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise ProviderError(f"{config.name or role}: response is not JSON", kind="parse") from exc
        raise ProviderError(f"{config.name or role}: retry loop exhausted", kind="timeout")

    def _completion(self, role: str, messages: list[dict], temperature: float, seed: int = 0) -> str:
        config = self._config(role)
        body = {
            "model": config.model_id,
            "messages": messages,
            "temperature": temperature,
            "seed": seed,
        }
        payload = self._request(role, body)
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            if isinstance(payload.get("text"), str):
                return payload["text"]
            raise ProviderError(f"{config.name or role}: malformed completion payload", kind="parse")

    def _generate_raw(self, messages, temperature, seed, digest) -> str:
        return self._completion("generator", messages, temperature, seed)

    def _judge_raw(self, capability: Capability, prompt: str) -> str:
        return self._completion("judge", _normalize_messages(prompt), temperature=0.0)

    def _embed_raw(self, text: str) -> list[float]:
        config = self._config("embedder")
        payload = self._request("embedder", {"model": config.model_id, "input": text})
        vector = payload.get("embedding")
        if vector is None:
            try:
                vector = payload["data"][0]["embedding"]
            except (KeyError, IndexError, TypeError):
                raise ProviderError(f"{config.name}: malformed embedding payload", kind="parse")
        return [float(v) for v in vector]

    def _image_raw(self, description: str) -> bytes:
        config = self._config("image")
        payload = self._request("image", {"model": config.model_id, "prompt": description})
        encoded = payload.get("b64_json")
        if encoded is None:
            try:
                encoded = payload["data"][0]["b64_json"]
            except (KeyError, IndexError, TypeError):
                raise ProviderError(f"{config.name}: malformed image payload", kind="parse")
        try:
            return base64.b64decode(encoded)
        except Exception as exc:
            raise ProviderError(f"{config.name}: image payload is not base64", kind="parse") from exc

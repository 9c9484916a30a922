"""Chat-completion gateway: backends, on-disk cache, retries, rate limiting,
prompt templates and key-by-key constrained filling."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import string
import tempfile
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence, TypeVar

import requests

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
TEMPLATE_DIR = Path(__file__).parent / "templates"
DEFAULT_API_KEY_ENV = "TRIALKIT_API_KEY"


class GatewayError(Exception):
    pass


class ConfigurationError(GatewayError):
    pass


class TransportError(GatewayError):
    """The backend could not be reached or kept failing; ``attempts`` logs each try."""

    def __init__(self, message: str, attempts: Sequence[str] = ()):
        self.attempts = list(attempts)
        super().__init__(message if not attempts else f"{message} (attempts: {'; '.join(attempts)})")


class RetryableError(GatewayError):
    """Raised by backends for transient failures (HTTP 429/5xx, connection resets)."""


class TemplateError(GatewayError):
    pass


@dataclass
class ChatRequest:
    messages: list[dict]
    temperature: float = 0.0
    max_tokens: int = 1024
    model_id: str = ""
    # routing hint for offline backends; never sent on the wire nor hashed
    tag: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("empty message list")
        prev = None
        for m in self.messages:
            if m.get("role") not in ROLES:
                raise ValueError(f"bad role {m.get('role')!r}")
            if not str(m.get("content", "")).strip():
                raise ValueError("empty message content")
            if m["role"] == "assistant" and prev == "assistant":
                raise ValueError("two consecutive assistant messages")
            prev = m["role"]

    @property
    def params(self) -> dict:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens, "model_id": self.model_id}

    def with_model(self, model_id: str) -> ChatRequest:
        if self.model_id:
            return self
        return ChatRequest(self.messages, self.temperature, self.max_tokens, model_id, self.tag)


def user(content: str, system: str | None = None, tag: str = "", **params) -> ChatRequest:
    msgs = [{"role": "system", "content": system}] if system else []
    msgs.append({"role": "user", "content": content})
    return ChatRequest(msgs, tag=tag, **params)


def cache_key(req: ChatRequest) -> str:
    payload = {"model_id": req.model_id, "params": req.params,
               "messages": [{"role": m["role"], "content": m["content"]} for m in req.messages]}
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# -- caches -------------------------------------------------------------------

class MemoryCache:
    def __init__(self):
        self._d: dict[str, str] = {}
        self._lock = threading.Lock()

    def get(self, key: str) -> str | None:
        with self._lock:
            return self._d.get(key)

    def put(self, key: str, response: str) -> None:
        with self._lock:
            self._d[key] = response

    def __len__(self):
        return len(self._d)


class DiskCache:
    """Content-addressed store: ``<root>/<key[:2]>/<key>.json``; writes are atomic renames."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> str | None:
        try:
            with open(self._path(key), encoding="utf-8") as fh:
                return json.load(fh)["response"]
        except FileNotFoundError:
            return None

    def put(self, key: str, response: str) -> None:
        path = self._path(key)
        path.parent.mkdir(exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump({"key": key, "response": response, "timestamp": time.time()}, fh)
        os.replace(tmp, path)

    def __len__(self):
        return sum(1 for _ in self.root.glob("*/*.json"))


# -- backends -----------------------------------------------------------------

class Backend(Protocol):
    model_id: str

    def send(self, req: ChatRequest) -> str: ...


class OpenAIChatBackend:
    """OpenAI-style ``/chat/completions`` over HTTP(S)."""

    def __init__(self, endpoint: str, model_id: str, api_key_env: str = DEFAULT_API_KEY_ENV,
                 timeout: float = 60.0, session: requests.Session | None = None,
                 require_key: bool = True):
        self.endpoint = endpoint.rstrip("/")
        self.model_id = model_id
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.require_key = require_key
        self.session = session or requests.Session()

    def _headers(self) -> dict:
        key = os.environ.get(self.api_key_env)
        if not key:
            if self.require_key:
                raise ConfigurationError(f"credential missing: environment variable {self.api_key_env} is not set")
            return {"Content-Type": "application/json"}
        return {"Content-Type": "application/json", "Authorization": f"Bearer {key}"}

    def send(self, req: ChatRequest) -> str:
        body = {"model": req.model_id or self.model_id, "messages": req.messages,
                "temperature": req.temperature, "max_tokens": req.max_tokens}
        headers = self._headers()
        try:
            resp = self.session.post(f"{self.endpoint}/chat/completions", json=body,
                                     headers=headers, timeout=self.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise RetryableError(f"connection failure: {exc.__class__.__name__}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise RetryableError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc


class ScriptedBackend:
    """Offline backend replaying a script.

    ``script`` is either a sequence of responses consumed in order (an
    ``Exception`` instance in the sequence is raised instead of returned) or a
    callable ``ChatRequest -> str``. Every request is recorded.
    """

    def __init__(self, script: Sequence[Any] | Callable[[ChatRequest], str], model_id: str = "scripted"):
        self.model_id = model_id
        self._script = script if callable(script) else deque(script)
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    def send(self, req: ChatRequest) -> str:
        with self._lock:
            self.requests.append(req)
            if not callable(self._script):
                if not self._script:
                    raise TransportError("script exhausted")
                item = self._script.popleft()
        if callable(self._script):
            item = self._script(req)
        if isinstance(item, Exception):
            raise item
        return item


# -- rate limiting / gateway ----------------------------------------------------

class RateLimiter:
    """At most ``rate`` acquisitions in any sliding window of ``period`` seconds."""

    def __init__(self, rate: int, period: float = 1.0, clock=time.monotonic, sleep=time.sleep):
        if rate < 1:
            raise ValueError("rate must be >= 1")
        self.rate, self.period = rate, period
        self._clock, self._sleep = clock, sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        while True:
            with self._lock:
                now = self._clock()
                while self._stamps and now - self._stamps[0] >= self.period:
                    self._stamps.popleft()
                if len(self._stamps) < self.rate:
                    self._stamps.append(now)
                    return now
                wait = self.period - (now - self._stamps[0])
            self._sleep(max(wait, 1e-4))


@dataclass
class GatewayStats:
    network_calls: int = 0
    cache_hits: int = 0
    failures: int = 0


class Gateway:
    """Cache + bounded retries + global rate/in-flight limits around one backend.

    Shareable across threads.
    """

    def __init__(self, backend: Backend, cache: MemoryCache | DiskCache | None = None, *,
                 max_retries: int = 4, backoff: float = 0.5, rate_limit: int | None = None,
                 max_in_flight: int = 8, sleep: Callable[[float], None] = time.sleep):
        self.backend = backend
        self.cache = cache
        self.max_retries = max_retries
        self.backoff = backoff
        self.limiter = RateLimiter(rate_limit, sleep=sleep) if rate_limit else None
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._sleep = sleep
        self.stats = GatewayStats()
        self._stats_lock = threading.Lock()

    @property
    def model_id(self) -> str:
        return self.backend.model_id

    def _count(self, name: str):
        with self._stats_lock:
            setattr(self.stats, name, getattr(self.stats, name) + 1)

    def complete(self, req: ChatRequest) -> str:
        req = req.with_model(self.backend.model_id)
        key = cache_key(req)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                self._count("cache_hits")
                return hit
        attempts = []
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            if self.limiter:
                self.limiter.acquire()
            with self._slots:
                self._count("network_calls")
                try:
                    text = self.backend.send(req)
                except RetryableError as exc:
                    attempts.append(f"#{attempt + 1}: {exc}")
                    logger.warning("retryable backend failure on attempt %d: %s", attempt + 1, exc)
                    continue
                except TransportError as exc:
                    self._count("failures")
                    raise TransportError(str(exc), attempts + [f"#{attempt + 1}: {exc}"]) from exc
            if self.cache is not None:
                self.cache.put(key, text)
            return text
        self._count("failures")
        raise TransportError(f"retries exhausted for {self.backend.model_id}", attempts)


def as_gateway(backend: Backend | Gateway) -> Gateway:
    return backend if isinstance(backend, Gateway) else Gateway(backend)


def complete_chat(req: ChatRequest, backend: Backend | Gateway) -> str:
    return as_gateway(backend).complete(req)


T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Map in a thread pool; results come back in input order regardless of worker count."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- templates ----------------------------------------------------------------

@dataclass
class PromptTemplate:
    """A prompt body with ``{slot}`` placeholders (``{{``/``}}`` are literal braces)."""

    name: str
    body: str
    required_slots: list[str] = field(default_factory=list)

    def __post_init__(self):
        found = [f for _, f, _, _ in string.Formatter().parse(self.body) if f is not None]
        for f in found:
            if not f.isidentifier():
                raise TemplateError(f"{self.name}: placeholder {{{f}}} is not a plain slot name")
        if not self.required_slots:
            self.required_slots = list(dict.fromkeys(found))
        for slot in self.required_slots:
            n = found.count(slot)
            if n != 1:
                raise TemplateError(f"{self.name}: slot {slot!r} appears {n} times (expected once)")


def render_template(t: PromptTemplate, slots: Mapping[str, Any]) -> str:
    missing = [s for s in t.required_slots if s not in slots]
    if missing:
        raise TemplateError(f"{t.name}: missing slot {missing[0]!r}")
    extra = sorted(set(slots) - set(t.required_slots))
    if extra:
        logger.warning("%s: ignoring unused slots %s", t.name, extra)
    return t.body.format(**{s: slots[s] for s in t.required_slots})


def load_template(name: str, directory: str | Path | None = None) -> PromptTemplate:
    """Load ``<directory>/<name>.txt``; leading ``#`` lines are a comment header."""
    path = Path(directory or TEMPLATE_DIR) / f"{name}.txt"
    lines = path.read_text(encoding="utf-8").splitlines()
    while lines and lines[0].startswith("#"):
        lines.pop(0)
    return PromptTemplate(name, "\n".join(lines).strip("\n"))


class TemplateSet:
    """Named templates, read from an override directory first, then the bundled set."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        self._cache: dict[str, PromptTemplate] = {}

    def __getitem__(self, name: str) -> PromptTemplate:
        if name not in self._cache:
            if self.directory and (self.directory / f"{name}.txt").exists():
                self._cache[name] = load_template(name, self.directory)
            else:
                self._cache[name] = load_template(name)
        return self._cache[name]

    def render(self, name: str, **slots) -> str:
        return render_template(self[name], slots)

    def use_directory(self, directory: str | Path | None) -> None:
        self.directory = Path(directory) if directory else None
        self._cache.clear()


DEFAULT_TEMPLATES = TemplateSet()


# -- constrained filling ------------------------------------------------------

class ConstraintViolation(ValueError):
    pass


def extract_json_list(text: str) -> list:
    """First JSON array embedded in ``text``, tolerating prose and code fences around it."""
    decoder = json.JSONDecoder()
    i = text.find("[")
    while i != -1:
        try:
            value, _ = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            value = None
        if isinstance(value, list):
            return value
        i = text.find("[", i + 1)
    raise ConstraintViolation("no JSON array found")


def string_list(text: str) -> list[str]:
    value = extract_json_list(text)
    if not all(isinstance(v, str) for v in value):
        raise ConstraintViolation("array elements must be strings")
    return value


@dataclass
class FieldSpec:
    key: str
    prompt: str
    parse: Callable[[str], Any] = string_list
    fallback: Any = None
    max_attempts: int = 3


@dataclass
class FillResult:
    values: dict[str, Any]
    flags: list[str] = field(default_factory=list)
    attempts: dict[str, list[str]] = field(default_factory=dict)


REASK = ("That answer was not valid ({error}). Reply again for \"{key}\" with only the requested value.")


def constrained_fill(schema: Sequence[FieldSpec], backend: Backend | Gateway, context: str = "",
                     system: str | None = None, tag: str = "fill") -> FillResult:
    """Fill ``schema`` one key at a time, in order.

    Each key gets its own prompt showing the partially filled object so far.
    An answer failing the key's parser is re-asked up to ``max_attempts`` in
    total; after that the key takes its fallback and is flagged. Transport
    errors propagate.
    """
    if not schema:
        raise ValueError("empty schema")
    gw = as_gateway(backend)
    result = FillResult({})
    for spec in schema:
        partial = json.dumps(result.values, ensure_ascii=False)
        prompt = f"{context}\n\nPartially filled JSON so far: {partial}\n\n{spec.prompt}".strip()
        messages = ([{"role": "system", "content": system}] if system else []) + [{"role": "user", "content": prompt}]
        log = result.attempts.setdefault(spec.key, [])
        for _ in range(spec.max_attempts):
            answer = gw.complete(ChatRequest(list(messages), tag=f"{tag}:{spec.key}"))
            log.append(answer)
            try:
                result.values[spec.key] = spec.parse(answer)
                break
            except ConstraintViolation as exc:
                messages += [{"role": "assistant", "content": answer if answer.strip() else "(empty)"},
                             {"role": "user", "content": REASK.format(error=exc, key=spec.key)}]
        else:
            result.values[spec.key] = spec.fallback() if callable(spec.fallback) else spec.fallback
            result.flags.append(spec.key)
    return result

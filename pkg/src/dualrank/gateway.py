"""Chat-completions client for sampling candidates and judgments.

Every raw completion goes to a content-addressed on-disk cache, keyed by
(prompt hash, sampling config, model name, sample index). A warm cache
answers without touching the network, which makes synthesis resumable
after an interruption. Requests fan out over a bounded thread pool, and
results come back in request order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import httpx

from .dataset import TrainingInstance
from .problems import Problem
from .prompts import render_generation_prompt, render_ranking_prompt

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 1.0
    top_p: float = 1.0
    top_k: int = 0
    max_tokens: int = 131072
    n_samples: int = 64

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens <= 0 or self.n_samples < 0 or self.top_k < 0:
            raise ValueError("max_tokens must be positive, n_samples and top_k non-negative")

    def request_fields(self) -> dict:
        body = {"temperature": self.temperature, "top_p": self.top_p, "max_tokens": self.max_tokens}
        if self.top_k:
            body["top_k"] = self.top_k
        return body


SYNTHESIS_SAMPLING = SamplingConfig(temperature=1.0, top_p=1.0, top_k=0, max_tokens=131072, n_samples=64)
EVAL_SAMPLING = SamplingConfig(temperature=0.6, top_p=0.95, top_k=20, max_tokens=65536, n_samples=4)
ROLLOUT_SAMPLING = SamplingConfig(temperature=1.0, top_p=1.0, top_k=0, max_tokens=32768, n_samples=8)


@dataclass(frozen=True)
class Endpoint:
    base_url: str
    model_name: str
    auth_env: str | None = "OPENAI_API_KEY"
    max_concurrency: int = 8
    max_attempts: int = 5
    backoff_base: float = 1.0
    timeout: float = 600.0

    def __post_init__(self):
        if self.max_concurrency < 1 or self.max_attempts < 1:
            raise ValueError("max_concurrency and max_attempts must be >= 1")


# -- failures ------------------------------------------------------------------

UNREACHABLE, AUTH, EXHAUSTED, OFFLINE = "endpoint-unreachable", "auth-failure", "retries-exhausted", "offline-miss"


@dataclass(frozen=True)
class SampleFailure:
    index: int
    kind: str
    message: str


class _RequestError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


@dataclass
class SamplingResult:
    texts: list[str] = field(default_factory=list)
    failures: list[SampleFailure] = field(default_factory=list)
    dropped_empty: int = 0


# -- cache -----------------------------------------------------------------------


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def cache_key(prompt_sha: str, config: SamplingConfig, model_name: str, sample_index: int) -> str:
    cfg = asdict(config)
    cfg.pop("n_samples")
    blob = json.dumps({"prompt_sha": prompt_sha, "config": cfg, "model": model_name, "index": sample_index},
                      sort_keys=True)
    return sha256(blob)


class CompletionCache:
    """Append-only JSONL segments under one directory.

    Each process writes its own segment; opening the cache reads all of
    them. A torn last line from a crash is skipped.
    """

    def __init__(self, directory: str | os.PathLike | None):
        self.directory = Path(directory) if directory is not None else None
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()
        self._segment: Path | None = None
        if self.directory is not None and self.directory.exists():
            for seg in sorted(self.directory.glob("*.jsonl")):
                with open(seg, encoding="utf-8") as f:
                    for line in f:
                        try:
                            rec = json.loads(line)
                            self._entries[rec["key"]] = rec["completion"]
                        except (json.JSONDecodeError, KeyError, TypeError):
                            logger.warning("skipping malformed cache line in %s", seg)

    def __len__(self):
        return len(self._entries)

    def get(self, key: str) -> str | None:
        return self._entries.get(key)

    def put(self, key: str, prompt_sha: str, config: SamplingConfig, completion: str) -> None:
        with self._lock:
            self._entries[key] = completion
            if self.directory is None:
                return
            if self._segment is None:
                self.directory.mkdir(parents=True, exist_ok=True)
                stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
                self._segment = self.directory / f"segment-{stamp}-{os.getpid()}-{id(self):x}.jsonl"
            rec = {
                "key": key,
                "prompt_sha": prompt_sha,
                "config": asdict(config),
                "completion": completion,
                "ts": datetime.now(timezone.utc).isoformat(),
            }
            with open(self._segment, "a", encoding="utf-8") as f:
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")
                f.flush()


# -- client ----------------------------------------------------------------------


class ChatClient:
    def __init__(
        self,
        endpoint: Endpoint,
        cache: CompletionCache | None = None,
        offline: bool = False,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.cache = cache if cache is not None else CompletionCache(None)
        self.offline = offline
        self._sleep = sleep
        self._transport = transport
        self._http: httpx.Client | None = None
        self._http_lock = threading.Lock()
        self.network_calls = 0

    def _client(self) -> httpx.Client:
        with self._http_lock:
            if self._http is None:
                headers = {}
                key = os.environ.get(self.endpoint.auth_env, "") if self.endpoint.auth_env else ""
                if key:
                    headers["Authorization"] = f"Bearer {key}"
                self._http = httpx.Client(
                    base_url=self.endpoint.base_url.rstrip("/"),
                    headers=headers,
                    timeout=self.endpoint.timeout,
                    transport=self._transport,
                )
            return self._http

    def close(self):
        if self._http is not None:
            self._http.close()

    def _request(self, prompt: str, config: SamplingConfig) -> str:
        body = {
            "model": self.endpoint.model_name,
            "messages": [{"role": "user", "content": prompt}],
            **config.request_fields(),
        }
        last = ""
        connect_only = True
        for attempt in range(self.endpoint.max_attempts):
            if attempt:
                self._sleep(self.endpoint.backoff_base * 2 ** (attempt - 1))
            with self._http_lock:
                self.network_calls += 1
            try:
                resp = self._client().post("/chat/completions", json=body)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            connect_only = False
            if resp.status_code in (401, 403):
                raise _RequestError(AUTH, f"HTTP {resp.status_code}")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise _RequestError(EXHAUSTED, f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError):
                last = "malformed response body"
        raise _RequestError(UNREACHABLE if connect_only else EXHAUSTED, last)

    def complete(
        self, prompt: str, config: SamplingConfig, start_index: int = 0
    ) -> tuple[list[str | None], list[SampleFailure]]:
        """Sample ``config.n_samples`` completions; failed slots are None.

        Sample slots are numbered from ``start_index``, so disjoint ranges of
        the same prompt (e.g. one per evaluation repeat) cache separately.
        Failure indices are relative to the returned list.
        """
        prompt_sha = sha256(prompt)
        results: list[str | None] = [None] * config.n_samples
        failures: list[SampleFailure] = []
        todo = []
        for i in range(config.n_samples):
            key = cache_key(prompt_sha, config, self.endpoint.model_name, start_index + i)
            hit = self.cache.get(key)
            if hit is not None:
                results[i] = hit
            elif self.offline:
                failures.append(SampleFailure(i, OFFLINE, "not cached and offline mode is on"))
            else:
                todo.append((i, key))

        def run(item):
            i, key = item
            try:
                text = self._request(prompt, config)
            except _RequestError as exc:
                return i, None, SampleFailure(i, exc.kind, str(exc))
            self.cache.put(key, prompt_sha, config, text)
            return i, text, None

        if todo:
            with ThreadPoolExecutor(max_workers=self.endpoint.max_concurrency) as pool:
                for i, text, failure in pool.map(run, todo):
                    results[i] = text
                    if failure is not None:
                        failures.append(failure)
        failures.sort(key=lambda f: f.index)
        return results, failures


# -- extraction and high-level sampling ------------------------------------------

_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.S)


def extract_code(completion: str) -> str | None:
    """Contents of the last fenced code block, or None when there is none."""
    blocks = _FENCE_RE.findall(completion or "")
    if not blocks:
        return None
    return blocks[-1].rstrip("\n")


def sample_candidates(
    problem: Problem,
    client: ChatClient,
    config: SamplingConfig = SYNTHESIS_SAMPLING,
    thinking_mode: bool = False,
    start_index: int = 0,
) -> SamplingResult:
    prompt = render_generation_prompt(problem, thinking_mode)
    completions, failures = client.complete(prompt, config, start_index)
    result = SamplingResult(failures=failures)
    for text in completions:
        if text is None:
            continue
        code = extract_code(text)
        if code is None or not code.strip():
            result.dropped_empty += 1
        else:
            result.texts.append(code)
    if result.dropped_empty:
        logger.info("problem %s: dropped %d completions without code", problem.id, result.dropped_empty)
    return result


def sample_judgments(
    problem: Problem,
    candidates: Sequence[str] | TrainingInstance,
    client: ChatClient,
    config: SamplingConfig = EVAL_SAMPLING,
    start_index: int = 0,
) -> SamplingResult:
    """Raw judgment texts for one group; parsing is left to the reward module."""
    if isinstance(candidates, TrainingInstance):
        candidates = candidates.candidates
    prompt = render_ranking_prompt(problem, list(candidates))
    completions, failures = client.complete(prompt, config, start_index)
    return SamplingResult(texts=[t for t in completions if t is not None], failures=failures)


def sampling_config(values: dict, base: SamplingConfig) -> SamplingConfig:
    return replace(base, **{k: v for k, v in values.items() if k in asdict(base)})

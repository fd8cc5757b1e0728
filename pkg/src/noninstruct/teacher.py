"""Teacher-LLM completion clients with caching, retry, and resumable batches.

Supports OpenAI-compatible `/chat/completions` and Anthropic-compatible
`/v1/messages` endpoints. Completions are cached one file per request
hash, so re-running a batch performs no network requests for records
that already finished.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Iterable, Sequence

import requests

from .splitter import SplitRecord

log = logging.getLogger(__name__)

OPENAI_COMPATIBLE = "openai-compatible"
ANTHROPIC_COMPATIBLE = "anthropic-compatible"

# Continuation instruction sent as the system prompt for Anthropic-style
# teachers; OpenAI-style teachers get no system prompt by default.
CONTINUE_SYSTEM_PROMPT = (
    "Please continue directly from the end of the given sentence without repeating it"
)

_API_KEY_ENV = {
    OPENAI_COMPATIBLE: "OPENAI_API_KEY",
    ANTHROPIC_COMPATIBLE: "ANTHROPIC_API_KEY",
}

MAX_ATTEMPTS = 5
BACKOFF_BASE_S = 1.0
BACKOFF_JITTER = 0.25


class TeacherError(Exception):
    pass


class AuthError(TeacherError):
    """Fatal: bad or missing credentials."""


class RefusalError(TeacherError):
    """Provider declined to complete; recorded, never silently dropped."""


@dataclass
class TeacherSpec:
    provider: str
    model_id: str
    endpoint_url: str
    temperature: float = 0.0
    system_prompt: str | None = None
    max_output_tokens: int = 2048

    def __post_init__(self):
        if self.provider not in (OPENAI_COMPATIBLE, ANTHROPIC_COMPATIBLE):
            raise TeacherError(f"unknown provider: {self.provider!r}")
        if self.temperature < 0:
            raise TeacherError(f"temperature must be >= 0, got {self.temperature}")
        # Anthropic teachers carry the continuation system prompt unless
        # the caller overrides it (empty string disables it).
        if self.provider == ANTHROPIC_COMPATIBLE and self.system_prompt is None:
            self.system_prompt = CONTINUE_SYSTEM_PROMPT

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CompletionRecord:
    doc_id: str
    continuation: str
    teacher: dict
    prompt_tokens: int
    completion_tokens: int
    request_hash: str
    timestamp: float = 0.0


@dataclass
class RunManifest:
    run_id: str
    teacher: dict
    requests: int = 0
    cache_hits: int = 0
    retries: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    statuses: dict = field(default_factory=dict)  # doc_id -> pending/done/failed

    @property
    def done(self) -> int:
        return sum(1 for s in self.statuses.values() if s == "done")

    @property
    def failed(self) -> int:
        return sum(1 for s in self.statuses.values() if s == "failed")

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "teacher": self.teacher,
            "totals": {
                "records": len(self.statuses),
                "requests": self.requests,
                "cache_hits": self.cache_hits,
                "retries": self.retries,
                "done": self.done,
                "failed": self.failed,
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
            },
            "statuses": dict(sorted(self.statuses.items())),
        }


def request_hash(prefix: str, spec: TeacherSpec) -> str:
    """Cache key: any change to the prefix or teacher parameters invalidates it."""
    payload = json.dumps(
        {
            "provider": spec.provider,
            "model": spec.model_id,
            "temperature": spec.temperature,
            "system_prompt": spec.system_prompt,
            "max_output_tokens": spec.max_output_tokens,
            "prefix_sha": hashlib.sha256(prefix.encode("utf-8")).hexdigest(),
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:32]


def build_request(prefix: str, spec: TeacherSpec) -> tuple[str, dict, dict]:
    """Return (url, json body, headers) for the provider wire format."""
    api_key = os.environ.get(_API_KEY_ENV[spec.provider], "")
    if spec.provider == OPENAI_COMPATIBLE:
        url = spec.endpoint_url.rstrip("/") + "/chat/completions"
        body = {
            "model": spec.model_id,
            "temperature": spec.temperature,
            "max_tokens": spec.max_output_tokens,
            "messages": [{"role": "user", "content": prefix}],
        }
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
    else:
        url = spec.endpoint_url.rstrip("/") + "/v1/messages"
        body = {
            "model": spec.model_id,
            "max_tokens": spec.max_output_tokens,
            "temperature": spec.temperature,
            "messages": [{"role": "user", "content": prefix}],
        }
        if spec.system_prompt:
            body["system"] = spec.system_prompt
        headers = {"x-api-key": api_key} if api_key else {}
    return url, body, headers


def parse_response(raw: dict, spec: TeacherSpec) -> tuple[str, int, int]:
    """Extract (text, prompt_tokens, completion_tokens) from a provider reply."""
    try:
        if spec.provider == OPENAI_COMPATIBLE:
            text = raw["choices"][0]["message"]["content"]
            usage = raw.get("usage", {})
            return text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))
        text = raw["content"][0]["text"]
        usage = raw.get("usage", {})
        return text, int(usage.get("input_tokens", 0)), int(usage.get("output_tokens", 0))
    except (KeyError, IndexError, TypeError) as exc:
        raise RefusalError(f"provider reply missing completion text: {exc}") from exc


def _backoff(attempt: int, rng: random.Random) -> float:
    delay = BACKOFF_BASE_S * (2 ** attempt)
    return delay * (1 + BACKOFF_JITTER * (2 * rng.random() - 1))


def _send(prefix: str, spec: TeacherSpec, session: requests.Session,
          sleep: Callable[[float], None] = time.sleep) -> tuple[dict, int]:
    """POST with retries; returns (raw response json, retries used)."""
    url, body, headers = build_request(prefix, spec)
    rng = random.Random()
    last_exc: Exception | None = None
    for attempt in range(MAX_ATTEMPTS):
        try:
            resp = session.post(url, json=body, headers=headers, timeout=120)
        except requests.RequestException as exc:
            last_exc = exc
            if attempt < MAX_ATTEMPTS - 1:
                sleep(_backoff(attempt, rng))
            continue
        if resp.status_code in (401, 403):
            raise AuthError(f"authentication failed ({resp.status_code}) at {url}")
        if resp.status_code == 429 or resp.status_code >= 500:
            last_exc = TeacherError(f"HTTP {resp.status_code} from {url}")
            if attempt < MAX_ATTEMPTS - 1:
                sleep(_backoff(attempt, rng))
            continue
        if resp.status_code != 200:
            raise TeacherError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
        return resp.json(), attempt
    raise TeacherError(f"giving up after {MAX_ATTEMPTS} attempts: {last_exc}")


def complete(prefix: str, spec: TeacherSpec, doc_id: str = "",
             cache_dir: str | Path | None = None,
             session: requests.Session | None = None,
             sleep: Callable[[float], None] = time.sleep) -> CompletionRecord:
    """Complete one prefix, consulting the on-disk cache first."""
    if not prefix:
        raise TeacherError("prefix must be non-empty")
    rhash = request_hash(prefix, spec)
    cache_file = Path(cache_dir) / f"{rhash}.json" if cache_dir else None

    raw = None
    if cache_file is not None and cache_file.exists():
        raw = json.loads(cache_file.read_text(encoding="utf-8"))
    if raw is None:
        own_session = session is None
        sess = session or requests.Session()
        try:
            raw, _retries = _send(prefix, spec, sess, sleep=sleep)
        finally:
            if own_session:
                sess.close()
        if cache_file is not None:
            cache_file.parent.mkdir(parents=True, exist_ok=True)
            tmp = cache_file.with_suffix(".tmp")
            tmp.write_text(json.dumps(raw, ensure_ascii=False), encoding="utf-8")
            tmp.replace(cache_file)

    text, p_tok, c_tok = parse_response(raw, spec)
    return CompletionRecord(
        doc_id=doc_id,
        continuation=text,
        teacher=spec.to_dict(),
        prompt_tokens=p_tok,
        completion_tokens=c_tok,
        request_hash=rhash,
        timestamp=time.time(),
    )


def run_batch(splits: Sequence[SplitRecord], spec: TeacherSpec,
              max_in_flight: int, cache_dir: str | Path,
              max_failures: int | None = None,
              sleep: Callable[[float], None] = time.sleep) -> RunManifest:
    """Complete every split prefix with bounded concurrency and resume.

    Cached records cost no network request. Persistent per-record
    failures are recorded as `failed` and summarized; the batch aborts
    only if max_failures is crossed. Writes `completions.jsonl` and
    `manifest.json` (both deterministic in input order) under cache_dir.
    """
    if max_in_flight < 1:
        raise TeacherError(f"max_in_flight must be positive, got {max_in_flight}")
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    run_id = hashlib.sha256(
        json.dumps([s.doc_id for s in splits]).encode()).hexdigest()[:12]
    manifest = RunManifest(run_id=run_id, teacher=spec.to_dict())
    records: dict[str, CompletionRecord] = {}

    pending: list[SplitRecord] = []
    for s in splits:
        manifest.statuses[s.doc_id] = "pending"
        rhash = request_hash(s.prefix, spec)
        if (cache_dir / f"{rhash}.json").exists():
            rec = complete(s.prefix, spec, doc_id=s.doc_id, cache_dir=cache_dir)
            records[s.doc_id] = rec
            manifest.cache_hits += 1
            manifest.prompt_tokens += rec.prompt_tokens
            manifest.completion_tokens += rec.completion_tokens
            manifest.statuses[s.doc_id] = "done"
        else:
            pending.append(s)

    if pending:
        session = requests.Session()
        failures = 0
        try:
            with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
                futures = {
                    pool.submit(complete, s.prefix, spec, s.doc_id, cache_dir,
                                session, sleep): s
                    for s in pending
                }
                for fut in as_completed(futures):
                    s = futures[fut]
                    manifest.requests += 1
                    try:
                        rec = fut.result()
                    except AuthError:
                        raise
                    except TeacherError as exc:
                        log.error("completion failed for %s: %s", s.doc_id, exc)
                        manifest.statuses[s.doc_id] = "failed"
                        failures += 1
                        if max_failures is not None and failures > max_failures:
                            raise TeacherError(
                                f"aborting batch: {failures} failures exceeds "
                                f"threshold {max_failures}") from exc
                        continue
                    records[s.doc_id] = rec
                    manifest.prompt_tokens += rec.prompt_tokens
                    manifest.completion_tokens += rec.completion_tokens
                    manifest.statuses[s.doc_id] = "done"
        finally:
            session.close()

    write_completions(
        (records[s.doc_id] for s in splits if s.doc_id in records),
        cache_dir / "completions.jsonl")
    (cache_dir / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8")
    return manifest


def write_completions(records: Iterable[CompletionRecord], path: str | Path) -> int:
    """Persist completion records as jsonl, excluding wall-clock timestamps."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row = asdict(rec)
            row.pop("timestamp", None)
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            count += 1
    return count


def read_completions(path: str | Path) -> list[CompletionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(CompletionRecord(**json.loads(line)))
    return out


# Words-to-tokens heuristic for cost planning (English web text).
TOKENS_PER_WORD = 4 / 3


def estimate_cost(manifest_or_splits, price_table: dict, spec: TeacherSpec | None = None) -> dict:
    """Estimate run cost from a finished manifest or a planned split list.

    price_table maps model_id to per-million-token input/output prices.
    Plans use a word-count token heuristic and are labeled estimates.
    """
    if isinstance(manifest_or_splits, RunManifest):
        manifest = manifest_or_splits
        model = manifest.teacher["model_id"]
        in_tok, out_tok = manifest.prompt_tokens, manifest.completion_tokens
        estimated = False
    else:
        if spec is None:
            raise TeacherError("estimating from a plan requires a TeacherSpec")
        model = spec.model_id
        words = sum(len(s.prefix.split()) for s in manifest_or_splits)
        in_tok = int(words * TOKENS_PER_WORD)
        # Continuations are roughly the length of the removed half,
        # capped by the output limit per record.
        out_tok = in_tok
        estimated = True
    if model not in price_table:
        raise TeacherError(f"no prices known for model {model!r}")
    prices = price_table[model]
    cost = (in_tok * prices["input_per_million"]
            + out_tok * prices["output_per_million"]) / 1_000_000
    return {
        "model": model,
        "input_tokens": in_tok,
        "output_tokens": out_tok,
        "cost": cost,
        "is_estimate": estimated,
    }

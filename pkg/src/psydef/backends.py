"""Gateways to the external models: generator, NLI scorer, emotion scorer, text encoder.

Every gateway has a deterministic stub so the whole pipeline runs offline.
Live generator/NLI/emotion gateways speak a small JSON-over-HTTP contract
(see README, "Backend wire contract").
"""

from __future__ import annotations

import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .text import content_tokens, stable_hash, tokenize

logger = logging.getLogger(__name__)

EMBED_DIM = 768
API_KEY_ENV = "PSYDEF_API_KEY"


class BackendError(RuntimeError):
    """A single backend call failed (transport, bad status, empty reply)."""

    retryable = True


class BackendExhaustedError(BackendError):
    """All retry attempts failed."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


@dataclass(frozen=True)
class GenerationParams:
    max_tokens: int = 128
    temperature: float = 0.7
    seed: Optional[int] = None

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class EmotionResult:
    label: str
    confidence: float
    is_neutral: bool

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 1.0
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    def call(self, fn: Callable[[], object], what: str = "backend call"):
        last: Optional[Exception] = None
        for attempt in range(1, self.attempts + 1):
            try:
                result = fn()
            except BackendError as exc:
                if not exc.retryable:
                    raise
                last = exc
                logger.warning("%s failed (attempt %d/%d): %s", what, attempt, self.attempts, exc)
                if attempt < self.attempts:
                    self.sleep(self.base_delay * 2 ** (attempt - 1))
                continue
            logger.debug("%s succeeded after %d attempt(s)", what, attempt)
            return result
        logger.error("%s exhausted after %d attempts", what, self.attempts)
        raise BackendExhaustedError(f"{what} failed after {self.attempts} attempts: {last}", self.attempts)


# ---------------------------------------------------------------------------
# stubs

_STUB_CATEGORIES = (
    "Interpersonal Conflict", "Self-Esteem Threat", "External Crisis",
    "Job Loss", "Social Rejection", "Academic Pressure", "Health Worry",
)
_STUB_OPENERS = (
    "", "Honestly, ", "I guess ", "Well, ", "You know, ", "To be fair, ", "Look, ",
    "Right now ", "Truth is, ", "I mean, ", "Anyway, ", "It's just that ",
)
_STUB_CLOSERS = (
    "", " That's how it is.", " I don't know.", " Yeah.", " Seriously.",
    " That's all.", " Again.", " Lately.",
)
_EXEMPLAR_RE = re.compile(r'^\s*[123]\. "(.*)"\s*$', re.MULTILINE)


class StubLLM:
    """Prompt-aware deterministic generator.

    Stressor prompts get a well-formed two-line answer; generation prompts get
    a lightly varied copy of one of the few-shot exemplars. ``garbage_rate``
    turns a deterministic fraction of replies into unparseable text.
    """

    def __init__(self, garbage_rate: float = 0.0):
        self.garbage_rate = garbage_rate
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str, params: GenerationParams = GenerationParams()) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        with self._lock:
            self.calls += 1
        h = stable_hash(prompt, params.seed)
        if self.garbage_rate and (h % 10_000) < self.garbage_rate * 10_000:
            return "```\n```"
        if "Clinical Stressor Identification" in prompt:
            cat = _STUB_CATEGORIES[h % len(_STUB_CATEGORIES)]
            return (f"1. Stressor Category: {cat}\n"
                    f"2. Description: The seeker is struggling with {cat.lower()}.")
        exemplars = _EXEMPLAR_RE.findall(prompt)
        if exemplars:
            ex = exemplars[h % len(exemplars)]
            opener = _STUB_OPENERS[(h >> 8) % len(_STUB_OPENERS)]
            closer = _STUB_CLOSERS[(h >> 16) % len(_STUB_CLOSERS)]
            if opener and not re.match(r"I\b", ex):
                ex = ex[0].lower() + ex[1:]
            return f'"{opener}{ex}{closer}"'
        return f"stub reply {h:016x}"


class StubNLI:
    """Lexical-overlap entailment: share of hypothesis content words found in the premise."""

    floor = 0.02
    ceil = 0.98

    def entail(self, premise: str, hypothesis: str) -> float:
        if not premise or not hypothesis:
            raise ValueError("premise and hypothesis must be non-empty")
        hyp = content_tokens(hypothesis) or set(tokenize(hypothesis))
        if not hyp:
            return 0.5
        prem = set(tokenize(premise))
        coverage = len(hyp & prem) / len(hyp)
        return self.floor + (self.ceil - self.floor) * coverage

    def entail_batch(self, premise: str, hypotheses: Sequence[str]) -> list[float]:
        return [self.entail(premise, h) for h in hypotheses]


_EMOTION_LEXICON = {
    "sadness": {"sad", "devastated", "depressed", "lonely", "miserable", "heartbroken", "cry",
                "crying", "hopeless", "hurt", "grief", "empty", "worthless", "lost", "down"},
    "anger": {"angry", "furious", "mad", "hate", "annoyed", "frustrated", "pissed", "resent",
              "unfair", "idiot", "furiously"},
    "fear": {"scared", "afraid", "anxious", "worried", "terrified", "nervous", "panic",
             "panicking", "fear", "stress", "stressed"},
    "joy": {"happy", "glad", "grateful", "thrilled", "excited", "relieved", "love", "proud"},
}
_INTENSIFIERS = {"so", "very", "really", "extremely", "totally", "completely", "incredibly"}


class StubEmotion:
    neutral_label = "neutral"

    def score(self, text: str) -> EmotionResult:
        if not text:
            raise ValueError("text must be non-empty")
        toks = tokenize(text)
        hits = {emo: sum(t in words for t in toks) for emo, words in _EMOTION_LEXICON.items()}
        best = max(hits, key=lambda e: hits[e])  # dict order breaks ties
        if hits[best] == 0:
            return EmotionResult(self.neutral_label, 0.7, True)
        boost = sum(t in _INTENSIFIERS for t in toks)
        conf = min(0.99, 0.55 + 0.15 * (hits[best] - 1) + 0.1 * boost)
        return EmotionResult(best, conf, False)


class TextEncoder(nn.Module):
    """Trainable text encoder. ``embed`` is differentiable; ``encode`` is the inference helper."""

    dim = EMBED_DIM

    def embed(self, texts: Sequence[str]) -> torch.Tensor:  # pragma: no cover - interface
        raise NotImplementedError

    def encode(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("text must be non-empty")
        with torch.no_grad():
            return self.embed([text])[0].detach().cpu().numpy()


class StubEncoder(TextEncoder):
    """Hashed bag-of-tokens followed by a seeded, trainable linear projection to 768 dims."""

    def __init__(self, n_buckets: int = 2048, seed: int = 0):
        super().__init__()
        self.n_buckets = n_buckets
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        weight = torch.randn(self.dim, n_buckets, generator=gen) / np.sqrt(n_buckets) * 8.0
        self.projection = nn.Linear(n_buckets, self.dim, bias=False)
        with torch.no_grad():
            self.projection.weight.copy_(weight)
        self._bag = lru_cache(maxsize=65536)(self._bag_uncached)

    def _bag_uncached(self, text: str) -> torch.Tensor:
        vec = torch.zeros(self.n_buckets)
        for tok in tokenize(text):
            vec[stable_hash("tok", tok) % self.n_buckets] += 1.0
        norm = vec.norm()
        return vec / norm if norm > 0 else vec

    def bags(self, texts: Sequence[str]) -> torch.Tensor:
        return torch.stack([self._bag(t) for t in texts])

    def embed(self, texts: Sequence[str]) -> torch.Tensor:
        bags = self.bags(texts).to(self.projection.weight.dtype)
        return self.projection(bags)

    def config(self) -> dict:
        return {"kind": "stub", "n_buckets": self.n_buckets, "seed": self.seed}


class TransformerEncoder(TextEncoder):
    """Pretrained contextual encoder; first-token hidden state as the sentence embedding."""

    def __init__(self, model: nn.Module, tokenizer, max_length: int = 256, name: str = ""):
        super().__init__()
        self.model = model
        self.tokenizer = tokenizer
        self.max_length = max_length
        self.name = name
        hidden = getattr(getattr(model, "config", None), "hidden_size", EMBED_DIM)
        if hidden != EMBED_DIM:
            raise ValueError(f"encoder hidden size must be {EMBED_DIM}, got {hidden}")

    @classmethod
    def from_pretrained(cls, name: str = "mental/mental-roberta-base", **kw) -> "TransformerEncoder":
        from transformers import AutoModel, AutoTokenizer

        return cls(AutoModel.from_pretrained(name), AutoTokenizer.from_pretrained(name), name=name, **kw)

    def embed(self, texts: Sequence[str]) -> torch.Tensor:
        batch = self.tokenizer(list(texts), padding=True, truncation=True,
                               max_length=self.max_length, return_tensors="pt")
        out = self.model(**batch)
        return out.last_hidden_state[:, 0]

    def config(self) -> dict:
        return {"kind": "transformer", "name": self.name, "max_length": self.max_length}


# ---------------------------------------------------------------------------
# live HTTP gateways

class HttpGateway:
    """Shared plumbing: auth header, in-flight limit, retries, status handling."""

    def __init__(self, endpoint: str, model: str, *, timeout: float = 60.0,
                 retry: Optional[RetryPolicy] = None, max_in_flight: int = 4,
                 api_key: Optional[str] = None, client=None):
        import httpx

        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.retry = retry or RetryPolicy()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = headers

    def _post_once(self, path: str, payload: dict) -> dict:
        import httpx

        with self._slots:
            try:
                resp = self._client.post(self.endpoint + path, json=payload, headers=self._headers)
            except httpx.HTTPError as exc:
                raise BackendError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise BackendError(f"HTTP {resp.status_code} from {path}")
        if resp.status_code >= 400:
            err = BackendError(f"HTTP {resp.status_code} from {path}: {resp.text[:200]}")
            err.retryable = False
            raise err
        try:
            return resp.json()
        except ValueError as exc:
            raise BackendError(f"non-JSON response from {path}") from exc

    def _post(self, path: str, payload: dict, check: Callable[[dict], object]):
        def attempt():
            body = self._post_once(path, payload)
            try:
                return check(body)
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise BackendError(f"malformed response from {path}: {exc}") from exc

        return self.retry.call(attempt, what=f"POST {path}")


class HttpLLM(HttpGateway):
    def complete(self, prompt: str, params: GenerationParams = GenerationParams()) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
        }
        if params.seed is not None:
            payload["seed"] = params.seed

        def check(body: dict) -> str:
            text = body["choices"][0]["message"]["content"]
            if not isinstance(text, str) or not text.strip():
                raise BackendError("empty completion")
            return text

        return self._post("/chat/completions", payload, check)


class HttpNLI(HttpGateway):
    def entail_batch(self, premise: str, hypotheses: Sequence[str]) -> list[float]:
        if not premise or not all(hypotheses):
            raise ValueError("premise and hypotheses must be non-empty")
        payload = {"model": self.model,
                   "pairs": [{"premise": premise, "hypothesis": h} for h in hypotheses]}

        def check(body: dict) -> list[float]:
            probs = [float(p) for p in body["entailment"]]
            if len(probs) != len(hypotheses):
                raise ValueError(f"expected {len(hypotheses)} scores, got {len(probs)}")
            return [min(1.0, max(0.0, p)) for p in probs]

        return self._post("/nli", payload, check)

    def entail(self, premise: str, hypothesis: str) -> float:
        return self.entail_batch(premise, [hypothesis])[0]


class HttpEmotion(HttpGateway):
    def __init__(self, *args, neutral_label: str = "neutral", **kw):
        super().__init__(*args, **kw)
        self.neutral_label = neutral_label

    def score(self, text: str) -> EmotionResult:
        if not text:
            raise ValueError("text must be non-empty")

        def check(body: dict) -> EmotionResult:
            res = body["results"][0]
            conf = min(1.0, max(0.0, float(res["score"])))
            return EmotionResult(res["label"], conf, res["label"] == self.neutral_label)

        return self._post("/emotion", {"model": self.model, "texts": [text]}, check)


@dataclass
class Backends:
    """The four gateways bundled together; any mix of stub and live."""

    llm: object
    nli: object
    emotion: object
    encoder: TextEncoder


def stub_backends(seed: int = 0, garbage_rate: float = 0.0) -> Backends:
    return Backends(StubLLM(garbage_rate), StubNLI(), StubEmotion(), StubEncoder(seed=seed))

"""Text conditioning: embedder implementations and the style-token registry.

Two embedders ship: a deterministic hash-based toy embedder (no external
services, used by the whole offline test suite) and a client for a remote
embedding service. Styles are realized as learned context vectors appended to
the prompt embedding; the registry maps style names to unique "[V*_k]" tokens
and their vectors.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np
import requests

from .errors import MalformedResponse, RemoteUnavailable, UnknownStyle

__all__ = [
    "TextEmbedding",
    "ToyEmbedder",
    "RemoteEmbedder",
    "StyleRegistry",
    "format_styled_prompt",
]

MAX_TOKENS = 16
_WORD_RE = re.compile(r"[a-z0-9]+")


@dataclass
class TextEmbedding:
    """Sequence of context vectors plus the null (unconditional) flag."""

    vectors: np.ndarray  # (L, dim) float32
    null: bool = False

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def appended(self, extra: np.ndarray) -> "TextEmbedding":
        extra = np.asarray(extra, dtype=np.float32).reshape(1, -1)
        return TextEmbedding(np.concatenate([self.vectors, extra], axis=0), null=False)


def null_embedding(dim: int) -> TextEmbedding:
    return TextEmbedding(np.zeros((1, dim), dtype=np.float32), null=True)


class ToyEmbedder:
    """Deterministic word-hash embedder: each token maps to a fixed unit vector."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.sha256(f"{self.seed}:{token}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            vec = rng.standard_normal(self.dim)
            vec = (vec / np.linalg.norm(vec)).astype(np.float32)
            self._cache[token] = vec
        return vec

    def embed(self, prompt: str) -> TextEmbedding:
        tokens = _WORD_RE.findall(prompt.lower())[:MAX_TOKENS]
        if not tokens:
            return null_embedding(self.dim)
        return TextEmbedding(np.stack([self._token_vector(t) for t in tokens]), null=False)

    def null(self) -> TextEmbedding:
        return null_embedding(self.dim)


class RemoteEmbedder:
    """Client for an HTTP embedding service (POST /embed)."""

    def __init__(self, url: str, dim: int | None = None, timeout: float = 5.0, retries: int = 3):
        self.url = url.rstrip("/")
        self.dim = dim
        self.timeout = timeout
        self.retries = retries

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        last = None
        for _ in range(self.retries):
            try:
                resp = requests.post(f"{self.url}/embed", json={"texts": texts}, timeout=self.timeout)
                if resp.status_code >= 500:
                    last = RuntimeError(f"server error {resp.status_code}")
                    continue
                resp.raise_for_status()
                payload = resp.json()
                break
            except requests.RequestException as e:
                last = e
        else:
            raise RemoteUnavailable(f"embedding service at {self.url} unavailable: {last}")
        try:
            embeddings = [np.asarray(e, dtype=np.float32) for e in payload["embeddings"]]
            dim = int(payload["dim"])
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedResponse(f"bad /embed payload: {e}") from e
        if any(e.shape != (dim,) for e in embeddings) or len(embeddings) != len(texts):
            raise MalformedResponse("embedding count or dimension mismatch")
        if self.dim is None:
            self.dim = dim
        return embeddings

    def embed(self, prompt: str) -> TextEmbedding:
        if not prompt.strip():
            if self.dim is None:
                raise MalformedResponse("null embedding requested before dim is known")
            return null_embedding(self.dim)
        vec = self.embed_batch([prompt])[0]
        return TextEmbedding(vec[None, :], null=False)

    def null(self) -> TextEmbedding:
        return null_embedding(self.dim)


class StyleRegistry:
    """Style name -> unique token "[V*_k]" -> learned conditioning vector."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._styles: dict[str, dict] = {}

    def register(self, name: str, token: str | None = None) -> str:
        if name in self._styles:
            return self._styles[name]["token"]
        k = len(self._styles)
        token = token if token is not None else f"[V*_{k}]"
        if any(e["token"] == token for e in self._styles.values()):
            raise ValueError(f"token {token!r} already taken")
        digest = hashlib.sha256(f"style:{self.seed}:{k}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vector = (0.1 * rng.standard_normal(self.dim)).astype(np.float32)
        self._styles[name] = {"token": token, "vector": vector}
        return token

    def names(self) -> list[str]:
        return list(self._styles)

    def _entry(self, name: str) -> dict:
        if name not in self._styles:
            raise UnknownStyle(f"style {name!r} not registered (known: {self.names()})")
        return self._styles[name]

    def token(self, name: str) -> str:
        return self._entry(name)["token"]

    def vector(self, name: str) -> np.ndarray:
        return self._entry(name)["vector"]

    def set_vector(self, name: str, vector: np.ndarray) -> None:
        entry = self._entry(name)
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self.dim,):
            raise ValueError(f"vector shape {vector.shape} != ({self.dim},)")
        entry["vector"] = vector

    def to_json(self) -> str:
        return json.dumps({
            "dim": self.dim,
            "seed": self.seed,
            "styles": {
                name: {"token": e["token"], "vector": [float(v) for v in e["vector"]]}
                for name, e in self._styles.items()
            },
        })

    @classmethod
    def from_json(cls, text: str) -> "StyleRegistry":
        data = json.loads(text)
        reg = cls(dim=data["dim"], seed=data.get("seed", 0))
        for name, e in data["styles"].items():
            reg._styles[name] = {
                "token": e["token"],
                "vector": np.asarray(e["vector"], dtype=np.float32),
            }
        return reg


def format_styled_prompt(prompt: str, style: str, registry: StyleRegistry, embedder) -> tuple[str, TextEmbedding]:
    """Append the style token to the prompt text and its vector to the embedding."""
    token = registry.token(style)
    styled = f"{prompt} in {token} style"
    emb = embedder.embed(prompt).appended(registry.vector(style))
    return styled, emb

"""Text embedding: a deterministic reference embedder, a remote client, cosine.

All stored vectors are unit-norm, so index similarity reduces to a dot
product. The reference embedder is a signed hashed bag-of-words: it is
deterministic, dependency-free, and preserves the cosine geometry the
mining math needs; a remote service fulfills the same contract over HTTP.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import requests

from .errors import DimensionMismatch, EmptyText, RemoteUnavailable, ZeroVector
from .hashutil import stable64

log = logging.getLogger(__name__)

DEFAULT_DIM = 1024


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """Fixed-dimension unit-norm vector (L2 norm 1 within 1e-6)."""

    values: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @classmethod
    def from_raw(cls, values) -> "EmbeddingVector":
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("embedding values must be one-dimensional")
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            raise ZeroVector("cannot normalize an all-zero vector")
        return cls(values=arr / norm)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity in [-1, 1]; plain dot product for unit vectors."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"dim {a.dim} != {b.dim}")
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for zero vectors")
    sim = float(np.dot(a.values, b.values)) / (na * nb)
    return max(-1.0, min(1.0, sim))


class HashedBowEmbedder:
    """Signed hashed bag-of-words reference embedder.

    Tokens (lowercased, whitespace-split) hash to a bucket and a sign via
    a fixed 64-bit hash; counts accumulate and the vector is L2-normalized.
    Same text always yields the same vector. Word order never matters.
    """

    name = "hashed-bow"

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def embed(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in text.lower().split():
            h = stable64(token)
            idx = (h >> 1) % self.dim
            vec[idx] += 1.0 if h & 1 == 0 else -1.0
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # Signed counts cancelled exactly (vanishingly rare); there is
            # no direction to report.
            raise ZeroVector("token hashes cancelled to a zero vector")
        return EmbeddingVector(values=vec / norm)

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        return [self.embed(t) for t in texts]


@dataclass
class RemoteEmbedder:
    """HTTP client for an embedding service with the same contract.

    Wire format: POST {"texts": [...]} -> {"vectors": [[...], ...]} in the
    same order. Requests are batched, retried with backoff, and issued with
    bounded concurrency; results are matched to inputs by position.
    """

    endpoint: str
    dim: int = DEFAULT_DIM
    batch_size: int = 32
    timeout: float = 10.0
    max_retries: int = 2
    backoff: float = 0.25
    max_in_flight: int = 4
    name: str = "remote"
    session: requests.Session = field(default_factory=requests.Session, repr=False)

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        for t in texts:
            if not t or not t.strip():
                raise EmptyText("cannot embed empty text")
        batches = [texts[i : i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        if not batches:
            return []
        if self.max_in_flight > 1 and len(batches) > 1:
            with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
                results = list(pool.map(self._request, batches))
        else:
            results = [self._request(b) for b in batches]
        return [vec for batch in results for vec in batch]

    def _request(self, texts: list[str]) -> list[EmbeddingVector]:
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self.session.post(
                    self.endpoint, json={"texts": texts}, timeout=self.timeout
                )
                resp.raise_for_status()
                vectors = resp.json().get("vectors")
                if not isinstance(vectors, list) or len(vectors) != len(texts):
                    raise RemoteUnavailable(
                        f"embedder returned {len(vectors) if isinstance(vectors, list) else 'no'}"
                        f" vectors for {len(texts)} texts"
                    )
                out = []
                for vec in vectors:
                    if len(vec) != self.dim:
                        raise DimensionMismatch(
                            f"embedder returned dim {len(vec)}, expected {self.dim}"
                        )
                    out.append(EmbeddingVector.from_raw(vec))
                return out
            except (DimensionMismatch, RemoteUnavailable):
                raise
            except (requests.RequestException, ValueError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff * (2**attempt))
        raise RemoteUnavailable(f"embedder at {self.endpoint} unavailable: {last_error}")

"""In-process HNSW index over unit vectors with cosine similarity.

Hierarchical navigable small world graph: every item lives at layer 0,
and each item is additionally promoted to higher layers with geometric
probability. Queries greedily descend from the top layer's entry point,
then run a beam search at layer 0. Because all stored vectors are
pre-normalized, cosine similarity is a plain dot product.

Conventions in this implementation:
  * node degree is capped at m per layer and 2*m at layer 0 (the standard
    layer-0 doubling);
  * neighbor selection keeps the m nearest candidates (deterministic ties
    broken by insertion index);
  * level assignment draws from the geometric distribution using the
    seeded RNG in IndexParams, so builds are reproducible given seed and
    insertion order;
  * the index is append-only: the build is single-writer and queries are
    read-only afterwards.
"""

from __future__ import annotations

import heapq
import math
import random
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embed import EmbeddingVector
from .errors import (
    CorruptIndex,
    DimensionMismatch,
    DuplicateId,
    InvalidParams,
    IoFailure,
    VersionMismatch,
)

_MAGIC = b"SMHNSW1\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sHIIIIqqI")  # magic, version, dim, m, efc, efs, seed, count, crc


@dataclass(frozen=True)
class IndexParams:
    dim: int
    m: int = 45
    ef_construction: int = 256
    ef_search: int = 50
    seed: int = 0

    def validate(self) -> None:
        if self.dim < 1:
            raise InvalidParams("dim must be >= 1")
        if self.m < 1:
            raise InvalidParams("m must be >= 1")
        if self.ef_construction < self.m:
            raise InvalidParams("ef_construction must be >= m")
        if self.ef_search < 1:
            raise InvalidParams("ef_search must be >= 1")


@dataclass(frozen=True)
class Neighbor:
    id: str
    similarity: float


class HnswIndex:
    def __init__(self, params: IndexParams):
        params.validate()
        self.params = params
        self._ids: list[str] = []
        self._id_to_idx: dict[str, int] = {}
        self._capacity = 1024
        self._vectors = np.zeros((self._capacity, params.dim), dtype=np.float64)
        self._count = 0
        self._levels: list[int] = []
        # _links[node][layer] is a list of neighbor indices; _link_sims
        # caches each edge's similarity to the owning node so degree
        # pruning never recomputes distances.
        self._links: list[list[list[int]]] = []
        self._link_sims: list[list[list[float]]] = []
        self._entry: int = -1
        self._max_level: int = -1
        self._rng = random.Random(params.seed)
        self._ml = 1.0 / math.log(params.m) if params.m > 1 else 1.0

    @classmethod
    def build(cls, params: IndexParams) -> "HnswIndex":
        return cls(params)

    def size(self) -> int:
        return self._count

    def __len__(self) -> int:
        return self._count

    # --- construction -----------------------------------------------------

    def _draw_level(self) -> int:
        u = self._rng.random()
        while u <= 0.0:
            u = self._rng.random()
        return min(int(-math.log(u) * self._ml), 63)

    def _as_unit(self, vector) -> np.ndarray:
        if isinstance(vector, EmbeddingVector):
            arr = vector.values
        else:
            arr = np.asarray(vector, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != self.params.dim:
            raise DimensionMismatch(
                f"vector dim {arr.shape[-1] if arr.ndim else 0} != index dim {self.params.dim}"
            )
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            raise InvalidParams("cannot index a zero vector")
        return arr / norm

    def insert(self, id: str, vector) -> None:
        if id in self._id_to_idx:
            raise DuplicateId(f"id already present: {id}")
        vec = self._as_unit(vector)
        idx = self._count
        if idx >= self._capacity:
            self._capacity = max(self._capacity * 2, idx + 1)
            grown = np.zeros((self._capacity, self.params.dim), dtype=np.float64)
            grown[:idx] = self._vectors[:idx]
            self._vectors = grown
        self._vectors[idx] = vec
        self._ids.append(id)
        self._id_to_idx[id] = idx
        level = self._draw_level()
        self._levels.append(level)
        self._links.append([[] for _ in range(level + 1)])
        self._link_sims.append([[] for _ in range(level + 1)])
        self._count += 1

        if self._entry < 0:
            self._entry = idx
            self._max_level = level
            return

        m = self.params.m
        ep = self._entry
        for layer in range(self._max_level, level, -1):
            ep = self._greedy_step(vec, ep, layer)

        eps = [ep]
        for layer in range(min(level, self._max_level), -1, -1):
            found = self._search_layer(vec, eps, layer, self.params.ef_construction)
            # found is sorted best-first as (-sim, idx)
            cap = 2 * m if layer == 0 else m
            selected = found[:m]
            node_links = self._links[idx][layer]
            node_sims = self._link_sims[idx][layer]
            for neg_sim, nbr in selected:
                node_links.append(nbr)
                node_sims.append(-neg_sim)
                self._add_reverse_link(nbr, idx, -neg_sim, layer, cap)
            eps = [nbr for _, nbr in found]

        if level > self._max_level:
            self._entry = idx
            self._max_level = level

    def _add_reverse_link(self, node: int, new_nbr: int, sim: float, layer: int, cap: int) -> None:
        links = self._links[node][layer]
        sims = self._link_sims[node][layer]
        links.append(new_nbr)
        sims.append(sim)
        if len(links) > cap:
            # Exactly one entry is over cap: drop the least similar edge
            # (ties resolved against the larger neighbor index).
            worst = 0
            worst_key = (sims[0], -links[0])
            for i in range(1, len(links)):
                key = (sims[i], -links[i])
                if key < worst_key:
                    worst = i
                    worst_key = key
            del links[worst]
            del sims[worst]

    def _greedy_step(self, q: np.ndarray, start: int, layer: int) -> int:
        cur = start
        cur_sim = float(np.dot(self._vectors[cur], q))
        improved = True
        while improved:
            improved = False
            nbrs = self._links[cur][layer]
            if not nbrs:
                break
            sims = self._vectors[nbrs] @ q
            best = int(np.argmax(sims))
            if sims[best] > cur_sim:
                cur = nbrs[best]
                cur_sim = float(sims[best])
                improved = True
        return cur

    def _search_layer(
        self, q: np.ndarray, entry_points: list[int], layer: int, ef: int
    ) -> list[tuple[float, int]]:
        """Beam search at one layer; returns (-sim, idx) sorted best-first."""
        visited = bytearray(self._count)
        candidates: list[tuple[float, int]] = []  # min-heap on -sim
        results: list[tuple[float, int]] = []  # min-heap on sim (worst on top)
        for ep in entry_points:
            if visited[ep]:
                continue
            visited[ep] = 1
            sim = float(np.dot(self._vectors[ep], q))
            heapq.heappush(candidates, (-sim, ep))
            heapq.heappush(results, (sim, ep))
        while len(results) > ef:
            heapq.heappop(results)

        links = self._links
        vectors = self._vectors
        while candidates:
            neg_sim, cur = heapq.heappop(candidates)
            if len(results) >= ef and -neg_sim < results[0][0]:
                break
            fresh = [x for x in links[cur][layer] if not visited[x]]
            if not fresh:
                continue
            for x in fresh:
                visited[x] = 1
            sims = vectors[fresh] @ q
            if len(results) >= ef:
                worst = results[0][0]
                for x, s in zip(fresh, sims.tolist()):
                    if s > worst:
                        heapq.heappush(candidates, (-s, x))
                        heapq.heappushpop(results, (s, x))
                        worst = results[0][0]
            else:
                for x, s in zip(fresh, sims.tolist()):
                    heapq.heappush(candidates, (-s, x))
                    heapq.heappush(results, (s, x))
                    if len(results) > ef:
                        heapq.heappop(results)
        out = [(-sim, idx) for sim, idx in results]
        out.sort()
        return out

    # --- queries ------------------------------------------------------------

    def query(self, vector, k: int, ef_search: int | None = None) -> list[Neighbor]:
        """Approximate top-k neighbors by cosine, best first.

        Results are sorted by similarity descending with ties broken by id
        ascending. The beam width is max(ef_search, k).
        """
        if k < 1:
            raise InvalidParams("k must be >= 1")
        if self._count == 0:
            return []
        vec = self._as_unit(vector)
        ef = max(ef_search if ef_search is not None else self.params.ef_search, k)
        ep = self._entry
        for layer in range(self._max_level, 0, -1):
            ep = self._greedy_step(vec, ep, layer)
        found = self._search_layer(vec, [ep], 0, ef)
        scored = [
            (max(-1.0, min(1.0, -neg_sim)), self._ids[idx]) for neg_sim, idx in found
        ]
        scored.sort(key=lambda t: (-t[0], t[1]))
        return [Neighbor(id=i, similarity=s) for s, i in scored[:k]]

    def vector_for(self, id: str) -> np.ndarray:
        idx = self._id_to_idx.get(id)
        if idx is None:
            raise KeyError(id)
        return self._vectors[idx].copy()

    # --- persistence ----------------------------------------------------------

    def persist(self, path: str | Path) -> None:
        """Write the index to a versioned, checksummed little-endian file."""
        path = Path(path)
        body = bytearray()
        body += struct.pack("<i q", self._max_level, self._entry)
        for idx in range(self._count):
            ident = self._ids[idx].encode("utf-8")
            body += struct.pack("<H", len(ident))
            body += ident
            level = self._levels[idx]
            body += struct.pack("<H", level)
            for layer in range(level + 1):
                links = self._links[idx][layer]
                body += struct.pack("<I", len(links))
                body += np.asarray(links, dtype="<u4").tobytes()
                body += np.asarray(self._link_sims[idx][layer], dtype="<f8").tobytes()
        body += self._vectors[: self._count].astype("<f8").tobytes()
        header = _HEADER.pack(
            _MAGIC,
            _VERSION,
            self.params.dim,
            self.params.m,
            self.params.ef_construction,
            self.params.ef_search,
            self.params.seed,
            self._count,
            zlib.crc32(bytes(body)),
        )
        tmp = path.with_suffix(path.suffix + ".tmp")
        try:
            tmp.write_bytes(header + bytes(body))
            tmp.replace(path)
        except OSError as exc:
            try:
                tmp.unlink(missing_ok=True)
            except OSError:
                pass
            raise IoFailure(f"cannot persist index to {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "HnswIndex":
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise IoFailure(f"cannot read index from {path}: {exc}") from exc
        if len(raw) < _HEADER.size:
            raise CorruptIndex(f"index file truncated: {path}")
        magic, version, dim, m, efc, efs, seed, count, crc = _HEADER.unpack_from(raw, 0)
        if magic != _MAGIC:
            raise CorruptIndex(f"bad magic in index file: {path}")
        if version != _VERSION:
            raise VersionMismatch(f"index format v{version} unsupported (expected v{_VERSION})")
        body = raw[_HEADER.size :]
        if zlib.crc32(body) != crc:
            raise CorruptIndex(f"checksum mismatch in index file: {path}")

        params = IndexParams(dim=dim, m=m, ef_construction=efc, ef_search=efs, seed=seed)
        index = cls(params)
        try:
            off = 0
            max_level, entry = struct.unpack_from("<i q", body, off)
            off += struct.calcsize("<i q")
            for idx in range(count):
                (id_len,) = struct.unpack_from("<H", body, off)
                off += 2
                ident = body[off : off + id_len].decode("utf-8")
                off += id_len
                (level,) = struct.unpack_from("<H", body, off)
                off += 2
                node_links: list[list[int]] = []
                node_sims: list[list[float]] = []
                for _ in range(level + 1):
                    (n,) = struct.unpack_from("<I", body, off)
                    off += 4
                    links = np.frombuffer(body, dtype="<u4", count=n, offset=off)
                    off += 4 * n
                    sims = np.frombuffer(body, dtype="<f8", count=n, offset=off)
                    off += 8 * n
                    node_links.append([int(x) for x in links])
                    node_sims.append([float(s) for s in sims])
                index._ids.append(ident)
                index._id_to_idx[ident] = idx
                index._levels.append(level)
                index._links.append(node_links)
                index._link_sims.append(node_sims)
            vec_bytes = count * dim * 8
            if len(body) - off != vec_bytes:
                raise CorruptIndex(f"index payload size mismatch: {path}")
            vectors = np.frombuffer(body, dtype="<f8", offset=off).reshape(count, dim)
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            raise CorruptIndex(f"index file structure invalid: {path}") from exc
        index._capacity = max(count, 1024)
        index._vectors = np.zeros((index._capacity, dim), dtype=np.float64)
        index._vectors[:count] = vectors
        index._count = count
        index._entry = entry
        index._max_level = max_level
        # Fast-forward the level RNG past the draws already consumed so
        # append-after-load continues the original stream.
        for _ in range(count):
            index._rng.random()
        return index

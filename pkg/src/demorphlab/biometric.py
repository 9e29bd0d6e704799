"""Embedding providers, cosine matching, FMR calibration and leakage audit."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AuditError, CalibrationError, ProviderError
from .imaging import to_gray

EMB_MAGIC = b"DMEMB1\x00\x00"


@dataclass(frozen=True, eq=False)
class Embedding:
    vector: np.ndarray
    provider_id: str

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        norm = float(np.linalg.norm(v))
        if not np.isfinite(norm) or norm == 0.0:
            raise ProviderError("embedding vector has zero or non-finite norm")
        v = v / norm
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    def __len__(self):
        return len(self.vector)


class ToyProvider:
    """16x16 grayscale thumbnail, mean-subtracted and L2-normalized (dim 256).

    A constant image has no signal left after mean subtraction; it maps to the
    first basis vector so that every image still gets a unit embedding.
    """

    provider_id = "toy16"
    side = 16

    @property
    def dimension(self) -> int:
        return self.side * self.side

    def embed(self, image, key=None) -> Embedding:
        g = to_gray(image)
        h, w = g.shape
        if h % self.side or w % self.side:
            raise ProviderError(f"toy provider needs H, W divisible by {self.side}, got {(h, w)}")
        thumb = g.reshape(self.side, h // self.side, self.side, w // self.side).mean(axis=(1, 3))
        v = thumb.reshape(-1) - thumb.mean()
        if np.linalg.norm(v) < 1e-12:
            v = np.zeros(self.dimension)
            v[0] = 1.0
        return Embedding(v, self.provider_id)


@dataclass
class EmbeddingFileProvider:
    """Precomputed embeddings keyed by image path, computed by an external matcher."""

    provider_id: str
    dimension: int
    table: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "EmbeddingFileProvider":
        provider_id, dim, records = read_embedding_file(path)
        return cls(provider_id, dim, {k: v for k, v in records})

    def embed(self, image=None, key=None) -> Embedding:
        if key is None:
            raise ProviderError("embedding-file provider needs the image path as key")
        k = str(key)
        if k not in self.table:
            raise ProviderError(f"no embedding stored for {k}")
        return Embedding(self.table[k], self.provider_id)


def write_embedding_file(path, provider_id: str, records) -> Path:
    """Write ``[(image_path, vector), ...]``.

    Layout (little-endian): magic, u16 id length + UTF-8 id, u32 dimension,
    u32 count, then per record u32 path length + UTF-8 path + float32 vector.
    """
    records = [(str(k), np.asarray(v, dtype="<f4").reshape(-1)) for k, v in records]
    dims = {len(v) for _, v in records}
    if len(dims) > 1:
        raise ProviderError(f"mixed embedding dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    pid = provider_id.encode("utf-8")
    chunks = [EMB_MAGIC, struct.pack("<H", len(pid)), pid, struct.pack("<II", dim, len(records))]
    for key, vec in records:
        kb = key.encode("utf-8")
        chunks += [struct.pack("<I", len(kb)), kb, vec.tobytes()]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    return path


def read_embedding_file(path):
    buf = Path(path).read_bytes()
    if not buf.startswith(EMB_MAGIC):
        raise ProviderError(f"{path}: not an embedding file")
    off = len(EMB_MAGIC)
    try:
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        provider_id = buf[off : off + n].decode("utf-8")
        off += n
        dim, count = struct.unpack_from("<II", buf, off)
        off += 8
        records = []
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            key = buf[off : off + n].decode("utf-8")
            off += n
            vec = np.frombuffer(buf, dtype="<f4", count=dim, offset=off).astype(np.float64)
            off += 4 * dim
            records.append((key, vec))
    except (struct.error, ValueError) as exc:
        raise ProviderError(f"{path}: truncated embedding file") from exc
    return provider_id, dim, records


def match_score(a: Embedding, b: Embedding) -> float:
    """Cosine similarity of two unit embeddings."""
    if a.provider_id != b.provider_id:
        raise ProviderError(f"provider mismatch: {a.provider_id} vs {b.provider_id}")
    if len(a) != len(b):
        raise ProviderError(f"dimension mismatch: {len(a)} vs {len(b)}")
    return float(np.dot(a.vector, b.vector))


def stack(embeddings) -> np.ndarray:
    embeddings = list(embeddings)
    ids = {e.provider_id for e in embeddings}
    if len(ids) > 1:
        raise ProviderError(f"mixed providers: {sorted(ids)}")
    return np.stack([e.vector for e in embeddings])


def impostor_scores(embeddings, identities) -> np.ndarray:
    """All cross-identity scores of a gallery, each unordered pair once."""
    mat = stack(embeddings)
    ids = np.asarray(identities)
    scores = mat @ mat.T
    iu, ju = np.triu_indices(len(mat), k=1)
    keep = ids[iu] != ids[ju]
    return scores[iu[keep], ju[keep]]


@dataclass(frozen=True)
class MatchThreshold:
    """A score ``s`` counts as a match iff ``s > tau``."""

    tau: float
    fmr_target: float
    impostor_count: int
    provider_id: str = ""

    def achieved_fmr(self, impostor_scores) -> float:
        s = np.asarray(impostor_scores, dtype=np.float64)
        return float(np.count_nonzero(s > self.tau)) / len(s)


def calibrate_threshold(impostor_scores, fmr: float, provider_id: str = "") -> MatchThreshold:
    """Smallest observed impostor score whose strict exceedance rate is <= fmr.

    With ``fmr >= 1`` every impostor is admitted: tau sits just below the
    smallest score.
    """
    s = np.sort(np.asarray(impostor_scores, dtype=np.float64).reshape(-1))
    n = len(s)
    if n == 0:
        raise CalibrationError("no impostor scores to calibrate on")
    if not 0.0 < fmr <= 1.0:
        raise CalibrationError(f"fmr must be in (0, 1], got {fmr}")
    if fmr >= 1.0:
        return MatchThreshold(float(np.nextafter(s[0], -np.inf)), fmr, n, provider_id)
    values = np.unique(s)
    above = n - np.searchsorted(s, values, side="right")
    ok = above / n <= fmr
    tau = float(values[np.argmax(ok)])  # the largest value always qualifies
    return MatchThreshold(tau, fmr, n, provider_id)


def leakage_audit(train_embeddings, test_embeddings, percents=(0.1, 1, 5)) -> dict:
    """Mean of the top n% of all train-vs-test cosine scores, per n."""
    train = list(train_embeddings)
    test = list(test_embeddings)
    if not train or not test:
        raise AuditError("leakage audit needs non-empty train and test sets")
    a = stack(train)
    b = stack(test)
    if train[0].provider_id != test[0].provider_id:
        raise ProviderError("train and test embeddings come from different providers")
    scores = np.sort((a @ b.T).reshape(-1))[::-1]
    out = {}
    for pct in percents:
        k = max(1, math.ceil(scores.size * float(pct) / 100.0))
        out[float(pct)] = float(scores[:k].mean())
    return out

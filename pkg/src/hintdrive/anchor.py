"""Retrieval-backed grounding and weight validation.

A deterministic hashing embedder maps text to 256-dim unit vectors; exact
brute-force cosine search retrieves the top-3 knowledge fragments for a
templated context query; `validate_weights` repairs any raw weight triple
onto the probability simplex (the hallucination guard). The corpus and the
embedder are immutable after load, so everything here is thread-safe.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .semantics import SnapshotDigest

log = logging.getLogger(__name__)

EMBED_DIM = 256
TOP_K = 3
N_ATTRIBUTES = 3
ATTRIBUTES = ("safety", "efficiency", "comfort")

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _hash64(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def embed(text: str) -> np.ndarray:
    """Deterministic signed-hashing embedding, L2-normalized.

    Unigrams and adjacent bigrams each add +/-1 to bucket hash % 256 with the
    sign taken from hash bit 63. Texts with no surviving signal map to the
    first basis vector.
    """
    vec = np.zeros(EMBED_DIM)
    tokens = _TOKEN_RE.findall(text.lower())
    grams = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
    for gram in grams:
        h = _hash64(gram)
        vec[h % EMBED_DIM] += -1.0 if (h >> 63) & 1 else 1.0
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec[:] = 0.0
        vec[0] = 1.0
        return vec
    return vec / norm


@dataclass(frozen=True)
class KnowledgeDoc:
    doc_id: str
    text: str
    embedding: np.ndarray


@dataclass(frozen=True)
class HintContext:
    """What a hint provider sees: query, retrieved evidence, digest."""

    query_text: str
    retrieved: tuple[tuple[str, float], ...]
    fragments: tuple[str, ...]
    digest: SnapshotDigest


def load_corpus(path) -> list[KnowledgeDoc]:
    """One fragment per line; ids are zero-padded 1-based line numbers."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            docs.append(KnowledgeDoc(f"{lineno:04d}", text, embed(text)))
    if not docs:
        raise ValueError(f"corpus at {path} is empty")
    return docs


def default_corpus() -> list[KnowledgeDoc]:
    path = resources.files("hintdrive.data").joinpath("corpus.txt")
    with resources.as_file(path) as p:
        return load_corpus(p)


def retrieve_top3(query: np.ndarray, corpus: list[KnowledgeDoc], k: int = TOP_K) -> list[tuple[str, float]]:
    """Exact cosine top-k (descending similarity, ties by ascending id)."""
    if not corpus:
        raise ValueError("cannot retrieve from an empty corpus")
    matrix = np.stack([d.embedding for d in corpus])
    sims = matrix @ query
    ranked = sorted(
        ((corpus[i].doc_id, float(sims[i])) for i in range(len(corpus))),
        key=lambda item: (-item[1], item[0]),
    )
    return ranked[:k]


def validate_weights_detail(raw) -> tuple[np.ndarray, str | None]:
    """Repair a raw weight triple onto the simplex; reason is None if intact.

    Non-finite components or a degenerate (< 1e-6) clamped sum fall back to
    uniform; otherwise components are clamped to [0, 1] first and then
    renormalized.
    """
    arr = np.asarray(raw, dtype=float)
    if arr.shape != (N_ATTRIBUTES,):
        raise ValueError(f"expected {N_ATTRIBUTES} weights, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        return np.full(N_ATTRIBUTES, 1.0 / N_ATTRIBUTES), "non-finite"
    clamped = np.clip(arr, 0.0, 1.0)
    total = float(clamped.sum())
    if total < 1e-6:
        return np.full(N_ATTRIBUTES, 1.0 / N_ATTRIBUTES), "degenerate-sum"
    if np.array_equal(clamped, arr) and abs(total - 1.0) <= 1e-9:
        return arr.copy(), None
    reason = "clamped" if not np.array_equal(clamped, arr) else "renormalized"
    return clamped / total, reason


def validate_weights(raw) -> np.ndarray:
    weights, reason = validate_weights_detail(raw)
    if reason is not None:
        log.debug("repaired weights (%s): %r -> %r", reason, raw, weights.tolist())
    return weights


def build_query(digest: SnapshotDigest, category: str, density: str) -> str:
    """Stable one-line context query for embedding and the remote protocol."""
    if digest.pedestrian_present:
        hazard = "pedestrian"
    elif digest.ttc < 2.0:
        hazard = "low-ttc"
    else:
        hazard = "none"
    nearest_norm = float(min(digest.object_vec[1:]))
    nearest = "inf" if nearest_norm >= 1.0 else f"{nearest_norm * 50.0:.1f}"
    return f"scenario={category} density={density} hazard={hazard} nearest={nearest}"


def make_context(
    digest: SnapshotDigest, category: str, density: str, corpus: list[KnowledgeDoc]
) -> tuple[HintContext, np.ndarray]:
    """Build the provider-facing context and its query embedding."""
    query_text = build_query(digest, category, density)
    query_vec = embed(query_text)
    hits = retrieve_top3(query_vec, corpus)
    by_id = {d.doc_id: d.text for d in corpus}
    ctx = HintContext(
        query_text=query_text,
        retrieved=tuple(hits),
        fragments=tuple(by_id[doc_id] for doc_id, _ in hits),
        digest=digest,
    )
    return ctx, query_vec

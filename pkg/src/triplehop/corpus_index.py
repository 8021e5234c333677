"""Aligned passage/triple indexing with entity adjacency for graph traversal.

The index couples two views of a corpus: text passages and the
(subject, predicate, object) triples extracted from them. Each triple belongs
to exactly one passage; triples that share a normalized head or tail entity
are graph neighbours. Lexical statistics and embedding vectors for both views
are computed once at build time, after which the index is immutable and safe
to share across threads.
"""

from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

FORMAT_VERSION = 1

# Index view names: the passage index and the triple index.
PASSAGES = "passages"
TRIPLES = "triples"

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class IndexBuildError(ValueError):
    """Raised when index inputs violate the build contract."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def normalize_entity(text: str) -> str:
    """Canonical entity key: NFC-normalized, lowercased, whitespace collapsed."""
    return " ".join(unicodedata.normalize("NFC", text).lower().split())


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    body: str


@dataclass(frozen=True)
class Triple:
    id: str
    subject: str
    predicate: str
    object: str
    passage_id: str


def serialize_triple(triple) -> str:
    """Render a triple (indexed or proximal) as "subject predicate object"."""
    return " ".join(
        part.strip() for part in (triple.subject, triple.predicate, triple.object)
    )


@dataclass(frozen=True)
class LexicalView:
    """Per-view term statistics backing BM25 scoring.

    ``ids`` is sorted ascending so positional order doubles as the
    deterministic tie-break order everywhere downstream.
    """

    ids: tuple[str, ...]
    doc_lengths: np.ndarray
    avg_doc_length: float
    doc_freq: dict[str, int]
    postings: dict[str, tuple[tuple[int, int], ...]]

    @classmethod
    def from_texts(cls, ids: Sequence[str], texts: Sequence[str]) -> "LexicalView":
        lengths = np.zeros(len(ids), dtype=np.int64)
        doc_freq: dict[str, int] = {}
        postings: dict[str, list[tuple[int, int]]] = {}
        for pos, text in enumerate(texts):
            tokens = tokenize(text)
            lengths[pos] = len(tokens)
            for term, tf in sorted(Counter(tokens).items()):
                doc_freq[term] = doc_freq.get(term, 0) + 1
                postings.setdefault(term, []).append((pos, tf))
        avg = float(lengths.mean()) if len(ids) else 0.0
        return cls(
            ids=tuple(ids),
            doc_lengths=lengths,
            avg_doc_length=avg,
            doc_freq=doc_freq,
            postings={t: tuple(p) for t, p in postings.items()},
        )


@dataclass(frozen=True)
class VectorView:
    """Per-view embedding matrix; row order matches the ascending id order."""

    ids: tuple[str, ...]
    vectors: np.ndarray

    def position(self, item_id: str) -> int:
        # ids are unique and sorted; linear maps are precomputed in CorpusIndex
        return self.ids.index(item_id)


@dataclass
class CorpusIndex:
    """Immutable joint index over passages and their aligned triples."""

    passages: dict[str, Passage]
    triples: dict[str, Triple]
    alignment: dict[str, str]
    entity_adjacency: dict[str, frozenset[str]]
    lexical: dict[str, LexicalView]
    vectors: dict[str, VectorView]
    embedder: Callable[[str], np.ndarray]
    _vector_pos: dict[str, dict[str, int]] = field(default_factory=dict, repr=False)
    _passage_triples: dict[str, tuple[str, ...]] = field(
        default_factory=dict, repr=False
    )

    def __post_init__(self):
        if not self._vector_pos:
            self._vector_pos = {
                view: {item_id: i for i, item_id in enumerate(vv.ids)}
                for view, vv in self.vectors.items()
            }
        if not self._passage_triples:
            grouped: dict[str, list[str]] = {}
            for tid in sorted(self.triples):
                grouped.setdefault(self.alignment[tid], []).append(tid)
            self._passage_triples = {pid: tuple(tids) for pid, tids in grouped.items()}

    def embed_query(self, text: str) -> np.ndarray:
        return np.asarray(self.embedder(text), dtype=np.float64)

    def item_vector(self, view: str, item_id: str) -> np.ndarray:
        return self.vectors[view].vectors[self._vector_pos[view][item_id]]

    def passage_triples(self, passage_id: str) -> tuple[str, ...]:
        """Ids of the triples aligned to a passage, ascending."""
        if passage_id not in self.passages:
            raise KeyError(f"unknown passage id: {passage_id!r}")
        return self._passage_triples.get(passage_id, ())


def passage_search_text(passage: Passage) -> str:
    """Lexical search text for a passage: title and body together."""
    return f"{passage.title} {passage.body}" if passage.title else passage.body


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    if matrix.size == 0:
        return matrix
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return matrix / safe


def build_index(
    passages: Iterable[Passage],
    triples: Iterable[Triple],
    embedder: Callable[[str], np.ndarray],
) -> CorpusIndex:
    """Build the full index: alignment, adjacency, lexical stats, embeddings.

    Raises IndexBuildError on duplicate ids, dangling passage references, or
    triples with blank fields; the message names the offending record.
    """
    passage_map: dict[str, Passage] = {}
    for p in passages:
        if not p.id:
            raise IndexBuildError("passage with empty id")
        if p.id in passage_map:
            raise IndexBuildError(f"duplicate passage id: {p.id!r}")
        passage_map[p.id] = p

    triple_map: dict[str, Triple] = {}
    alignment: dict[str, str] = {}
    adjacency: dict[str, set[str]] = {}
    for t in triples:
        if not t.id:
            raise IndexBuildError("triple with empty id")
        if t.id in triple_map:
            raise IndexBuildError(f"duplicate triple id: {t.id!r}")
        if t.passage_id not in passage_map:
            raise IndexBuildError(
                f"triple {t.id!r} references unknown passage {t.passage_id!r}"
            )
        if not (t.subject.strip() and t.predicate.strip() and t.object.strip()):
            raise IndexBuildError(f"triple {t.id!r} has a blank field")
        triple_map[t.id] = t
        alignment[t.id] = t.passage_id
        for entity in (t.subject, t.object):
            adjacency.setdefault(normalize_entity(entity), set()).add(t.id)

    passage_ids = tuple(sorted(passage_map))
    triple_ids = tuple(sorted(triple_map))

    lexical = {
        PASSAGES: LexicalView.from_texts(
            passage_ids, [passage_search_text(passage_map[i]) for i in passage_ids]
        ),
        TRIPLES: LexicalView.from_texts(
            triple_ids, [serialize_triple(triple_map[i]) for i in triple_ids]
        ),
    }

    def embed_all(texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, 0), dtype=np.float64)
        rows = [np.asarray(embedder(text), dtype=np.float64) for text in texts]
        return _unit_rows(np.vstack(rows))

    vectors = {
        PASSAGES: VectorView(
            passage_ids, embed_all([passage_map[i].body for i in passage_ids])
        ),
        TRIPLES: VectorView(
            triple_ids, embed_all([serialize_triple(triple_map[i]) for i in triple_ids])
        ),
    }

    return CorpusIndex(
        passages=passage_map,
        triples=triple_map,
        alignment=alignment,
        entity_adjacency={e: frozenset(ids) for e, ids in adjacency.items()},
        lexical=lexical,
        vectors=vectors,
        embedder=embedder,
    )


def get_neighbours(index: CorpusIndex, triple_id: str) -> set[str]:
    """Triples sharing a normalized head or tail entity with ``triple_id``."""
    triple = index.triples.get(triple_id)
    if triple is None:
        raise KeyError(f"unknown triple id: {triple_id!r}")
    linked: set[str] = set()
    for entity in (triple.subject, triple.object):
        linked |= index.entity_adjacency.get(normalize_entity(entity), frozenset())
    linked.discard(triple_id)
    return linked


def triple_to_passage(index: CorpusIndex, triple_id: str) -> str:
    """Source passage id for a triple."""
    if triple_id not in index.alignment:
        raise KeyError(f"unknown triple id: {triple_id!r}")
    return index.alignment[triple_id]


def triples_to_passages(index: CorpusIndex, triple_ids: Iterable[str]) -> list[str]:
    """Map triples to source passages, deduplicating on first occurrence."""
    seen: set[str] = set()
    out: list[str] = []
    for tid in triple_ids:
        pid = triple_to_passage(index, tid)
        if pid not in seen:
            seen.add(pid)
            out.append(pid)
    return out


def serialize_sequence(index: CorpusIndex, triple_ids: Sequence[str]) -> str:
    """Render a triple sequence as "s p o; s p o; ..."."""
    return "; ".join(serialize_triple(index.triples[tid]) for tid in triple_ids)


# ---------------------------------------------------------------------------
# JSONL ingestion and on-disk persistence
# ---------------------------------------------------------------------------

def load_passages_jsonl(path: str | Path) -> list[Passage]:
    """Read passages from JSON Lines: {"id", "title", "text"}."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise IndexBuildError(f"{path}:{lineno}: invalid JSON: {e}") from e
            out.append(
                Passage(
                    id=str(obj["id"]),
                    title=str(obj.get("title", "")),
                    body=str(obj.get("text", "")),
                )
            )
    return out


def load_triples_jsonl(path: str | Path) -> list[Triple]:
    """Read triples from JSON Lines; missing ids become "<passage_id>#<ordinal>"."""
    out = []
    per_passage: Counter = Counter()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise IndexBuildError(f"{path}:{lineno}: invalid JSON: {e}") from e
            pid = str(obj["passage_id"])
            tid = obj.get("id")
            if tid is None:
                tid = f"{pid}#{per_passage[pid]}"
            per_passage[pid] += 1
            out.append(
                Triple(
                    id=str(tid),
                    subject=str(obj["subject"]),
                    predicate=str(obj["predicate"]),
                    object=str(obj["object"]),
                    passage_id=pid,
                )
            )
    return out


def _lexical_arrays(view: LexicalView) -> dict[str, np.ndarray]:
    vocab = sorted(view.postings)
    indptr = np.zeros(len(vocab) + 1, dtype=np.int64)
    doc_positions: list[int] = []
    term_freqs: list[int] = []
    for i, term in enumerate(vocab):
        for pos, tf in view.postings[term]:
            doc_positions.append(pos)
            term_freqs.append(tf)
        indptr[i + 1] = len(doc_positions)
    return {
        "ids": np.asarray(view.ids, dtype=np.str_),
        "doc_lengths": view.doc_lengths,
        "vocab": np.asarray(vocab, dtype=np.str_),
        "doc_freq": np.asarray([view.doc_freq[t] for t in vocab], dtype=np.int64),
        "indptr": indptr,
        "doc_positions": np.asarray(doc_positions, dtype=np.int64),
        "term_freqs": np.asarray(term_freqs, dtype=np.int64),
    }


def _lexical_from_arrays(arrays: dict[str, np.ndarray]) -> LexicalView:
    ids = tuple(str(i) for i in arrays["ids"])
    vocab = [str(t) for t in arrays["vocab"]]
    indptr = arrays["indptr"]
    doc_positions = arrays["doc_positions"]
    term_freqs = arrays["term_freqs"]
    postings = {}
    doc_freq = {}
    for i, term in enumerate(vocab):
        lo, hi = int(indptr[i]), int(indptr[i + 1])
        postings[term] = tuple(
            (int(doc_positions[j]), int(term_freqs[j])) for j in range(lo, hi)
        )
        doc_freq[term] = int(arrays["doc_freq"][i])
    lengths = arrays["doc_lengths"].astype(np.int64)
    avg = float(lengths.mean()) if len(ids) else 0.0
    return LexicalView(ids, lengths, avg, doc_freq, postings)


def save_index(index: CorpusIndex, directory: str | Path) -> None:
    """Persist the index: JSONL inputs, binary sidecars, and a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    with open(directory / "passages.jsonl", "w", encoding="utf-8") as fh:
        for pid in sorted(index.passages):
            p = index.passages[pid]
            fh.write(json.dumps({"id": p.id, "title": p.title, "text": p.body}) + "\n")
    with open(directory / "triples.jsonl", "w", encoding="utf-8") as fh:
        for tid in sorted(index.triples):
            t = index.triples[tid]
            fh.write(
                json.dumps(
                    {
                        "id": t.id,
                        "passage_id": t.passage_id,
                        "subject": t.subject,
                        "predicate": t.predicate,
                        "object": t.object,
                    }
                )
                + "\n"
            )

    np.savez_compressed(
        directory / "embeddings.npz",
        passage_ids=np.asarray(index.vectors[PASSAGES].ids, dtype=np.str_),
        passage_vectors=index.vectors[PASSAGES].vectors,
        triple_ids=np.asarray(index.vectors[TRIPLES].ids, dtype=np.str_),
        triple_vectors=index.vectors[TRIPLES].vectors,
    )
    lex_payload = {}
    for view, prefix in ((PASSAGES, "p"), (TRIPLES, "t")):
        for key, arr in _lexical_arrays(index.lexical[view]).items():
            lex_payload[f"{prefix}_{key}"] = arr
    np.savez_compressed(directory / "lexical.npz", **lex_payload)

    dim = int(index.vectors[PASSAGES].vectors.shape[1]) if index.passages else 0
    manifest = {
        "format_version": FORMAT_VERSION,
        "embedder": getattr(index.embedder, "name", "custom"),
        "dim": dim,
        "passages": len(index.passages),
        "triples": len(index.triples),
    }
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_index(
    directory: str | Path,
    embedder: Callable[[str], np.ndarray] | None = None,
) -> CorpusIndex:
    """Load a persisted index without recomputation.

    The embedder is reconstructed from the manifest name unless one is passed
    explicitly (required for indexes saved with a custom embedding function).
    """
    directory = Path(directory)
    with open(directory / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise IndexBuildError(
            f"unsupported index format version: {manifest.get('format_version')!r}"
        )
    if embedder is None:
        name = manifest.get("embedder", "custom")
        if name == "custom":
            raise IndexBuildError(
                "index was saved with a custom embedder; pass one to load_index"
            )
        from .base_retrieval import resolve_embedder

        embedder = resolve_embedder(name)

    passages = {p.id: p for p in load_passages_jsonl(directory / "passages.jsonl")}
    triples = {t.id: t for t in load_triples_jsonl(directory / "triples.jsonl")}
    alignment = {t.id: t.passage_id for t in triples.values()}
    adjacency: dict[str, set[str]] = {}
    for t in triples.values():
        for entity in (t.subject, t.object):
            adjacency.setdefault(normalize_entity(entity), set()).add(t.id)

    emb = np.load(directory / "embeddings.npz")
    vectors = {
        PASSAGES: VectorView(
            tuple(str(i) for i in emb["passage_ids"]), emb["passage_vectors"]
        ),
        TRIPLES: VectorView(
            tuple(str(i) for i in emb["triple_ids"]), emb["triple_vectors"]
        ),
    }
    lex = np.load(directory / "lexical.npz")
    lexical = {}
    for view, prefix in ((PASSAGES, "p"), (TRIPLES, "t")):
        arrays = {
            key: lex[f"{prefix}_{key}"]
            for key in (
                "ids",
                "doc_lengths",
                "vocab",
                "doc_freq",
                "indptr",
                "doc_positions",
                "term_freqs",
            )
        }
        lexical[view] = _lexical_from_arrays(arrays)

    return CorpusIndex(
        passages=passages,
        triples=triples,
        alignment=alignment,
        entity_adjacency={e: frozenset(ids) for e, ids in adjacency.items()},
        lexical=lexical,
        vectors=vectors,
        embedder=embedder,
    )

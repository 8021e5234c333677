"""Build an aligned passage/triple index and run the three base retrievers.

Everything here is offline and deterministic: the embedding model is a
feature-hashing stand-in, so you can rerun the script and get identical
numbers.
"""

from triplehop import (
    HashEmbedder,
    Passage,
    RankedList,
    Triple,
    bm25_search,
    build_index,
    dense_search,
    get_neighbours,
    hybrid_search,
    rrf_fuse,
)


def section(title):
    print(f"\n{title}\n{'-' * len(title)}")


# A corpus is a list of passages plus the fact triples extracted from them.
# Each triple belongs to exactly one passage.
passages = [
    Passage("p1", "Bremen Cathedral",
            "Bremen Cathedral is a church in Bremen dedicated to St. Peter."),
    Passage("p2", "Bremen",
            "Bremen is a Hanseatic city and part of Germany."),
    Passage("p3", "Alatri Cathedral",
            "Alatri Cathedral is an Italian church dedicated to Saint Paul."),
    Passage("p4", "Lund Cathedral",
            "Lund Cathedral in Sweden is dedicated to Saint Lawrence."),
]
triples = [
    Triple("t1", "Bremen Cathedral", "dedicated to", "St. Peter", "p1"),
    Triple("t2", "Bremen Cathedral", "located in", "Bremen", "p1"),
    Triple("t3", "Bremen", "part of", "Germany", "p2"),
    Triple("t4", "Alatri Cathedral", "dedicated to", "Saint Paul", "p3"),
    Triple("t5", "Lund Cathedral", "dedicated to", "Saint Lawrence", "p4"),
]

index = build_index(passages, triples, HashEmbedder(256))

section("Entity adjacency")
# Triples sharing a head or tail entity are neighbours; this is the graph
# the expansion step will walk in the next demo.
for tid in sorted(index.triples):
    print(f"  {tid}: neighbours = {sorted(get_neighbours(index, tid))}")

section("BM25 over passages (title + body)")
query = "Which country is the city of the cathedral of St. Peter part of?"
for pid, score in bm25_search(index, query, k=4).entries:
    print(f"  {score:8.4f}  {pid}  {index.passages[pid].title}")

section("Dense cosine over passages")
for pid, score in dense_search(index, query, k=4).entries:
    print(f"  {score:8.4f}  {pid}  {index.passages[pid].title}")

section("Reciprocal rank fusion by hand")
# RRF only looks at ranks: score(d) = sum of 1/(60 + rank) over the lists
# that contain d. Rescaling the input scores changes nothing.
left = RankedList((("A", 3.0), ("B", 2.0)))
right = RankedList((("B", 0.9), ("C", 0.5), ("A", 0.1)))
for item, score in rrf_fuse([left, right], 60).entries:
    print(f"  {item}: {score:.6f}")

section("Hybrid = RRF(BM25, dense)")
for pid, score in hybrid_search(index, query, k=4).entries:
    print(f"  {score:8.6f}  {pid}  {index.passages[pid].title}")

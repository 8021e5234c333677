"""Why single-step retrieval misses multi-hop evidence, and how walking the
triple graph recovers it.

The corpus hides a three-passage chain: the question mentions only the first
entity, so a lexical retriever finds just the first hop. Diverse beam search
then follows shared entities across triples, and the flattened beams map back
to the missing passages.
"""

from triplehop import (
    ExpansionConfig,
    HashEmbedder,
    Passage,
    RetrievalConfig,
    Triple,
    base_retrieve,
    build_index,
    diverse_beam_search,
    flatten_beams,
    naive_ge_retrieve,
    triples_to_passages,
)
from triplehop.corpus_index import PASSAGES


def section(title):
    print(f"\n{title}\n{'-' * len(title)}")


passages = [
    Passage("hop1", "opening", "marblehead linksto stonegate in the old ledger."),
    Passage("hop2", "middle", "stonegate linksto ironford in the old ledger."),
    Passage("hop3", "closing", "ironford linksto saltmere in the old ledger."),
    Passage("noise1", "noise", "quartzton touches flintvale on occasion."),
    Passage("noise2", "noise", "flintvale touches ashcombe on occasion."),
]
triples = [
    Triple("h1", "marblehead", "linksto", "stonegate", "hop1"),
    Triple("h2", "stonegate", "linksto", "ironford", "hop2"),
    Triple("h3", "ironford", "linksto", "saltmere", "hop3"),
    Triple("n1", "quartzton", "touches", "flintvale", "noise1"),
    Triple("n2", "flintvale", "touches", "ashcombe", "noise2"),
]
index = build_index(passages, triples, HashEmbedder(256))

retrieval = RetrievalConfig(k=3, retriever="bm25")
question = "where does the trail from marblehead finish"

section("Base retrieval sees only the first hop")
base = base_retrieve(index, question, PASSAGES, retrieval)
print(f"  query: {question!r}")
print(f"  retrieved: {base.ids}   (gold chain: hop1, hop2, hop3)")

section("Diverse beam search from the first-hop triple")
expansion = ExpansionConfig(beam_width=4, max_length=3, gamma=8.0)
beams = diverse_beam_search(index, question, ["h1"], expansion)
for beam in beams:
    chain = " -> ".join(beam.sequence)
    print(f"  score {beam.score:+.4f}  {chain}")

section("Flattened beams map back to passages")
flat = flatten_beams(beams)
print(f"  triples, breadth-first: {flat}")
print(f"  source passages:        {triples_to_passages(index, flat)}")

section("Graph-expanded retrieval (no LLM: every aligned triple seeds the search)")
result = naive_ge_retrieve(index, question, retrieval, expansion)
for pid, score in result.entries:
    print(f"  {score:8.6f}  {pid}")
print("  hop2 and hop3 are now in the ranked list.")

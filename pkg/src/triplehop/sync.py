"""Knowledge synchronisation: LLM reads passages into proximal triples, and
each proximal triple is grounded to its most similar indexed triple.

The grounded triples become the starting nodes for graph expansion.
"""

from __future__ import annotations

from typing import Sequence

from .base_retrieval import RankedList, RetrievalConfig, base_retrieve
from .corpus_index import TRIPLES, CorpusIndex, serialize_triple
from .llm_gateway import LLMGateway, ProximalTriple, parse_facts, serialize_facts


def _passage_ids(passages: RankedList | Sequence[str]) -> list[str]:
    if isinstance(passages, RankedList):
        return passages.ids
    return list(passages)


def format_docs(
    index: CorpusIndex,
    passages: RankedList | Sequence[str],
    cap: int | None = None,
) -> str:
    """Render passages as "title\\nbody" blocks in rank order, capped to ``cap``."""
    ids = _passage_ids(passages)
    if cap is not None:
        ids = ids[:cap]
    blocks = []
    for pid in ids:
        passage = index.passages[pid]
        blocks.append(f"{passage.title}\n{passage.body}")
    return "\n\n".join(blocks)


def reader_variables(
    index: CorpusIndex,
    passages: RankedList | Sequence[str],
    query: str,
    memory: Sequence[ProximalTriple] | None = None,
    cap: int | None = 10,
) -> tuple[str, dict[str, str]]:
    """Template name and variable map for a read call; shared with test fixtures."""
    variables = {"docs": format_docs(index, passages, cap), "query": query}
    if memory is None:
        return "reader", variables
    variables["triples"] = serialize_facts(memory)
    return "reader_with_memory", variables


def read_proximal(
    index: CorpusIndex,
    passages: RankedList | Sequence[str],
    query: str,
    gateway: LLMGateway,
    memory: Sequence[ProximalTriple] | None = None,
    cap: int | None = 10,
) -> list[ProximalTriple]:
    """Ask the LLM to summarise the passages into supporting fact triples.

    With a memory the read is conditioned on the accumulated facts; an empty
    or fact-free completion yields an empty list.
    """
    template, variables = reader_variables(index, passages, query, memory, cap)
    return parse_facts(gateway.complete(template, variables))


def triple_link(
    index: CorpusIndex,
    proximal: ProximalTriple,
    config: RetrievalConfig,
) -> str | None:
    """Ground a proximal triple to the most similar indexed triple, if any."""
    result = base_retrieve(index, serialize_triple(proximal), TRIPLES, config, k=1)
    if not result.entries:
        return None
    return result.entries[0][0]


def locate_initial_nodes(
    index: CorpusIndex,
    proximals: Sequence[ProximalTriple],
    config: RetrievalConfig,
) -> list[str]:
    """Link every proximal triple; drop failures, dedupe keeping first occurrence."""
    seen: set[str] = set()
    out: list[str] = []
    for proximal in proximals:
        linked = triple_link(index, proximal, config)
        if linked is None or linked in seen:
            continue
        seen.add(linked)
        out.append(linked)
    return out

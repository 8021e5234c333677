"""Multi-step retrieval agent.

Each iteration runs graph-expanded retrieval for the current query, reads the
retrieved passages into the gist memory, and asks the reasoner whether the
original question is now answerable. If not, the query is rewritten and the
loop continues. After termination every memorised fact is linked back to
passages, and all per-iteration and linked lists are fused into one ranking.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .base_retrieval import RankedList, RetrievalConfig, base_retrieve, rrf_fuse
from .corpus_index import (
    PASSAGES,
    TRIPLES,
    CorpusIndex,
    serialize_triple,
    triple_to_passage,
)
from .graph_expansion import Beam, ExpansionConfig, sync_ge_detail
from .llm_gateway import (
    LLMGateway,
    ProximalTriple,
    ReasonOutcome,
    parse_next_question,
    parse_reason,
    serialize_facts,
)
from .sync import read_proximal


class AgentRunError(RuntimeError):
    """A step failed mid-run; carries the trace up to the failure."""

    def __init__(self, message: str, trace: "AgentTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class GistEntry:
    triple: ProximalTriple
    iteration: int


class GistMemory:
    """Append-only array of proximal triples accumulated across iterations."""

    def __init__(self):
        self._entries: list[GistEntry] = []

    def extend(self, triples: Sequence[ProximalTriple], iteration: int) -> None:
        if self._entries and iteration < self._entries[-1].iteration:
            raise ValueError("iteration numbers must be non-decreasing")
        for triple in triples:
            self._entries.append(GistEntry(triple, iteration))

    @property
    def entries(self) -> tuple[GistEntry, ...]:
        return tuple(self._entries)

    def facts(self) -> tuple[ProximalTriple, ...]:
        return tuple(entry.triple for entry in self._entries)

    def unique_facts(self) -> list[ProximalTriple]:
        """Distinct facts in first-occurrence order (for the link fan-out)."""
        seen: set[tuple[str, str, str]] = set()
        out: list[ProximalTriple] = []
        for entry in self._entries:
            key = (entry.triple.subject, entry.triple.predicate, entry.triple.object)
            if key not in seen:
                seen.add(key)
                out.append(entry.triple)
        return out

    def serialize(self) -> str:
        return serialize_facts(self.facts())

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class AgentConfig:
    retrieval: RetrievalConfig = RetrievalConfig()
    expansion: ExpansionConfig = ExpansionConfig()
    max_iterations: int = 4
    per_iteration_k: int = 10
    passage_link_k: int = 15
    reuse_first_read: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.per_iteration_k < 1:
            raise ValueError("per_iteration_k must be >= 1")
        if self.passage_link_k < 1:
            raise ValueError("passage_link_k must be >= 1")

    def to_dict(self) -> dict:
        return {
            "retrieval": asdict(self.retrieval),
            "expansion": asdict(self.expansion),
            "max_iterations": self.max_iterations,
            "per_iteration_k": self.per_iteration_k,
            "passage_link_k": self.passage_link_k,
            "reuse_first_read": self.reuse_first_read,
        }


@dataclass
class IterationRecord:
    iteration: int
    query: str
    base: RankedList
    proximals: tuple[ProximalTriple, ...]
    initial_nodes: tuple[str, ...]
    beams: tuple[Beam, ...]
    expanded: RankedList
    gist_additions: tuple[ProximalTriple, ...]
    reason: ReasonOutcome
    rewritten_query: str | None
    rewrite_fallback: bool
    expansion_stopped_at: int | None

    def to_dict(self) -> dict:
        def triple_list(triples):
            return [[t.subject, t.predicate, t.object] for t in triples]

        return {
            "iteration": self.iteration,
            "query": self.query,
            "base": self.base.to_dict(),
            "proximals": triple_list(self.proximals),
            "initial_nodes": list(self.initial_nodes),
            "beams": [
                {"score": beam.score, "sequence": list(beam.sequence)}
                for beam in self.beams
            ],
            "expanded": self.expanded.to_dict(),
            "gist_additions": triple_list(self.gist_additions),
            "reason": {
                "answerable": self.reason.answerable,
                "payload": self.reason.payload,
            },
            "rewritten_query": self.rewritten_query,
            "rewrite_fallback": self.rewrite_fallback,
            "expansion_stopped_at": self.expansion_stopped_at,
        }


@dataclass
class AgentTrace:
    query: str
    iterations: list[IterationRecord]
    final: RankedList
    termination_cause: str
    answer: str | None
    config: dict
    tokens: dict = field(default_factory=dict)
    # memory facts deduplicated for the passage-link fan-out; the raw
    # (possibly repeating) accumulation lives in the iteration records
    linked_facts: tuple[ProximalTriple, ...] = ()

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "iterations": [record.to_dict() for record in self.iterations],
            "final": self.final.to_dict(),
            "termination_cause": self.termination_cause,
            "answer": self.answer,
            "config": self.config,
            "tokens": self.tokens,
            "linked_facts": [
                [t.subject, t.predicate, t.object] for t in self.linked_facts
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def reason_step(memory: GistMemory, query: str, gateway: LLMGateway) -> ReasonOutcome:
    """Ask whether the memorised facts answer the original question."""
    raw = gateway.complete(
        "reasoner", {"query": query, "triples": memory.serialize()}
    )
    return parse_reason(raw)


def rewrite_step(
    memory: GistMemory, query: str, reason_text: str, gateway: LLMGateway
) -> tuple[str, bool]:
    """Produce the next query; falls back to the original when the reply is blank.

    Returns (next_query, used_fallback).
    """
    raw = gateway.complete(
        "rewriter",
        {"query": query, "triples": memory.serialize(), "reason": reason_text},
    )
    next_query = parse_next_question(raw)
    if not next_query:
        return query, True
    return next_query, False


def passage_link(
    index: CorpusIndex,
    triple: ProximalTriple,
    retrieval: RetrievalConfig,
    k: int = 15,
) -> RankedList:
    """Link a fact to passages: fuse passage-view and triple-view retrieval.

    The triple-view list is mapped to source passages (first occurrence wins)
    before fusion.
    """
    query = serialize_triple(triple)
    passage_list = base_retrieve(index, query, PASSAGES, retrieval, k=k)
    triple_list = base_retrieve(index, query, TRIPLES, retrieval, k=k)
    seen: set[str] = set()
    mapped_entries = []
    for tid, score in triple_list.entries:
        pid = triple_to_passage(index, tid)
        if pid in seen:
            continue
        seen.add(pid)
        mapped_entries.append((pid, score))
    mapped = RankedList(tuple(mapped_entries), provenance="triples->passages")
    return rrf_fuse([passage_list, mapped], retrieval.rrf_constant).truncated(k)


def run_agent(
    index: CorpusIndex,
    query: str,
    cfg: AgentConfig,
    gateway: LLMGateway,
) -> AgentTrace:
    """Run the full multi-step loop and return the complete trace."""
    memory = GistMemory()
    records: list[IterationRecord] = []
    iteration_lists: list[RankedList] = []
    current_query = query
    cause = "max_iterations"
    answer: str | None = None

    def partial_trace() -> AgentTrace:
        return AgentTrace(
            query=query,
            iterations=records,
            final=RankedList(()),
            termination_cause="error",
            answer=None,
            config=cfg.to_dict(),
            tokens=gateway.ledger.to_dict(),
        )

    try:
        for n in range(1, cfg.max_iterations + 1):
            gateway.set_iteration(n)
            detail = sync_ge_detail(
                index,
                current_query,
                cfg.retrieval,
                cfg.expansion,
                gateway,
                memory=None,
                chunk_cap=cfg.per_iteration_k,
            )
            iteration_lists.append(detail.fused)

            if n == 1 and cfg.reuse_first_read:
                additions = list(detail.proximals)
            else:
                prior = memory.facts() if n >= 2 else None
                additions = read_proximal(
                    index,
                    detail.fused,
                    query,
                    gateway,
                    memory=prior,
                    cap=cfg.per_iteration_k,
                )
            memory.extend(additions, n)

            outcome = reason_step(memory, query, gateway)
            rewritten: str | None = None
            fallback = False
            if outcome.answerable:
                cause = "answerable"
                answer = outcome.payload
            elif n < cfg.max_iterations:
                rewritten, fallback = rewrite_step(
                    memory, query, outcome.payload, gateway
                )

            records.append(
                IterationRecord(
                    iteration=n,
                    query=current_query,
                    base=detail.base,
                    proximals=detail.proximals,
                    initial_nodes=detail.initial_nodes,
                    beams=detail.beams,
                    expanded=detail.fused,
                    gist_additions=tuple(additions),
                    reason=outcome,
                    rewritten_query=rewritten,
                    rewrite_fallback=fallback,
                    expansion_stopped_at=detail.expansion_stopped_at,
                )
            )
            if outcome.answerable:
                break
            if rewritten is not None:
                current_query = rewritten
    except Exception as e:
        raise AgentRunError(str(e), partial_trace()) from e
    finally:
        gateway.set_iteration(0)

    linked_facts = memory.unique_facts()
    link_lists = [
        passage_link(index, triple, cfg.retrieval, cfg.passage_link_k)
        for triple in linked_facts
    ]
    final = rrf_fuse([*link_lists, *iteration_lists], cfg.retrieval.rrf_constant)
    return AgentTrace(
        query=query,
        iterations=records,
        final=final,
        termination_cause=cause,
        answer=answer,
        config=cfg.to_dict(),
        tokens=gateway.ledger.to_dict(),
        linked_facts=tuple(linked_facts),
    )

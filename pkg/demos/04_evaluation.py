"""Metric primitives and a batch evaluation run.

Builds a corpus of six hidden three-passage chains plus distractor passages,
then compares plain lexical retrieval against graph-expanded retrieval on
fractional recall@k. No network, no model: the reader is scripted.
"""

import re

from triplehop import (
    EvalQuestion,
    ExpansionConfig,
    HashEmbedder,
    Passage,
    RetrievalConfig,
    Triple,
    build_index,
    exact_match,
    f1_answer,
    normalize_answer,
    recall_at_k,
    run_eval,
)
from triplehop.eval_harness import RetrieverSystem
from triplehop.llm_gateway import CompletionResult, whitespace_tokens


def section(title):
    print(f"\n{title}\n{'-' * len(title)}")


section("Answer metrics")
print("  normalize:", normalize_answer("The Arizona Cardinals."))
print("  exact match:", exact_match("august 25 1963", ["August 25, 1963."]))
print("  token F1  :", f1_answer("arizona cardinals team", ["arizona cardinals"]))

section("Recall@k")
retrieved = ["P9", "P1", "P4", "P2"]
gold = {"P1", "P2", "P7"}
for k in (1, 2, 4, 8):
    print(f"  R@{k} = {recall_at_k(retrieved, gold, k):.3f}")

# --- build the chain corpus -------------------------------------------------
passages, triples, questions = [], [], []
for i in range(1, 7):
    a, b, c, d = (f"ent{i}{ch}" for ch in "abcd")
    passages += [
        Passage(f"q{i}p1", f"ledger {i} opening", f"{a} linksto {b} in ledger one."),
        Passage(f"q{i}p2", f"ledger {i} middle", f"{b} linksto {c} in ledger two."),
        Passage(f"q{i}p3", f"ledger {i} closing", f"{c} linksto {d} in ledger three."),
    ]
    triples += [
        Triple(f"q{i}t1", a, "linksto", b, f"q{i}p1"),
        Triple(f"q{i}t2", b, "linksto", c, f"q{i}p2"),
        Triple(f"q{i}t3", c, "linksto", d, f"q{i}p3"),
    ]
    questions.append(EvalQuestion(
        id=f"q{i}",
        question=f"where does the trail from {a} finish",
        gold_passage_ids=frozenset({f"q{i}p1", f"q{i}p2", f"q{i}p3"}),
        gold_answers=(d,),
    ))
for j in range(1, 13):
    body = " ".join(f"dz{j}x{t} touches dz{j}x{t + 1}." for t in range(3))
    passages.append(Passage(f"d{j}p", f"noise {j}", body))
    triples += [
        Triple(f"d{j}t{t}", f"dz{j}x{t}", "touches", f"dz{j}x{t + 1}", f"d{j}p")
        for t in range(3)
    ]

index = build_index(passages, triples, HashEmbedder(128))
retrieval = RetrievalConfig(k=5, retriever="bm25")
expansion = ExpansionConfig(beam_width=10, max_length=3, gamma=20.0)


class ScriptBackend:
    def complete(self, request):
        match = re.search(r"ent(\d+)a", request.variables["query"])
        i = match.group(1)
        text = f'Facts: ("ent{i}a", "linksto", "ent{i}b")'
        return CompletionResult(
            text, whitespace_tokens(request.prompt), whitespace_tokens(text)
        )


section("Batch evaluation: base retrieval vs graph expansion")
for label, system in (
    ("base", RetrieverSystem(index, retrieval, mode="base")),
    ("naive-ge", RetrieverSystem(index, retrieval, mode="naive-ge",
                                 expansion=expansion)),
    ("sync-ge", RetrieverSystem(index, retrieval, mode="sync-ge",
                                expansion=expansion, backend=ScriptBackend())),
):
    report = run_eval(questions, system, cutoffs=(5, 10, 15), workers=2)
    recalls = "  ".join(
        f"R@{k}={report.aggregates[f'recall@{k}']:.3f}" for k in (5, 10, 15)
    )
    print(f"  {label:9s} {recalls}")

section("Full report table for the graph-expanded run")
system = RetrieverSystem(
    index, retrieval, mode="sync-ge", expansion=expansion, backend=ScriptBackend()
)
print(run_eval(questions, system, cutoffs=(5, 10, 15), workers=2).to_table())

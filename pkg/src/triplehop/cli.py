"""Command-line driver: index building, single-shot retrieval, agent runs,
and batch evaluation.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .agent import run_agent
from .base_retrieval import base_retrieve, resolve_embedder
from .config import EngineConfig, load_engine_config, make_gateway
from .corpus_index import (
    PASSAGES,
    Triple,
    build_index,
    load_index,
    load_passages_jsonl,
    load_triples_jsonl,
    save_index,
)
from .eval_harness import (
    AgentSystem,
    RetrieverSystem,
    load_questions_jsonl,
    run_eval,
)
from .graph_expansion import naive_ge_detail, sync_ge_detail
from .llm_gateway import GatewayError, parse_extraction

log = logging.getLogger(__name__)

RETRIEVE_MODES = ("base", "naive-ge", "sync-ge")
EVAL_SYSTEMS = RETRIEVE_MODES + ("agent",)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="triplehop", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p_index = sub.add_parser("index", help="index management")
    index_sub = p_index.add_subparsers(dest="index_command")
    p_build = index_sub.add_parser("build", help="build and persist an index")
    p_build.add_argument("--passages", required=True, help="passages JSONL")
    p_build.add_argument("--triples", help="precomputed triples JSONL")
    p_build.add_argument(
        "--extract-llm", action="store_true",
        help="extract triples from passages with the configured LLM",
    )
    p_build.add_argument("--out", required=True, help="output index directory")
    p_build.add_argument("--config", help="engine config file")
    p_build.set_defaults(func=cmd_index_build)

    p_retrieve = sub.add_parser("retrieve", help="single-shot retrieval")
    p_retrieve.add_argument("--index", required=True)
    p_retrieve.add_argument("--query", required=True)
    p_retrieve.add_argument("--mode", choices=RETRIEVE_MODES, default="base")
    p_retrieve.add_argument("--k", type=int)
    p_retrieve.add_argument("--config")
    p_retrieve.set_defaults(func=cmd_retrieve)

    p_agent = sub.add_parser("agent", help="multi-step agent run")
    p_agent.add_argument("--index", required=True)
    p_agent.add_argument("--query", required=True)
    p_agent.add_argument("--config")
    p_agent.add_argument("--trace", help="write the full trace JSON here")
    p_agent.set_defaults(func=cmd_agent)

    p_eval = sub.add_parser("eval", help="batch evaluation")
    p_eval.add_argument("--index", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--system", choices=EVAL_SYSTEMS, default="base")
    p_eval.add_argument("--config")
    p_eval.add_argument("--report", help="write the report JSON here")
    p_eval.set_defaults(func=cmd_eval)

    return parser


def _load_config(args) -> EngineConfig:
    return load_engine_config(getattr(args, "config", None))


def cmd_index_build(args) -> int:
    cfg = _load_config(args)
    passages = load_passages_jsonl(args.passages)
    if args.triples and args.extract_llm:
        raise UsageError("--triples and --extract-llm are mutually exclusive")
    if args.triples:
        triples = load_triples_jsonl(args.triples)
    elif args.extract_llm:
        triples = _extract_triples(passages, cfg)
    else:
        triples = []
    embedder = resolve_embedder(cfg.embedder)
    index = build_index(passages, triples, embedder)
    save_index(index, args.out)
    print(
        f"indexed {len(index.passages)} passages, {len(index.triples)} triples "
        f"-> {args.out}"
    )
    return 0


def _extract_triples(passages, cfg: EngineConfig) -> list[Triple]:
    gateway = make_gateway(cfg.llm)
    triples: list[Triple] = []
    for passage in passages:
        try:
            raw = gateway.complete(
                "triple_extraction",
                {"wiki_title": passage.title, "passage": passage.body},
            )
            extracted = parse_extraction(raw)
        except GatewayError as e:
            log.warning("triple extraction failed for passage %s: %s", passage.id, e)
            extracted = []
        if not extracted:
            log.info("passage %s indexed with zero triples", passage.id)
        for ordinal, (subject, predicate, target) in enumerate(extracted):
            triples.append(
                Triple(
                    id=f"{passage.id}#{ordinal}",
                    subject=subject,
                    predicate=predicate,
                    object=target,
                    passage_id=passage.id,
                )
            )
    return triples


def _print_ranked(index, ranked) -> None:
    rows = [["rank", "score", "passage", "title"]]
    for rank, (pid, score) in enumerate(ranked.entries, start=1):
        rows.append([str(rank), f"{score:.6f}", pid, index.passages[pid].title])
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    for row in rows:
        print("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())


def cmd_retrieve(args) -> int:
    cfg = _load_config(args)
    if args.k is not None:
        cfg = replace(cfg, retrieval=replace(cfg.retrieval, k=args.k))
    index = load_index(args.index)
    if args.mode == "base":
        ranked = base_retrieve(index, args.query, PASSAGES, cfg.retrieval)
    elif args.mode == "naive-ge":
        ranked = naive_ge_detail(
            index, args.query, cfg.retrieval, cfg.expansion
        ).fused
    else:
        gateway = make_gateway(cfg.llm)
        ranked = sync_ge_detail(
            index, args.query, cfg.retrieval, cfg.expansion, gateway,
            chunk_cap=cfg.agent.per_iteration_k,
        ).fused
    _print_ranked(index, ranked)
    return 0


def cmd_agent(args) -> int:
    cfg = _load_config(args)
    index = load_index(args.index)
    gateway = make_gateway(cfg.llm)
    trace = run_agent(index, args.query, cfg.agent_config(), gateway)
    _print_ranked(index, trace.final.truncated(cfg.retrieval.k))
    if trace.answer is not None:
        print(f"answer: {trace.answer}")
    print(f"termination: {trace.termination_cause} "
          f"after {len(trace.iterations)} iteration(s)")
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(trace.to_json())
            fh.write("\n")
        print(f"trace written to {args.trace}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    index = load_index(args.index)
    questions = load_questions_jsonl(args.dataset)
    backend = None
    if args.system in ("sync-ge", "agent") or cfg.eval.qa:
        backend = make_gateway(cfg.llm).backend
    if args.system == "agent":
        system = AgentSystem(
            index, cfg.agent_config(), backend,
            qa_fallback=cfg.eval.qa, qa_k=cfg.eval.qa_k,
        )
    else:
        system = RetrieverSystem(
            index,
            cfg.retrieval,
            mode=args.system,
            expansion=cfg.expansion,
            backend=backend,
            qa=cfg.eval.qa,
            chunk_cap=cfg.agent.per_iteration_k,
            qa_k=cfg.eval.qa_k,
        )
    report = run_eval(
        questions,
        system,
        cutoffs=cfg.eval.cutoffs,
        workers=cfg.eval.workers,
        binary_recall=cfg.eval.binary_recall,
        config_snapshot=cfg.to_dict(),
    )
    print(report.to_table())
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
            fh.write("\n")
        print(f"report written to {args.report}")
    return 0


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # argparse -h/--help
        return int(e.code or 0)
    func = getattr(args, "func", None)
    if func is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return int(func(args) or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    sys.exit(dispatch())

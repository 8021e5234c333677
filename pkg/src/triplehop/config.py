"""Engine configuration: INI-style file with sections retrieval, expansion,
agent, llm, and eval. Values from the file override the built-in defaults,
which match the recommended hyperparameters (beam width 10, expansion length
2, 100 neighbours per beam, gamma = 2x beam width, 4 agent iterations, 10
chunks per read, temperature 0).
"""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .agent import AgentConfig
from .base_retrieval import RetrievalConfig
from .graph_expansion import ExpansionConfig
from .llm_gateway import ChatBackend, HttpChatBackend, LLMGateway, ScriptedBackend


@dataclass(frozen=True)
class AgentOptions:
    max_iterations: int = 4
    per_iteration_k: int = 10
    passage_link_k: int = 15
    reuse_first_read: bool = False


@dataclass(frozen=True)
class LLMConfig:
    backend: str = "scripted"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "LLM_API_KEY"
    temperature: float = 0.0
    max_retries: int = 3
    max_output_tokens: int = 1024
    fixtures: str = ""
    in_flight_limit: int = 4
    timeout: float = 60.0


@dataclass(frozen=True)
class EvalSettings:
    cutoffs: tuple[int, ...] = (5, 10, 15)
    workers: int = 4
    binary_recall: bool = False
    qa: bool = False
    qa_k: int = 5


@dataclass(frozen=True)
class EngineConfig:
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    expansion: ExpansionConfig = field(default_factory=ExpansionConfig)
    agent: AgentOptions = field(default_factory=AgentOptions)
    llm: LLMConfig = field(default_factory=LLMConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    embedder: str = "hash:256"

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            retrieval=self.retrieval,
            expansion=self.expansion,
            max_iterations=self.agent.max_iterations,
            per_iteration_k=self.agent.per_iteration_k,
            passage_link_k=self.agent.passage_link_k,
            reuse_first_read=self.agent.reuse_first_read,
        )

    def to_dict(self) -> dict:
        return {
            "retrieval": asdict(self.retrieval),
            "expansion": asdict(self.expansion),
            "agent": asdict(self.agent),
            "llm": asdict(self.llm),
            "eval": {**asdict(self.eval), "cutoffs": list(self.eval.cutoffs)},
            "embedder": self.embedder,
        }


class ConfigError(ValueError):
    """Malformed config file or unknown key."""


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False,
                "yes": True, "no": False}


def _coerce(raw: str, target_type, key: str):
    if target_type is bool:
        value = _BOOL_VALUES.get(raw.strip().lower())
        if value is None:
            raise ConfigError(f"invalid boolean for {key}: {raw!r}")
        return value
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is str:
        return raw.strip()
    if target_type == tuple[int, ...]:
        return tuple(int(part) for part in raw.replace(",", " ").split())
    raise ConfigError(f"unsupported config type for {key}")


def _section(parser: configparser.ConfigParser, name: str, cls, defaults):
    if not parser.has_section(name):
        return defaults
    known = _FIELD_TYPES[cls]
    values = {}
    for key, raw in parser.items(name):
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in section [{name}]")
        values[key] = _coerce(raw, known[key], f"[{name}] {key}")
    return cls(**{**asdict(defaults), **values})


_FIELD_TYPES = {
    RetrievalConfig: {
        "k": int, "retriever": str, "bm25_k1": float, "bm25_b": float,
        "rrf_constant": int,
    },
    ExpansionConfig: {
        "beam_width": int, "max_length": int, "neighbour_cap": int,
        "gamma": float, "keep_stranded_beams": bool,
    },
    AgentOptions: {
        "max_iterations": int, "per_iteration_k": int, "passage_link_k": int,
        "reuse_first_read": bool,
    },
    LLMConfig: {
        "backend": str, "endpoint": str, "model": str, "api_key_env": str,
        "temperature": float, "max_retries": int, "max_output_tokens": int,
        "fixtures": str, "in_flight_limit": int, "timeout": float,
    },
    EvalSettings: {
        "cutoffs": tuple[int, ...], "workers": int, "binary_recall": bool,
        "qa": bool, "qa_k": int,
    },
}


def load_engine_config(path: str | Path | None = None) -> EngineConfig:
    """Read an engine config file; absent file sections keep their defaults."""
    defaults = EngineConfig()
    if path is None:
        return defaults
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")

    embedder = defaults.embedder
    if parser.has_section("retrieval") and parser.has_option("retrieval", "embedder"):
        embedder = parser.get("retrieval", "embedder").strip()
        parser.remove_option("retrieval", "embedder")

    for section in parser.sections():
        if section not in ("retrieval", "expansion", "agent", "llm", "eval"):
            raise ConfigError(f"unknown config section: [{section}]")

    return EngineConfig(
        retrieval=_section(parser, "retrieval", RetrievalConfig, defaults.retrieval),
        expansion=_section(parser, "expansion", ExpansionConfig, defaults.expansion),
        agent=_section(parser, "agent", AgentOptions, defaults.agent),
        llm=_section(parser, "llm", LLMConfig, defaults.llm),
        eval=_section(parser, "eval", EvalSettings, defaults.eval),
        embedder=embedder,
    )


def make_backend(cfg: LLMConfig) -> ChatBackend:
    """Construct the chat backend named by the config."""
    if cfg.backend == "scripted":
        if cfg.fixtures:
            return ScriptedBackend.from_jsonl(cfg.fixtures)
        return ScriptedBackend()
    if cfg.backend == "http":
        if not cfg.endpoint or not cfg.model:
            raise ConfigError("http backend requires endpoint and model")
        return HttpChatBackend(
            cfg.endpoint,
            cfg.model,
            api_key=os.environ.get(cfg.api_key_env) or None,
            max_retries=cfg.max_retries,
            timeout=cfg.timeout,
            in_flight_limit=cfg.in_flight_limit,
        )
    raise ConfigError(f"unknown llm backend: {cfg.backend!r}")


def make_gateway(cfg: LLMConfig) -> LLMGateway:
    return LLMGateway(
        make_backend(cfg),
        temperature=cfg.temperature,
        max_output_tokens=cfg.max_output_tokens,
    )

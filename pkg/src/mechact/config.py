"""Pipeline configuration: schema-validated JSON plus factories that turn
config blocks into live backends, embedders, and docstores.

Secrets never live in config files; HTTP blocks name the environment
variable holding the key (api_key_env) and the key is read at request time.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

from .environment import (
    DeterministicEmbedder,
    Embedder,
    FixtureDocstore,
    MemoryStore,
    RemoteEmbedder,
    WikipediaDocstore,
)
from .errors import ConfigError
from .explorer import (
    DEFAULT_INFRA_FAILURE_THRESHOLD,
    DEFAULT_TURN_BUDGET,
    DemoSet,
    EpisodeEnvironment,
)
from .gateway import Backend, Cassette, HttpBackend, SamplingParams, ScriptedBackend
from .model import Domain, Mechanism
from .objectives import KtoConfig


@lru_cache(maxsize=1)
def config_schema() -> dict:
    text = resources.files("mechact.schemas").joinpath("config.schema.json").read_text("utf-8")
    return json.loads(text)


def validate_config(data: dict, source: str = "<config>") -> dict:
    try:
        jsonschema.validate(data, config_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{source}: {exc.message} (at {where})") from exc
    return data


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return validate_config(data, source=str(path))


def _resolve(base_dir: Path | None, path: str) -> Path:
    p = Path(path)
    if base_dir is not None and not p.is_absolute():
        return base_dir / p
    return p


def build_backend(spec: dict, base_dir: Path | None = None) -> Backend:
    kind = spec.get("kind")
    if kind == "scripted":
        return ScriptedBackend.from_config(spec, base_dir)
    if kind == "http":
        cassette = None
        cas_spec = spec.get("cassette")
        if cas_spec:
            cassette = Cassette(
                _resolve(base_dir, cas_spec["path"]), record=cas_spec.get("record", False)
            )
        return HttpBackend(
            endpoint=spec["endpoint"],
            model=spec["model"],
            api_key_env=spec.get("api_key_env"),
            timeout=spec.get("timeout", 60.0),
            max_retries=spec.get("max_retries", 3),
            backoff_base=spec.get("backoff_base", 0.5),
            max_concurrency=spec.get("max_concurrency", 8),
            cassette=cassette,
        )
    raise ConfigError(f"unknown backend kind {kind!r}")


def build_embedder(spec: dict | None) -> Embedder:
    if spec is None:
        return DeterministicEmbedder()
    kind = spec.get("kind")
    if kind == "deterministic":
        return DeterministicEmbedder(dim=spec.get("dim", 256))
    if kind == "remote":
        return RemoteEmbedder(
            endpoint=spec["endpoint"],
            model=spec["model"],
            api_key_env=spec.get("api_key_env"),
            dim=spec.get("dim", 1536),
            timeout=spec.get("timeout", 60.0),
        )
    raise ConfigError(f"unknown embedder kind {kind!r}")


def build_docstore(spec: dict | None, base_dir: Path | None = None):
    if spec is None:
        return None
    kind = spec.get("kind")
    if kind == "fixture":
        return FixtureDocstore.load(_resolve(base_dir, spec["path"]))
    if kind == "wikipedia":
        kwargs = {}
        if "endpoint" in spec:
            kwargs["endpoint"] = spec["endpoint"]
        if "timeout" in spec:
            kwargs["timeout"] = spec["timeout"]
        return WikipediaDocstore(**kwargs)
    raise ConfigError(f"unknown docstore kind {kind!r}")


def build_sampling(spec: dict | None) -> SamplingParams:
    if not spec:
        return SamplingParams()
    return SamplingParams(
        temperature=spec.get("temperature", 0.0),
        top_p=spec.get("top_p", 1.0),
        max_tokens=spec.get("max_tokens", 512),
        seed=spec.get("seed"),
    )


def build_kto(spec: dict | None) -> KtoConfig:
    if not spec:
        return KtoConfig()
    return KtoConfig(
        beta=spec.get("beta", 0.1),
        lambda_pos=spec.get("lambda_pos", 1.0),
        lambda_neg=spec.get("lambda_neg", 1.0),
        z0_mode=spec.get("z0_mode", "supplied"),
        z0=spec.get("z0", 0.0),
    )


def build_demos(config: dict, base_dir: Path | None = None) -> DemoSet:
    demos_dir = config.get("demos_dir")
    if demos_dir:
        return DemoSet.load_dir(_resolve(base_dir, demos_dir))
    return DemoSet.load_default()


def mechanisms_from(config: dict) -> list[Mechanism]:
    labels = config.get("mechanisms")
    if not labels:
        return Mechanism.ordered()
    return sorted((Mechanism.from_label(l) for l in labels), key=lambda m: m.index)


def build_environment(config: dict, base_dir: Path | None = None) -> EpisodeEnvironment:
    """Environment for episodes under this config. A configured memory_store
    path must exist (memory-build creates it); absent key means no episodic
    memory and retrieval returns the no-case sentinel."""
    domain = Domain(config["domain"])
    backend_block = config.get("backend", {})
    critic_spec = backend_block.get("critic")
    memory_store = None
    embedder = None
    store_path = config.get("memory_store")
    if store_path:
        resolved = _resolve(base_dir, store_path)
        if not resolved.exists():
            raise ConfigError(f"memory store {resolved} not found; run memory-build first")
        memory_store = MemoryStore.load(resolved)
        embedder = build_embedder(config.get("embedder"))
    return EpisodeEnvironment(
        domain=domain,
        docstore=build_docstore(config.get("docstore"), base_dir),
        memory_store=memory_store,
        embedder=embedder,
        critic=build_backend(critic_spec, base_dir) if critic_spec else None,
    )


def turn_budget_from(config: dict) -> int:
    return config.get("turn_budget", DEFAULT_TURN_BUDGET)


def concurrency_from(config: dict) -> int:
    return config.get("concurrency", 8)


def infra_threshold_from(config: dict) -> float:
    return config.get("infra_failure_threshold", DEFAULT_INFRA_FAILURE_THRESHOLD)

"""Flat TOML-style configuration with flag overrides.

The config file is `key = value` lines with optional [section] headers
(keys under a section are addressed as section.key). Values parse as
booleans, ints, floats, or (optionally quoted) strings. CLI flags always
win over file values.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import IngestError, ValidationError
from .features import ExternalEmbeddingClient, HashingEmbedder, PreprocessConfig
from .regressor import KernelConfig


@dataclass(frozen=True)
class AuditConfig:
    data_dir: str = "auditdata"
    provider: str = "hash"
    dimension: int = 512
    endpoint: str = ""
    api_key_env: str = ""
    kernel: str = "svr"
    c: float = 1.0
    epsilon: float = 0.1
    bandwidth: float | None = None
    folds: int = 10
    seed: int = 0
    chunk_size: int = 64

    def fingerprint(self) -> str:
        payload = {f.name: getattr(self, f.name) for f in fields(self)}
        canonical = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# config-file keys may use either flat or section.key addressing
_KEY_ALIASES = {
    "embedding.provider": "provider",
    "embedding.dimension": "dimension",
    "embedding.endpoint": "endpoint",
    "embedding.api_key_env": "api_key_env",
    "embedding.chunk_size": "chunk_size",
    "regressor.kernel": "kernel",
    "regressor.c": "c",
    "regressor.epsilon": "epsilon",
    "regressor.bandwidth": "bandwidth",
    "regressor.folds": "folds",
    "run.seed": "seed",
    "run.data_dir": "data_dir",
}


def _parse_value(raw: str):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("none", "null"):
        return None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            continue
        if "=" not in stripped:
            raise IngestError(f"{source}:{lineno}: expected key = value")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if section:
            key = f"{section}.{key}"
        key = _KEY_ALIASES.get(key, key)
        values[key] = _parse_value(raw)
    return values


def load_config(path: str | Path | None = None) -> AuditConfig:
    config = AuditConfig()
    if path is None:
        return config
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read config {path}: {exc}") from exc
    values = parse_config_text(text, str(path))
    known = {f.name for f in fields(AuditConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValidationError(f"unknown config keys in {path}: {', '.join(unknown)}")
    for f in fields(AuditConfig):
        if f.name in values:
            config = replace(config, **{f.name: values[f.name]})
    _validate(config)
    return config


def apply_overrides(config: AuditConfig, **overrides) -> AuditConfig:
    """Flag values win; None means the flag was not given."""
    supplied = {k: v for k, v in overrides.items() if v is not None}
    known = {f.name for f in fields(AuditConfig)}
    unknown = sorted(set(supplied) - known)
    if unknown:
        raise ValidationError(f"unknown config overrides: {', '.join(unknown)}")
    config = replace(config, **supplied)
    _validate(config)
    return config


def _validate(config: AuditConfig) -> None:
    if config.provider not in ("hash", "external"):
        raise ValidationError(f"provider must be hash or external, got {config.provider!r}")
    if config.provider == "external" and not config.endpoint:
        raise ValidationError("external provider requires an endpoint")
    if config.dimension < 1:
        raise ValidationError("dimension must be positive")
    if config.folds < 2:
        raise ValidationError("folds must be at least 2")
    if config.chunk_size < 1:
        raise ValidationError("chunk_size must be positive")


def make_provider(config: AuditConfig):
    if config.provider == "hash":
        return HashingEmbedder(dimension=config.dimension)
    return ExternalEmbeddingClient(
        endpoint=config.endpoint,
        dimension=config.dimension,
        api_key_env=config.api_key_env or None,
    )


def make_kernel_config(config: AuditConfig) -> KernelConfig:
    return KernelConfig(kind=config.kernel, bandwidth=config.bandwidth,
                        c=config.c, epsilon=config.epsilon)


def make_preprocess_config() -> PreprocessConfig:
    return PreprocessConfig()

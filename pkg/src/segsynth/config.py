"""TOML configuration files for the clustering and generation pipelines."""

from __future__ import annotations

import sys
from dataclasses import fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .clustering import ClusteringConfig
from .generator import GenerationConfig

__all__ = ["load_generation_config", "load_clustering_config"]


def _apply_section(config, section: dict, name: str):
    known = {f.name for f in fields(config)}
    unknown = set(section) - known
    if unknown:
        raise ValueError(f"[{name}] has unknown keys: {sorted(unknown)}")
    coerced = {}
    for key, value in section.items():
        current = getattr(config, key)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    return replace(config, **coerced)


def _load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_clustering_config(path=None) -> ClusteringConfig:
    config = ClusteringConfig()
    if path is None:
        return config
    data = _load_toml(Path(path))
    return _apply_section(config, data.get("clustering", {}), "clustering")


def load_generation_config(path=None) -> GenerationConfig:
    """Generation config with an embedded [clustering] section; defaults when absent."""
    config = GenerationConfig()
    if path is None:
        return config
    data = _load_toml(Path(path))
    clustering = _apply_section(config.clustering, data.get("clustering", {}), "clustering")
    config = replace(config, clustering=clustering)
    return _apply_section(config, data.get("generation", {}), "generation")

"""Pipeline configuration: YAML file + dotted-path CLI overrides.

Every stage reads its parameters from one or more config sections; any
value can be overridden on the command line with --set section.key=value.
Relative paths resolve against the workdir, which itself resolves against
the config file's directory.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .hashutil import stable64, stable_digest

DEFAULTS: dict = {
    "seed": 0,
    "workdir": "work",
    "paths": {
        "corpus_in": None,
        "clean": "clean.jsonl",
        "chunks": "chunks.jsonl",
        "malformed": "malformed.jsonl",
        "rejects": "rejects.jsonl",
        "embeddings": "embeddings.npy",
        "embedding_ids": "embedding_ids.json",
        "index": "index.bin",
        "seeds": "seeds.jsonl",
        "labels": "labels.jsonl",
        "splits_dir": "splits",
        "model": "model.bin",
        "classified": "classified.jsonl",
        "metrics": "metrics.json",
        "metrics_table": "metrics.txt",
        "verdicts": "verdicts.jsonl",
        "agreement": "agreement.json",
        "mix_manifest": "mix_manifest.json",
        "mixed": "mixed.jsonl",
    },
    "filter": {
        "min_tokens": 20,
        "max_tokens": 200_000,
        "mean_word_length_min": 3.0,
        "mean_word_length_max": 10.0,
        "alpha_word_ratio_min": 0.8,
        "bullet_line_ratio_max": 0.9,
        "ellipsis_line_ratio_max": 0.3,
        "symbol_word_ratio_max": 0.1,
        "subdoc_frequency_threshold": 2,
        "chunk_max_words": 2500,
    },
    "embedder": {
        "backend": "reference",  # reference | remote
        "dim": 1024,
        "endpoint": None,
        "batch_size": 32,
        "timeout": 10.0,
        "max_retries": 2,
        "max_in_flight": 4,
    },
    "index": {
        "m": 45,
        "ef_construction": 256,
        "ef_search": 50,
        "seed": None,  # derived from the global seed when null
    },
    "seedgen": {
        "backend": "stub",  # stub | remote
        "fixtures": None,
        "endpoint": None,
        "domains": [],
        "count_per_domain": 200,
        "multi_domain_prob": 0.1,
        "retries": 2,
        "failure_ceiling": 0.5,
        "max_tokens": 2048,
        "temperature": 1.0,
        "max_workers": 1,
        "seed": None,
    },
    "mining": {
        "k": 200,
        "t_sim": 0.85,
        "evidence_cap": 10,
    },
    "classifier": {
        "buckets": 2**20,
        "ngram_orders": [1, 2],
        "learning_rate": 0.5,
        "epochs": 20,
        "threshold": 0.5,
        "split": [0.8, 0.1, 0.1],
        "min_label_records": 10,
        "negatives_ratio": 1.0,
        "seed": None,
    },
    "metrics": {
        "sample_size": 500,
        "seed": None,
    },
    "judge": {
        "backend": "stub",  # stub | remote
        "endpoint": None,
        "sample_size": 100,
        "retries": 2,
        "max_tokens": 512,
        "seed": None,
    },
    "mixer": {
        "target_domain": None,
        "target_total_tokens": 100_000,
        "domain_fraction": 0.25,
        "allow_repetition": False,
        "seed": None,
    },
}


class ConfigError(ValueError):
    """Bad config file or override syntax (a usage error)."""


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class PipelineConfig:
    data: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: str | Path, overrides: list[str] | None = None,
             seed: int | None = None) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config root must be a mapping: {path}")
        cfg = cls(data=_deep_merge(DEFAULTS, raw), base_dir=path.parent.resolve())
        for item in overrides or []:
            cfg.apply_override(item)
        if seed is not None:
            cfg.data["seed"] = seed
        return cfg

    def apply_override(self, item: str) -> None:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        dotted, _, literal = item.partition("=")
        keys = dotted.strip().split(".")
        if not all(keys):
            raise ConfigError(f"bad override path: {dotted!r}")
        try:
            value = yaml.safe_load(literal)
        except yaml.YAMLError as exc:
            raise ConfigError(f"bad override value {literal!r}: {exc}") from exc
        node = self.data
        for key in keys[:-1]:
            nxt = node.get(key)
            if not isinstance(nxt, dict):
                nxt = {}
                node[key] = nxt
            node = nxt
        node[keys[-1]] = value

    # --- accessors -----------------------------------------------------------

    def section(self, name: str) -> dict:
        got = self.data.get(name)
        if not isinstance(got, dict):
            raise ConfigError(f"missing config section: {name}")
        return got

    @property
    def seed(self) -> int:
        return int(self.data.get("seed") or 0)

    def stage_seed(self, stage: str, configured: int | None = None) -> int:
        if configured is not None:
            return int(configured)
        return stable64(f"{self.seed}:{stage}") % 2**63

    @property
    def workdir(self) -> Path:
        wd = Path(str(self.data.get("workdir", "work")))
        return wd if wd.is_absolute() else self.base_dir / wd

    def path(self, key: str) -> Path:
        value = self.section("paths").get(key)
        if value is None:
            raise ConfigError(f"paths.{key} is not configured")
        p = Path(str(value))
        return p if p.is_absolute() else self.workdir / p

    def has_path(self, key: str) -> bool:
        return self.section("paths").get(key) is not None

    def config_hash(self, sections: list[str]) -> str:
        payload = {name: self.data.get(name) for name in sorted(sections)}
        payload["seed"] = self.seed
        return stable_digest(json.dumps(payload, sort_keys=True, default=str).encode())

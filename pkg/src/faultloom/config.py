"""Pipeline configuration: a YAML document mirroring PipelineConfig."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from pathlib import Path

import yaml

from .errors import ConfigError
from .gateway import API_KEY_ENV_PREFIX, split_model_id
from .stage2 import (
    DEFAULT_CHAR_BUDGET,
    DEFAULT_COMMENT_BUDGET,
    FilterCriteria,
    load_vocabulary,
)


def packaged_data_path(name: str) -> Path:
    return Path(resources.files("faultloom").joinpath("data", name))


@dataclass
class SamplingConfig:
    n_pos: int
    n_neg: int
    seed: int


@dataclass
class PipelineConfig:
    out_dir: Path
    mode: str = "replay"
    model_id: str = "openai/gpt-4o"
    dumps: list[Path] = field(default_factory=list)
    repos: list[str] = field(default_factory=list)
    criteria_file: Path | None = None
    vocabulary_file: Path | None = None
    symptom_taxonomy_file: Path = field(default_factory=lambda: packaged_data_path("symptom_taxonomy.yaml"))
    root_cause_taxonomy_file: Path = field(default_factory=lambda: packaged_data_path("root_cause_taxonomy.yaml"))
    gold_file: Path | None = None
    reference_projects_file: Path | None = None
    theme_description: str = ""
    theme_constraints: list[str] = field(default_factory=list)
    transcript_path: Path | None = None
    sampling: SamplingConfig | None = None
    parallelism: int = 1
    stage3_input: str = "filtered"  # or "gold": classify every gold-annotated issue
    seed: int = 0
    cache_dir: Path | None = None

    def validate(self) -> None:
        if self.mode not in ("live", "record", "replay"):
            raise ConfigError(f"unknown mode: {self.mode!r}")
        if self.mode == "replay" and self.transcript_path is None:
            raise ConfigError("mode=replay requires a transcript path")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.stage3_input not in ("filtered", "gold"):
            raise ConfigError(f"stage3_input must be 'filtered' or 'gold'")
        if not self.dumps and not self.repos:
            raise ConfigError("config needs at least one dump path or repo")
        for path in [
            *self.dumps,
            self.criteria_file,
            self.vocabulary_file,
            self.symptom_taxonomy_file,
            self.root_cause_taxonomy_file,
            self.gold_file,
            self.reference_projects_file,
        ]:
            if path is not None and not Path(path).exists():
                raise ConfigError(f"referenced file does not exist: {path}")
        if self.mode == "replay" and not Path(self.transcript_path).exists():
            raise ConfigError(f"transcript not found: {self.transcript_path}")
        if self.mode == "live":
            provider, _ = split_model_id(self.model_id)
            env_var = API_KEY_ENV_PREFIX + provider.upper()
            if not os.environ.get(env_var):
                raise ConfigError(f"mode=live requires {env_var} to be set")

    def load_criteria(self) -> FilterCriteria:
        if self.vocabulary_file is None:
            raise ConfigError("no vocabulary file configured")
        vocabulary = load_vocabulary(self.vocabulary_file)
        raw: dict = {}
        if self.criteria_file is not None:
            raw = yaml.safe_load(Path(self.criteria_file).read_text(encoding="utf-8")) or {}
        cutoff = raw.get("cutoff_date", "2020-01-01")
        if isinstance(cutoff, str):
            cutoff = date.fromisoformat(cutoff)
        return FilterCriteria(
            vocabulary=vocabulary,
            exclusion_labels=[str(x) for x in raw.get("exclusion_labels", [])],
            cutoff_date=cutoff,
            require_answered=bool(raw.get("require_answered", True)),
            comment_budget=int(raw.get("comment_budget", DEFAULT_COMMENT_BUDGET)),
            char_budget=int(raw.get("char_budget", DEFAULT_CHAR_BUDGET)),
        )


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    """Read a config YAML; relative paths resolve against the config file."""
    path = Path(path)
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    base = path.parent

    def _resolve(value) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else (base / p)

    sampling = None
    if raw.get("sampling"):
        s = raw["sampling"]
        sampling = SamplingConfig(
            n_pos=int(s["n_pos"]), n_neg=int(s["n_neg"]), seed=int(s.get("seed", raw.get("seed", 0)))
        )

    theme = raw.get("theme") or {}
    config = PipelineConfig(
        out_dir=_resolve(raw.get("out", "run")),
        mode=str(raw.get("mode", "replay")),
        model_id=str(raw.get("model", "openai/gpt-4o")),
        dumps=[_resolve(p) for p in raw.get("dumps", [])],
        repos=[str(r) for r in raw.get("repos", [])],
        criteria_file=_resolve(raw.get("criteria")),
        vocabulary_file=_resolve(raw.get("vocabulary")),
        symptom_taxonomy_file=_resolve(raw.get("symptom_taxonomy"))
        or packaged_data_path("symptom_taxonomy.yaml"),
        root_cause_taxonomy_file=_resolve(raw.get("root_cause_taxonomy"))
        or packaged_data_path("root_cause_taxonomy.yaml"),
        gold_file=_resolve(raw.get("gold")),
        reference_projects_file=_resolve(raw.get("reference_projects")),
        theme_description=str(theme.get("description", "")),
        theme_constraints=[str(c) for c in theme.get("constraints", [])],
        transcript_path=_resolve(raw.get("transcript")),
        sampling=sampling,
        parallelism=int(raw.get("parallelism", 1)),
        stage3_input=str(raw.get("stage3_input", "filtered")),
        seed=int(raw.get("seed", 0)),
        cache_dir=_resolve(raw.get("cache_dir")),
    )
    config.validate()
    return config

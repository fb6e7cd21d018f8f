"""End-to-end orchestration: stage sequencing, artifact persistence,
content-hash resumability, and report emission.

Each stage writes a line-delimited artifact into the run directory before the
next stage starts. A stage is skipped on rerun when its recorded input hash
(config section + upstream artifact bytes) is unchanged, so a finished run
directory is stable and fully determines its report.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import stage1, stage2, stage3
from .config import PipelineConfig
from .corpus import Corpus, export_dump, import_dump, load_gold, merge_corpora, sample_balanced
from .errors import FaultloomError, MissingArtifactError, StageError
from .evaluation import (
    EvalReport,
    RunMeta,
    score_stage2,
    score_stage3,
)
from .gateway import Gateway, Provider, Transcript
from .ingest import IssueFetcher, PageCache
from .taxonomy import Taxonomy, load_taxonomy

logger = logging.getLogger(__name__)

ARTIFACTS = {
    "corpus": "corpus.jsonl",
    "sample": "sample.jsonl",
    "define": "study_plan.json",
    "filter": "decisions.jsonl",
    "classify": "labels.jsonl",
    "evaluate": "report.json",
}


def _hash_bytes(*parts: bytes) -> str:
    digest = hashlib.sha256()
    for part in parts:
        digest.update(part)
        digest.update(b"\x00")
    return digest.hexdigest()


def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode("utf-8")


class Manifest:
    """Per-run record of stage input hashes and stage metadata."""

    def __init__(self, path: Path):
        self.path = path
        self.data: dict = {"stages": {}}
        if path.exists():
            self.data = json.loads(path.read_text(encoding="utf-8"))

    def save(self) -> None:
        self.path.write_text(
            json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def stage(self, name: str) -> dict:
        return self.data["stages"].get(name, {})

    def set_stage(self, name: str, input_hash: str, meta: dict) -> None:
        self.data["stages"][name] = {"input_hash": input_hash, "meta": meta}
        self.save()


@dataclass
class Runner:
    config: PipelineConfig
    provider: Provider | None = None  # injected fake for tests; live resolves by model id
    gateway: Gateway | None = field(default=None, init=False)
    manifest: Manifest = field(init=False)

    def __post_init__(self) -> None:
        self.out = Path(self.config.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = Manifest(self.out / "manifest.json")
        self.provider_calls = 0

    # --- shared plumbing ---------------------------------------------------

    def artifact(self, stage: str) -> Path:
        return self.out / ARTIFACTS[stage]

    def require_artifact(self, stage: str, needed_by: str) -> Path:
        path = self.artifact(stage)
        if not path.exists():
            raise MissingArtifactError(str(path), needed_by)
        return path

    def _get_gateway(self) -> Gateway:
        if self.gateway is None:
            transcript = None
            if self.config.transcript_path is not None:
                transcript = Transcript(self.config.transcript_path)
            provider = self.provider
            if provider is not None:
                provider = _CountingProvider(provider, self)
            self.gateway = Gateway(
                mode=self.config.mode,
                transcript=transcript,
                provider=provider,
            )
        return self.gateway

    def _should_skip(self, stage: str, input_hash: str) -> bool:
        recorded = self.manifest.stage(stage)
        return (
            recorded.get("input_hash") == input_hash
            and self.artifact(stage).exists()
        )

    def _finish(self, stage: str, input_hash: str, started: float, extra: dict | None = None) -> None:
        gateway = self.gateway
        meta = {
            "duration_seconds": round(time.monotonic() - started, 3),
            "tokens": gateway.total_tokens() if gateway else 0,
            "per_model": (
                {m: t.to_dict() for m, t in gateway.usage.items()} if gateway else {}
            ),
        }
        if extra:
            meta.update(extra)
        self.manifest.set_stage(stage, input_hash, meta)

    def snapshot_config(self) -> None:
        snapshot = self.out / "config_snapshot.yaml"
        payload = {
            "mode": self.config.mode,
            "model": self.config.model_id,
            "dumps": [str(p) for p in self.config.dumps],
            "repos": self.config.repos,
            "sampling": (
                {
                    "n_pos": self.config.sampling.n_pos,
                    "n_neg": self.config.sampling.n_neg,
                    "seed": self.config.sampling.seed,
                }
                if self.config.sampling
                else None
            ),
            "parallelism": self.config.parallelism,
            "stage3_input": self.config.stage3_input,
            "seed": self.config.seed,
        }
        snapshot.write_text(yaml.safe_dump(payload, sort_keys=True), encoding="utf-8")

    # --- stages ------------------------------------------------------------

    def run_corpus(self) -> Path:
        input_hash = _hash_bytes(
            _canonical({"dumps": [str(p) for p in self.config.dumps], "repos": self.config.repos}),
            *[Path(p).read_bytes() for p in self.config.dumps],
        )
        if self._should_skip("corpus", input_hash):
            logger.info("corpus: unchanged, skipping")
            return self.artifact("corpus")
        started = time.monotonic()
        parts = [import_dump(p) for p in self.config.dumps]
        if self.config.repos:
            cache = (
                PageCache(self.config.cache_dir) if self.config.cache_dir else None
            )
            fetcher = IssueFetcher(cache=cache)
            parts.extend(fetcher.fetch_issues(repo) for repo in self.config.repos)
        corpus = merge_corpora(parts, source="dump" if not self.config.repos else "live")
        export_dump(corpus, self.artifact("corpus"))
        self._finish("corpus", input_hash, started, {"records": len(corpus)})
        return self.artifact("corpus")

    def run_sample(self) -> Path:
        upstream = self.require_artifact("corpus", "sample")
        sampling = self.config.sampling
        section = (
            {"n_pos": sampling.n_pos, "n_neg": sampling.n_neg, "seed": sampling.seed}
            if sampling
            else None
        )
        input_hash = _hash_bytes(_canonical(section), upstream.read_bytes())
        if self._should_skip("sample", input_hash):
            logger.info("sample: unchanged, skipping")
            return self.artifact("sample")
        started = time.monotonic()
        corpus = import_dump(upstream)
        if sampling is None:
            export_dump(corpus, self.artifact("sample"))
        else:
            gold = load_gold(self.config.gold_file)
            sample = sample_balanced(corpus, gold, sampling.n_pos, sampling.n_neg, sampling.seed)
            export_dump(sample, self.artifact("sample"))
        self._finish("sample", input_hash, started)
        return self.artifact("sample")

    def run_define(self) -> Path:
        theme = stage1.StudyTheme(
            description=self.config.theme_description,
            constraints=self.config.theme_constraints,
        )
        input_hash = _hash_bytes(
            _canonical({"theme": theme.description, "constraints": theme.constraints,
                        "model": self.config.model_id})
        )
        if self._should_skip("define", input_hash):
            return self.artifact("define")
        started = time.monotonic()
        gateway = self._get_gateway()
        plan = stage1.propose_study(theme, gateway, self.config.model_id)
        payload = {"plan": plan.to_dict()}
        if self.config.reference_projects_file is not None:
            reference = stage1.load_reference_projects(self.config.reference_projects_file)
            payload["score"] = stage1.score_plan(plan, reference).to_dict()
        self.artifact("define").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        self._finish("define", input_hash, started)
        return self.artifact("define")

    def run_filter(self) -> Path:
        upstream = self.require_artifact("sample", "filter")
        criteria = self.config.load_criteria()
        input_hash = _hash_bytes(
            _canonical(
                {
                    "vocabulary": criteria.vocabulary,
                    "exclusion_labels": criteria.exclusion_labels,
                    "cutoff_date": criteria.cutoff_date.isoformat(),
                    "require_answered": criteria.require_answered,
                    "model": self.config.model_id,
                }
            ),
            upstream.read_bytes(),
        )
        if self._should_skip("filter", input_hash):
            logger.info("filter: unchanged, skipping")
            return self.artifact("filter")
        started = time.monotonic()
        corpus = import_dump(upstream)
        gateway = self._get_gateway()
        decisions = stage2.run_stage2(
            corpus, criteria, gateway, self.config.model_id,
            parallelism=self.config.parallelism,
        )
        with open(self.artifact("filter"), "w", encoding="utf-8") as fh:
            for decision in decisions:
                fh.write(json.dumps(decision.to_dict(), sort_keys=True) + "\n")
        positives = sum(1 for d in decisions if d.final)
        self._finish("filter", input_hash, started, {"decisions": len(decisions), "positives": positives})
        return self.artifact("filter")

    def _classification_input(self) -> Corpus:
        sample = import_dump(self.require_artifact("sample", "classify"))
        if self.config.stage3_input == "gold":
            gold = load_gold(self.config.gold_file)
            keep = {
                k for k, g in gold.items()
                if g.symptom_leaf is not None or g.root_cause is not None
            }
            return Corpus(records=[r for r in sample if r.key in keep], source=sample.source)
        decisions_path = self.require_artifact("filter", "classify")
        positives = set()
        with open(decisions_path, "r", encoding="utf-8") as fh:
            for line in fh:
                raw = json.loads(line)
                if raw["final"]:
                    positives.add((raw["repo"], int(raw["number"])))
        return Corpus(records=[r for r in sample if r.key in positives], source=sample.source)

    def run_classify(self) -> Path:
        issues = self._classification_input()
        upstream_hashes = [self.artifact("sample").read_bytes()]
        if self.config.stage3_input == "filtered":
            upstream_hashes.append(self.artifact("filter").read_bytes())
        input_hash = _hash_bytes(
            _canonical(
                {
                    "model": self.config.model_id,
                    "stage3_input": self.config.stage3_input,
                    "symptom_taxonomy": _hash_file(Path(self.config.symptom_taxonomy_file)),
                    "root_cause_taxonomy": _hash_file(Path(self.config.root_cause_taxonomy_file)),
                }
            ),
            *upstream_hashes,
        )
        if self._should_skip("classify", input_hash):
            logger.info("classify: unchanged, skipping")
            return self.artifact("classify")
        started = time.monotonic()
        symptoms = load_taxonomy(self.config.symptom_taxonomy_file)
        root_causes = load_taxonomy(self.config.root_cause_taxonomy_file)
        gateway = self._get_gateway()
        labels = stage3.run_stage3(
            issues, symptoms, root_causes, gateway, self.config.model_id,
            parallelism=self.config.parallelism,
        )
        with open(self.artifact("classify"), "w", encoding="utf-8") as fh:
            for label in labels:
                fh.write(json.dumps(label.to_dict(), sort_keys=True) + "\n")
        self._finish(
            "classify", input_hash, started,
            {"labels": len(labels), "invalid": sum(1 for l in labels if not l.valid)},
        )
        return self.artifact("classify")

    # --- evaluation and report ---------------------------------------------

    def _load_decisions(self) -> list[stage2.FilterDecision]:
        path = self.require_artifact("filter", "evaluate")
        with open(path, "r", encoding="utf-8") as fh:
            return [stage2.FilterDecision.from_dict(json.loads(line)) for line in fh if line.strip()]

    def _load_labels(self) -> list[stage3.FaultLabel]:
        path = self.require_artifact("classify", "evaluate")
        with open(path, "r", encoding="utf-8") as fh:
            return [stage3.FaultLabel.from_dict(json.loads(line)) for line in fh if line.strip()]

    def build_report(self) -> EvalReport:
        gold = load_gold(self.config.gold_file)
        symptoms = load_taxonomy(self.config.symptom_taxonomy_file)
        root_causes = load_taxonomy(self.config.root_cause_taxonomy_file)
        notes: list[str] = []
        meta = RunMeta()

        decisions = self._load_decisions()
        scorable = [d for d in decisions if (g := gold.get(d.key)) and g.fault_related is not None]
        meta.unscored += len(decisions) - len(scorable)
        stage2_scores = score_stage2(scorable, gold) if scorable else None
        if stage2_scores is None:
            notes.append("stage2: no gold-covered decisions to score")

        labels = self._load_labels()
        symptom_labels = [
            l for l in labels if (g := gold.get(l.key)) and g.symptom_leaf is not None
        ]
        rootcause_labels = [
            l for l in labels if (g := gold.get(l.key)) and g.root_cause is not None
        ]
        meta.unscored += (len(labels) - len(symptom_labels)) + (len(labels) - len(rootcause_labels))
        meta.invalid_labels = sum(1 for l in labels if not l.valid)
        if not labels:
            notes.append("stage3: zero issues reached classification")
        stage3_symptom = score_stage3(symptom_labels, gold, symptoms) if symptom_labels else None
        stage3_rootcause = score_stage3(rootcause_labels, gold, root_causes) if rootcause_labels else None

        durations = 0.0
        tokens = 0
        per_model: dict = {}
        for name in ("corpus", "sample", "filter", "classify"):
            stage_meta = self.manifest.stage(name).get("meta", {})
            durations += stage_meta.get("duration_seconds", 0.0)
            tokens = max(tokens, stage_meta.get("tokens", 0))
            for model, tally in stage_meta.get("per_model", {}).items():
                agg = per_model.setdefault(
                    model, {"requests": 0, "input_tokens": 0, "output_tokens": 0}
                )
                for key in agg:
                    agg[key] = max(agg[key], tally.get(key, 0))
        meta.wall_time_seconds = round(durations, 3)
        meta.total_tokens = tokens
        meta.per_model = per_model

        return EvalReport(
            stage2=stage2_scores,
            stage3_symptom=stage3_symptom,
            stage3_rootcause=stage3_rootcause,
            run_meta=meta,
            notes=notes,
        )

    def run_evaluate(self) -> Path:
        for needed in ("filter", "classify"):
            self.require_artifact(needed, "evaluate")
        input_hash = _hash_bytes(
            _canonical({"gold": _hash_file(Path(self.config.gold_file))}),
            self.artifact("filter").read_bytes(),
            self.artifact("classify").read_bytes(),
        )
        if self._should_skip("evaluate", input_hash):
            logger.info("evaluate: unchanged, skipping")
            return self.artifact("evaluate")
        report = self.build_report()
        self.write_report(report)
        self.manifest.set_stage("evaluate", input_hash, {})
        return self.artifact("evaluate")

    def write_report(self, report: EvalReport) -> None:
        self.artifact("evaluate").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        tables = self.out / "tables"
        tables.mkdir(exist_ok=True)
        for name, scores in (
            ("stage2_confusion", report.stage2),
            ("stage3_symptom_confusion", report.stage3_symptom),
            ("stage3_rootcause_confusion", report.stage3_rootcause),
        ):
            path = tables / f"{name}.csv"
            if scores is None:
                path.write_text("", encoding="utf-8")
                continue
            matrix = scores.confusion
            with open(path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["gold \\ predicted"] + matrix.classes)
                for cls, row in zip(matrix.classes, matrix.counts):
                    writer.writerow([cls] + row)
        self._write_summary(report)

    def _write_summary(self, report: EvalReport) -> None:
        lines = ["# Run summary", ""]
        if report.stage2:
            s = report.stage2
            lines += [
                "## Stage II: fault-related issue filtering",
                f"- accuracy: {s.accuracy:.4f} ({s.tp + s.tn}/{s.total})",
                f"- precision: {s.precision:.4f}",
                f"- recall: {s.recall:.4f}",
                "",
            ]
        for title, scores in (
            ("Stage III: symptom classification", report.stage3_symptom),
            ("Stage III: root-cause classification", report.stage3_rootcause),
        ):
            if scores:
                lines.append(f"## {title}")
                lines.append(
                    f"- leaf accuracy: {scores.accuracy:.4f} ({scores.correct}/{scores.total})"
                )
                for level in sorted(scores.per_level_accuracy):
                    lines.append(
                        f"- level-{level} accuracy: {scores.per_level_accuracy[level]:.4f}"
                    )
                lines.append(f"- invalid labels: {scores.invalid}")
                lines.append("")
        meta = report.run_meta
        lines += [
            "## Run",
            f"- wall time (s): {meta.wall_time_seconds}",
            f"- total tokens: {meta.total_tokens}",
            f"- unscored items: {meta.unscored}",
        ]
        for note in report.notes:
            lines.append(f"- note: {note}")
        (self.out / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")

    # --- whole pipeline -----------------------------------------------------

    def run_pipeline(self) -> EvalReport:
        self.config.validate()
        lock = self.out / "run.lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.close(fd)
        except FileExistsError:
            raise StageError(f"run directory is locked by another pipeline: {lock}")
        current = "startup"
        try:
            self.snapshot_config()
            for current, step in (
                ("corpus", self.run_corpus),
                ("sample", self.run_sample),
                ("filter", self.run_filter),
                ("classify", self.run_classify),
                ("evaluate", self.run_evaluate),
            ):
                step()
        except FaultloomError as exc:
            last = _last_artifact(self.out)
            raise StageError(f"stage {current!r} failed ({exc}); last artifact: {last}") from exc
        finally:
            lock.unlink(missing_ok=True)
        return self.build_report()


class _CountingProvider:
    def __init__(self, inner: Provider, runner: Runner):
        self.inner = inner
        self.runner = runner

    def send(self, request):
        self.runner.provider_calls += 1
        return self.inner.send(request)


def _last_artifact(out: Path) -> str:
    existing = [out / name for name in ARTIFACTS.values() if (out / name).exists()]
    if not existing:
        return "(none)"
    return str(max(existing, key=lambda p: p.stat().st_mtime))

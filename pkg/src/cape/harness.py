"""Experiment orchestration: configs, episodes, JSONL records, reports."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .completion import CompletionBackend, RemoteCompletionBackend, ScriptedBackend
from .embedding import EmbeddingProvider, RemoteEmbedder, TrigramEmbedder
from .metrics import (
    AnnotationMatrix,
    EpisodeMetrics,
    GroundTruthProgram,
    ReportRow,
    add_annotations,
    aggregate,
    episode_metrics,
    render_csv,
    render_markdown,
)
from .planner import (
    Backends,
    CorrectionExampleSet,
    DemonstrationSet,
    PlannerConfig,
    PlanTrace,
    plan,
)
from .saycan import AffordanceModel, SayCanConfig, plan_saycan
from .world import DomainError, SceneGraph, SkillTemplate, load_default_domain, load_domain

log = logging.getLogger(__name__)

METHODS: dict[str, dict[str, Any]] = {
    "open-loop": {"strategy": "open_loop"},
    "resample": {"strategy": "resample"},
    "cape-success": {"strategy": "cape", "prompt_style": "success_only"},
    "cape-implicit": {"strategy": "cape", "prompt_style": "implicit"},
    "cape-explicit": {"strategy": "cape", "prompt_style": "explicit"},
    "cape-explicit-sg": {"strategy": "cape", "prompt_style": "explicit", "scorer": "geometric"},
    "cape-fewshot-explicit": {"strategy": "cape", "prompt_style": "explicit", "few_shot": True},
    "cape-fewshot-explicit-sg": {"strategy": "cape", "prompt_style": "explicit", "few_shot": True, "scorer": "geometric"},
    "saycan-perfect": {"saycan": "perfect"},
    "saycan-noisy": {"saycan": "noisy"},
}
BUNDLED_DOMAINS = ("household", "robot")


class ConfigError(ValueError):
    pass


def slugify(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def episode_seed(global_seed: int, task: str, method: str) -> int:
    digest = hashlib.sha256(f"{global_seed}\x00{task}\x00{method}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def bundled_suite_config() -> Path:
    return Path(str(resources.files("cape") / "data" / "suite" / "config.json"))


def tracks_corrections(method: str) -> bool:
    spec = METHODS[method]
    return "saycan" not in spec and spec["strategy"] != "open_loop"


@dataclass
class TaskSpec:
    name: str
    domain: str
    script: Path | None = None
    ground_truth: Path | None = None


@dataclass
class ExperimentConfig:
    base_dir: Path
    domain: str
    demos: Path
    corrections: Path | None
    tasks: list[TaskSpec]
    methods: list[str]
    backend: dict[str, Any] = field(default_factory=dict)
    planner: dict[str, Any] = field(default_factory=dict)
    grounding: dict[str, Any] = field(default_factory=dict)
    saycan: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    jobs: int = 1
    out: Path = Path("runs")
    _domains: dict[str, tuple[dict[str, SkillTemplate], SceneGraph]] = field(default_factory=dict, repr=False)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, path.parent)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], base_dir: Path) -> "ExperimentConfig":
        def rel(p: str | None) -> Path | None:
            return None if p is None else (base_dir / p)

        try:
            default_domain = doc.get("domain", "household")
            tasks = [
                TaskSpec(
                    t["name"],
                    t.get("domain", default_domain),
                    rel(t.get("script")),
                    rel(t.get("ground_truth")),
                )
                for t in doc["tasks"]
            ]
            cfg = cls(
                base_dir=base_dir,
                domain=default_domain,
                demos=rel(doc["demos"]),
                corrections=rel(doc.get("corrections")),
                tasks=tasks,
                methods=list(doc.get("methods", ["cape-explicit"])),
                backend=dict(doc.get("backend", {"kind": "scripted"})),
                planner=dict(doc.get("planner", {})),
                grounding=dict(doc.get("grounding", {})),
                saycan=dict(doc.get("saycan", {})),
                seed=int(doc.get("seed", 0)),
                jobs=int(doc.get("jobs", 1)),
                out=Path(doc.get("out", "runs")),  # relative to the working directory
            )
        except KeyError as exc:
            raise ConfigError(f"config is missing required key {exc}") from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if not self.tasks:
            raise ConfigError("config lists no tasks")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate task names")
        files = [("demos", self.demos), ("corrections", self.corrections)]
        for t in self.tasks:
            files += [(f"script for {t.name!r}", t.script), (f"ground truth for {t.name!r}", t.ground_truth)]
        for label, p in files:
            if p is not None and not p.is_file():
                raise ConfigError(f"{label} not found: {p}")
        if self.backend.get("kind", "scripted") == "scripted":
            missing = [t.name for t in self.tasks if t.script is None]
            if missing:
                raise ConfigError(f"scripted backend needs a script for {missing[0]!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for t in self.tasks:
            self.domain_for(t.domain)

    def domain_for(self, ref: str) -> tuple[dict[str, SkillTemplate], SceneGraph]:
        if ref not in self._domains:
            try:
                if ref in BUNDLED_DOMAINS:
                    self._domains[ref] = load_default_domain(ref)
                else:
                    p = self.base_dir / ref
                    if not p.is_file():
                        raise ConfigError(f"domain file not found: {p}")
                    self._domains[ref] = load_domain(p)
            except DomainError as exc:
                raise ConfigError(f"domain {ref}: {exc}") from exc
        skills, scene = self._domains[ref]
        return skills, scene.copy()

    def task(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise ConfigError(f"unknown task {name!r}")

    def planner_config(self, method: str, seed: int) -> PlannerConfig:
        spec = dict(METHODS[method])
        opts = dict(self.planner)
        opts.update(spec)
        opts.setdefault("scorer", self.grounding.get("scorer", "weighted"))
        for key in ("beta", "threshold"):
            if key in self.grounding:
                opts[key] = self.grounding[key]
        opts["seed"] = seed
        return PlannerConfig(**opts)


# --------------------------------------------------------------------------
# Episodes


@dataclass
class EpisodeRecord:
    task: str
    method: str
    seed: int
    trace: PlanTrace
    metrics: EpisodeMetrics
    wall_time: float | None = None

    def to_dict(self) -> dict[str, Any]:
        # wall time stays out of the record so reruns are byte-identical
        return {
            "task": self.task,
            "method": self.method,
            "seed": self.seed,
            "metrics": self.metrics.to_dict(),
            "trace": self.trace.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EpisodeRecord":
        return cls(d["task"], d["method"], d["seed"], PlanTrace.from_dict(d["trace"]), EpisodeMetrics.from_dict(d["metrics"]))


def make_backends(config: ExperimentConfig, task: TaskSpec, embedder: EmbeddingProvider | None = None) -> Backends:
    kind = config.backend.get("kind", "scripted")
    llm: CompletionBackend
    if kind == "scripted":
        llm = ScriptedBackend.from_file(task.script)
    elif kind == "remote":
        llm = RemoteCompletionBackend(config.backend.get("llm_url"), model=config.backend.get("model"))
    else:
        raise ConfigError(f"unknown backend kind {kind!r}")
    if embedder is None:
        if config.backend.get("embedder", "offline") == "remote":
            embedder = RemoteEmbedder(config.backend.get("embed_url"), model=config.backend.get("embed_model"))
        else:
            embedder = TrigramEmbedder()
    return Backends(llm, embedder)


def load_ground_truth(config: ExperimentConfig, task: TaskSpec, gt_dir: Path | None = None) -> GroundTruthProgram | None:
    path = task.ground_truth
    if gt_dir is not None:
        path = gt_dir / f"{slugify(task.name)}.json"
    if path is None or not path.is_file():
        return None
    skills, scene = config.domain_for(task.domain)
    return GroundTruthProgram.load(path, scene, skills)


def run_episode(
    config: ExperimentConfig,
    task_name: str,
    method: str,
    *,
    demos: DemonstrationSet | None = None,
    corrections: CorrectionExampleSet | None = None,
    embedder: EmbeddingProvider | None = None,
    script: Path | None = None,
) -> EpisodeRecord:
    task = config.task(task_name) if script is None else TaskSpec(task_name, _domain_of(config, task_name), script)
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    seed = episode_seed(config.seed, task.name, method)
    demos = demos or DemonstrationSet.load(config.demos)
    if corrections is None and config.corrections is not None:
        corrections = CorrectionExampleSet.load(config.corrections)
    skills, scene = config.domain_for(task.domain)
    backends = make_backends(config, task, embedder)
    spec = METHODS[method]
    start = time.perf_counter()
    if "saycan" in spec:
        sc = config.saycan
        model = AffordanceModel(spec["saycan"], seed=int(sc.get("seed", seed)))
        cfg = SayCanConfig(
            use_subsampling=bool(sc.get("subsample", True)),
            max_steps=int(sc.get("max_steps", config.planner.get("max_steps", 20))),
            seed=seed,
        )
        trace = plan_saycan(task.name, scene, skills, backends, cfg, model, demos)
    else:
        trace = plan(task.name, scene, skills, backends, config.planner_config(method, seed), demos, corrections)
    wall = time.perf_counter() - start
    gt = load_ground_truth(config, task) if script is None else None
    metrics = episode_metrics(trace, scene, skills, gt)
    return EpisodeRecord(task.name, method, seed, trace, metrics, wall)


def _domain_of(config: ExperimentConfig, task_name: str) -> str:
    for t in config.tasks:
        if t.name == task_name:
            return t.domain
    return config.domain


def _failed_record(config: ExperimentConfig, task: TaskSpec, method: str, exc: Exception) -> EpisodeRecord:
    skills, scene = config.domain_for(task.domain)
    trace = PlanTrace(task.name, method, termination="backend_failure", final_scene=scene)
    trace.detail = f"{type(exc).__name__}: {exc}"
    return EpisodeRecord(task.name, method, episode_seed(config.seed, task.name, method), trace,
                         episode_metrics(trace, scene, skills, None))


def run_batch(config: ExperimentConfig, out: Path | None = None, jobs: int | None = None) -> list[EpisodeRecord]:
    """Run every (task, method) pair and write results.jsonl plus reports.

    Records are written in canonical task/method order whatever the
    parallelism, one flushed line per episode.
    """
    out = Path(out or config.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = jobs or config.jobs
    demos = DemonstrationSet.load(config.demos)
    corrections = CorrectionExampleSet.load(config.corrections) if config.corrections else None
    embedder = TrigramEmbedder() if config.backend.get("embedder", "offline") != "remote" else None
    pairs = [(t, m) for t in config.tasks for m in config.methods]

    def one(pair):
        task, method = pair
        try:
            return run_episode(config, task.name, method, demos=demos, corrections=corrections, embedder=embedder)
        except Exception as exc:  # one bad episode must not sink the batch
            log.warning("episode %s / %s failed: %s", task.name, method, exc)
            return _failed_record(config, task, method, exc)

    records: list[EpisodeRecord] = []
    with ThreadPoolExecutor(max_workers=jobs) as pool, open(out / "results.jsonl", "w") as fh:
        for rec in pool.map(one, pairs):
            fh.write(rec.to_json() + "\n")
            fh.flush()
            records.append(rec)
    write_reports(build_report(records, config.methods), out)
    return records


def build_report(
    records: list[EpisodeRecord], methods: list[str], annotations: AnnotationMatrix | None = None
) -> list[ReportRow]:
    rows = []
    for m in methods:
        mine = [r for r in records if r.method == m]
        if not mine:
            continue
        row = aggregate([r.metrics for r in mine], m, track_corrections=tracks_corrections(m))
        if annotations is not None:
            add_annotations(row, annotations.subset(f"{m}/{r.task}" for r in mine))
        rows.append(row)
    return rows


def write_reports(rows: list[ReportRow], out: Path) -> None:
    (out / "report.csv").write_text(render_csv(rows))
    (out / "report.md").write_text(render_markdown(rows))


def read_results(path: str | Path) -> list[EpisodeRecord]:
    out = []
    for i, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(EpisodeRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"{path}:{i}: malformed record ({exc})") from exc
    return out


def evaluate(
    config: ExperimentConfig,
    results: str | Path,
    gt_dir: Path | None = None,
    annotations: AnnotationMatrix | None = None,
) -> tuple[list[EpisodeRecord], list[ReportRow]]:
    """Recompute every metric from the stored traces."""
    records = read_results(results)
    gts: dict[str, GroundTruthProgram | None] = {}
    fresh = []
    for rec in records:
        task = config.task(rec.task)
        if rec.task not in gts:
            gts[rec.task] = load_ground_truth(config, task, gt_dir)
        skills, scene = config.domain_for(task.domain)
        metrics = episode_metrics(rec.trace, scene, skills, gts[rec.task])
        fresh.append(EpisodeRecord(rec.task, rec.method, rec.seed, rec.trace, metrics))
    methods = list(dict.fromkeys(r.method for r in records))
    return fresh, build_report(fresh, methods, annotations)

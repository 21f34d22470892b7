"""Evaluation metrics over plan traces, ground-truth programs and ratings."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .world import (
    GroundedAction,
    PreconditionViolation,
    SceneGraph,
    Skills,
    action_from_text,
    apply_action,
    check_preconditions,
)


class MetricInputError(ValueError):
    pass


class GroundTruthError(ValueError):
    pass


def _actions(plan: Any) -> list[GroundedAction]:
    if hasattr(plan, "actions"):
        return list(plan.actions)
    return list(plan)


def executability(plan, initial_scene: SceneGraph, skills: Skills) -> int:
    """1 iff every step replays cleanly from the initial scene; an empty plan is 0."""
    acts = _actions(plan)
    if not acts:
        return 0
    scene = initial_scene
    for act in acts:
        if check_preconditions(scene, act, skills) is not None:
            return 0
        scene = apply_action(scene, act, skills)
    return 1


def affordability(plan, initial_scene: SceneGraph, skills: Skills) -> float:
    """Percentage of steps executed when failing steps are skipped and replay goes on."""
    acts = _actions(plan)
    if not acts:
        return 0.0
    scene = initial_scene
    done = 0
    for act in acts:
        if check_preconditions(scene, act, skills) is None:
            scene = apply_action(scene, act, skills)
            done += 1
    return 100.0 * done / len(acts)


def skip_replay(plan, initial_scene: SceneGraph, skills: Skills) -> SceneGraph:
    """Final scene of the skip-and-continue replay."""
    scene = initial_scene
    for act in _actions(plan):
        if check_preconditions(scene, act, skills) is None:
            scene = apply_action(scene, act, skills)
    return scene


def normalize_step(step: str) -> str:
    return " ".join(step.lower().split())


def lcs_length(a: Sequence[Any], b: Sequence[Any]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def lcs(generated: Sequence[str], ground_truth: Sequence[str]) -> float:
    """Step-level LCS divided by the longer plan length."""
    if not generated and not ground_truth:
        return 1.0
    if not generated or not ground_truth:
        return 0.0
    a = [normalize_step(s) for s in generated]
    b = [normalize_step(s) for s in ground_truth]
    return lcs_length(a, b) / max(len(a), len(b))


def _slots(scene: SceneGraph, oid: int) -> dict[str, Any]:
    obj = scene.objects[oid]
    slots: dict[str, Any] = {f"attr:{k}": v for k, v in obj.attributes.items()}
    slots["location"] = obj.location
    slots["container"] = (obj.container, obj.surface)
    return slots


def graph_similarity(gen_final: SceneGraph, gt_final: SceneGraph) -> float:
    """Percentage of matching object slots over the union of both scenes' objects.

    Slots are each declared attribute plus location and containment. An
    object present in one scene only contributes all its slots as mismatches.
    """
    ids = set(gen_final.objects) | set(gt_final.objects)
    if not ids:
        return 100.0
    total = 0
    match = 0
    for oid in ids:
        a = _slots(gen_final, oid) if oid in gen_final.objects else None
        b = _slots(gt_final, oid) if oid in gt_final.objects else None
        if a is None or b is None:
            total += len(a or b)
            continue
        keys = set(a) | set(b)
        total += len(keys)
        match += sum(1 for k in keys if k in a and k in b and a[k] == b[k])
    return 100.0 * match / total


def fleiss_kappa(ratings: Sequence[Sequence[int]]) -> float:
    """Fleiss' kappa for binary labels; rows are items, columns raters."""
    if len(ratings) < 2:
        raise MetricInputError("need at least two rated items")
    n = len(ratings[0])
    if n < 2:
        raise MetricInputError("need at least two raters")
    if any(len(r) != n for r in ratings):
        raise MetricInputError("every item must have the same number of ratings")
    if any(x not in (0, 1) for r in ratings for x in r):
        raise MetricInputError("ratings must be 0 or 1")
    N = len(ratings)
    ones = [sum(r) for r in ratings]
    p1 = math.fsum(ones) / (N * n)
    pe = p1 * p1 + (1 - p1) * (1 - p1)
    p_items = [(k * (k - 1) + (n - k) * (n - k - 1)) / (n * (n - 1)) for k in ones]
    p_bar = math.fsum(p_items) / N
    if pe == 1.0:
        return 1.0
    return (p_bar - pe) / (1 - pe)


# --------------------------------------------------------------------------
# Ground truth and annotations


@dataclass
class GroundTruthProgram:
    task: str
    steps: list[str]
    actions: list[GroundedAction]
    final_scene: SceneGraph

    @classmethod
    def build(cls, task: str, steps: Sequence[str], scene: SceneGraph, skills: Skills) -> "GroundTruthProgram":
        acts = []
        for i, text in enumerate(steps, 1):
            try:
                act = action_from_text(text, scene, skills)
                scene_next = apply_action(scene, act, skills)
            except PreconditionViolation as exc:
                raise GroundTruthError(f"{task}: step {i} {text!r} fails: {exc.error.message}") from exc
            except (KeyError, ValueError) as exc:
                raise GroundTruthError(f"{task}: step {i} {text!r} is not an admissible action ({exc})") from exc
            acts.append(act)
            scene = scene_next
        return cls(task, [a.rendered for a in acts], acts, scene)

    @classmethod
    def load(cls, path: str | Path, scene: SceneGraph, skills: Skills) -> "GroundTruthProgram":
        doc = json.loads(Path(path).read_text())
        return cls.build(doc["task"], doc["steps"], scene, skills)


@dataclass
class AnnotationMatrix:
    items: dict[str, list[int]]

    def __post_init__(self) -> None:
        sizes = {len(r) for r in self.items.values()}
        if len(sizes) > 1:
            raise MetricInputError("ragged annotation matrix")
        if sizes and sizes.pop() < 2:
            raise MetricInputError("need at least two raters")

    @classmethod
    def from_csv(cls, text: str) -> "AnnotationMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][0] != "plan_id":
            raise MetricInputError("annotation CSV must start with a plan_id header")
        items = {}
        for r in rows[1:]:
            if not r:
                continue
            try:
                items[r[0]] = [int(x) for x in r[1:]]
            except ValueError as exc:
                raise MetricInputError(f"non-binary rating for {r[0]}") from exc
        return cls(items)

    @classmethod
    def load(cls, path: str | Path) -> "AnnotationMatrix":
        return cls.from_csv(Path(path).read_text())

    def subset(self, plan_ids: Iterable[str]) -> list[list[int]]:
        return [self.items[p] for p in plan_ids if p in self.items]


# --------------------------------------------------------------------------
# Reports


@dataclass
class EpisodeMetrics:
    executable: int
    affordable: float
    lcs: float | None
    gs: float | None
    steps: int
    corrections: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "executable": self.executable,
            "affordable": self.affordable,
            "lcs": self.lcs,
            "gs": self.gs,
            "steps": self.steps,
            "corrections": self.corrections,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EpisodeMetrics":
        return cls(d["executable"], d["affordable"], d["lcs"], d["gs"], d["steps"], d["corrections"])


def episode_metrics(trace, initial_scene: SceneGraph, skills: Skills, gt: GroundTruthProgram | None) -> EpisodeMetrics:
    lcs_v = gs_v = None
    if gt is not None:
        lcs_v = lcs(trace.step_texts, gt.steps)
        gs_v = graph_similarity(skip_replay(trace, initial_scene, skills), gt.final_scene)
    return EpisodeMetrics(
        executability(trace, initial_scene, skills),
        affordability(trace, initial_scene, skills),
        lcs_v,
        gs_v,
        len(trace.steps),
        len(trace.corrections),
    )


@dataclass
class ReportRow:
    method: str
    pct_executable: float
    pct_affordable: float
    lcs: float | None
    pct_gs: float | None
    mean_steps: float
    mean_corrections: float | None
    episodes: int
    pct_correct: float | None = None
    fleiss_kappa: float | None = None


def _mean(xs: Sequence[float]) -> float | None:
    xs = [x for x in xs if x is not None]
    return math.fsum(xs) / len(xs) if xs else None


def aggregate(rows: Sequence[EpisodeMetrics], method: str, *, track_corrections: bool = True) -> ReportRow:
    if not rows:
        raise MetricInputError("no episodes to aggregate")
    return ReportRow(
        method=method,
        pct_executable=100.0 * _mean([r.executable for r in rows]),
        pct_affordable=_mean([r.affordable for r in rows]),
        lcs=_mean([r.lcs for r in rows]),
        pct_gs=_mean([r.gs for r in rows]),
        mean_steps=_mean([r.steps for r in rows]),
        mean_corrections=_mean([r.corrections for r in rows]) if track_corrections else None,
        episodes=len(rows),
    )


def add_annotations(row: ReportRow, ratings: Sequence[Sequence[int]]) -> ReportRow:
    if ratings:
        flat = [x for r in ratings for x in r]
        row.pct_correct = 100.0 * sum(flat) / len(flat)
        if len(ratings) >= 2:
            row.fleiss_kappa = fleiss_kappa(ratings)
    return row


COLUMNS = ["Method", "%Correct", "%Exec", "%Aff", "%GS", "LCS", "Kappa", "Steps", "Corrections", "Episodes"]


def _fmt(x: float | None) -> str:
    return "N/A" if x is None else f"{x:.2f}"


def _cells(row: ReportRow) -> list[str]:
    return [
        row.method,
        _fmt(row.pct_correct),
        _fmt(row.pct_executable),
        _fmt(row.pct_affordable),
        _fmt(row.pct_gs),
        _fmt(row.lcs),
        _fmt(row.fleiss_kappa),
        _fmt(row.mean_steps),
        _fmt(row.mean_corrections),
        str(row.episodes),
    ]


def _columns(rows: Sequence[ReportRow]) -> list[int]:
    keep = list(range(len(COLUMNS)))
    if all(r.pct_correct is None for r in rows):
        keep.remove(1)
    return keep


def render_csv(rows: Sequence[ReportRow]) -> str:
    keep = _columns(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([COLUMNS[i] for i in keep])
    for r in rows:
        cells = _cells(r)
        w.writerow([cells[i] for i in keep])
    return buf.getvalue()


def render_markdown(rows: Sequence[ReportRow]) -> str:
    keep = _columns(rows)
    head = [COLUMNS[i] for i in keep]
    lines = ["| " + " | ".join(head) + " |", "|" + "|".join("---" for _ in head) + "|"]
    for r in rows:
        cells = _cells(r)
        lines.append("| " + " | ".join(cells[i] for i in keep) + " |")
    return "\n".join(lines) + "\n"

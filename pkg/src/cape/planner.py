"""Plan generation: open-loop, top-k re-sampling, and corrective re-prompting.

All three regimes share the same step loop: ask the Planning LLM for the
next step, ground the samples to an admissible action, and append the
grounded text to the prompt. They differ in what happens when the grounded
action violates a precondition in the simulator.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .completion import BackendError, CompletionBackend, CompletionRequest, CompletionSample
from .embedding import EmbeddingProvider, EmbeddingTransportError, rank_by_similarity
from .grounding import GroundingConfig, ScoredCandidate, ground_step, rank_candidates
from .world import (
    GroundedAction,
    PreconditionError,
    SceneGraph,
    Skills,
    apply_action,
    check_preconditions,
    enclosing_closed,
    enumerate_repertoire,
    state_word,
)

STRATEGIES = ("open_loop", "resample", "cape")
PROMPT_STYLES = ("success_only", "implicit", "explicit")
TERMINATIONS = ("threshold", "max_steps", "exhausted_corrections", "backend_failure", "empty_program", "done")
CORRECTION_CUE = "A correct step would be to"
FEW_SHOT_K = 3

_STEP_RE = re.compile(r"^Step (\d+):\s?(.*)$")


class PlannerConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# Demonstrations and correction examples


@dataclass(frozen=True)
class Demonstration:
    task: str
    steps: tuple[str, ...]


def _strip_step_prefix(step: str) -> str:
    m = _STEP_RE.match(step.strip())
    return m.group(2).strip() if m else step.strip()


@dataclass
class DemonstrationSet:
    entries: list[Demonstration]

    def __post_init__(self) -> None:
        if not self.entries:
            raise PlannerConfigError("demonstration set is empty")
        for d in self.entries:
            if not d.steps or not all(d.steps):
                raise PlannerConfigError(f"demonstration {d.task!r} has an empty plan")

    @classmethod
    def from_json(cls, data: Sequence[Mapping[str, Any]]) -> "DemonstrationSet":
        return cls([Demonstration(e["task"], tuple(_strip_step_prefix(s) for s in e["steps"])) for e in data])

    @classmethod
    def load(cls, path: str | Path) -> "DemonstrationSet":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CorrectionExample:
    task: str
    failed_step: str
    error_text: str
    corrective_action: str


@dataclass
class CorrectionExampleSet:
    entries: list[CorrectionExample]

    @classmethod
    def from_json(cls, data: Sequence[Mapping[str, Any]]) -> "CorrectionExampleSet":
        return cls(
            [CorrectionExample(e["task"], e["failed_step"], e["error"], e["corrective_action"]) for e in data]
        )

    @classmethod
    def load(cls, path: str | Path) -> "CorrectionExampleSet":
        return cls.from_json(json.loads(Path(path).read_text()))


def select_demonstration(query_task: str, demos: DemonstrationSet, embedder: EmbeddingProvider) -> Demonstration:
    names = [d.task for d in demos.entries]
    best, _ = rank_by_similarity(query_task, names, 1, embedder)[0]
    return next(d for d in demos.entries if d.task == best)


def select_correction_examples(
    failed_step: str, examples: CorrectionExampleSet, embedder: EmbeddingProvider, k: int = FEW_SHOT_K
) -> list[CorrectionExample]:
    if len(examples.entries) < k:
        raise PlannerConfigError(f"few-shot correction needs at least {k} examples")
    q = embedder.matrix([failed_step])[0]
    m = embedder.matrix([e.failed_step for e in examples.entries])
    sims = m @ q
    order = sorted(
        range(len(examples.entries)),
        key=lambda i: (-sims[i], examples.entries[i].failed_step, i),
    )
    return [examples.entries[i] for i in order[:k]]


# --------------------------------------------------------------------------
# Prompts


def format_plan(task: str, steps: Sequence[str]) -> str:
    lines = [f"Task: {task}"] + [f"Step {i}: {s}" for i, s in enumerate(steps, 1)]
    return "\n".join(lines) + "\n"


def build_initial_prompt(example: Demonstration, query_task: str) -> str:
    return format_plan(example.task, example.steps) + f"\nTask: {query_task}\nStep 1:"


def parse_plan_blocks(prompt: str) -> list[tuple[str, list[str]]]:
    """Split a prompt into (task, steps) blocks; an open trailing "Step N:" is dropped."""
    blocks: list[tuple[str, list[str]]] = []
    for line in prompt.splitlines():
        if line.startswith("Task: "):
            blocks.append((line[len("Task: "):], []))
            continue
        m = _STEP_RE.match(line)
        if m and blocks and m.group(2).strip():
            blocks[-1][1].append(m.group(2).strip())
    return blocks


def append_step(prompt: str, rendered: str, next_index: int) -> str:
    return f"{prompt} {rendered}\nStep {next_index}:"


def describe_violation(scene: SceneGraph, error: PreconditionError) -> str:
    """First-person description of why the action is not afforded."""
    pred = error.violated
    name = error.action.object_name
    t = error.type_id
    if t == 1:
        return f"the {name} is {state_word(pred.attr, not pred.value)}"
    if t == 2:
        return f"I am not facing the {name}"
    if t == 4:
        return f"the {name} is not in this room"
    if t == 5:
        return "I am not holding anything" if pred.target == "agent" else f"I am not holding the {name}"
    if t == 6:
        box = None
        if error.action.object_id in scene.objects:
            box = enclosing_closed(scene, error.action.object_id)
        where = f"the closed {scene.objects[box].class_name}" if box is not None else "something closed"
        return f"the {name} is inside {where}"
    if t == 7:
        if pred.capability in (None, "OBJECT") or pred.capability == error.action.verb.upper():
            return f"I cannot {error.action.verb.replace('_', ' ')} that"
        return f"the {name} is not {pred.capability.lower()}"
    if t == 8:
        return "I do not have a free hand"
    if t == 9:
        return f"I am not close to the {name}"
    if pred.kind == "posture_is":
        return "I am sitting" if pred.value == "standing" else "I am standing"
    return "a precondition is not satisfied"


def error_line(scene: SceneGraph, error: PreconditionError, style: str, raw: bool = False) -> str:
    if style == "success_only":
        return "Task Failed"
    base = f"I cannot {error.action.rendered}"
    if style == "implicit":
        return base
    if style == "explicit":
        cause = error.message if raw else describe_violation(scene, error)
        return f"{base} because {cause}"
    raise PlannerConfigError(f"unknown prompt style {style!r}")


def build_corrective_prompt(
    context: tuple[str, Sequence[str]],
    error: PreconditionError,
    style: str,
    scene: SceneGraph,
    corrections: Sequence[CorrectionExample] | None = None,
    *,
    demonstration: Demonstration | None = None,
    raw_violation: bool = False,
) -> str:
    """Prompt asking the LLM for a step that repairs ``error``.

    Few-shot correction examples, when given, take the place of the
    demonstration plan.
    """
    task, executed = context
    parts = []
    if corrections:
        for ex in corrections:
            parts.append(
                f"Task: {ex.task}\nStep: {ex.failed_step}\n"
                f"Error: {ex.error_text}. {CORRECTION_CUE}\nStep: {ex.corrective_action}\n"
            )
    elif demonstration is not None:
        parts.append(format_plan(demonstration.task, demonstration.steps))
    body = format_plan(task, executed)
    line = error_line(scene, error, style, raw=raw_violation)
    body += f"Error: {line}. {CORRECTION_CUE}\nStep {len(executed) + 1}:"
    parts.append(body)
    return "\n".join(parts)


# --------------------------------------------------------------------------
# Traces


@dataclass(frozen=True)
class PlanStep:
    action: GroundedAction
    candidate: ScoredCandidate

    def to_dict(self) -> dict[str, Any]:
        return {"action": self.action.to_dict(), "candidate": self.candidate.to_dict()}


@dataclass(frozen=True)
class CorrectionEvent:
    step_index: int
    error: PreconditionError
    prompt: str
    resolved: bool
    proposal: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "step_index": self.step_index,
            "error": self.error.to_dict(),
            "prompt": self.prompt,
            "resolved": self.resolved,
            "proposal": self.proposal,
        }


@dataclass
class PlanTrace:
    task: str
    strategy: str
    steps: list[PlanStep] = field(default_factory=list)
    corrections: list[CorrectionEvent] = field(default_factory=list)
    completion_calls: int = 0
    scoring_calls: int = 0
    termination: str = "max_steps"
    final_scene: SceneGraph | None = None
    detail: str = ""

    @property
    def actions(self) -> list[GroundedAction]:
        return [s.action for s in self.steps]

    @property
    def step_texts(self) -> list[str]:
        return [s.action.rendered for s in self.steps]

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "strategy": self.strategy,
            "steps": [s.to_dict() for s in self.steps],
            "corrections": [c.to_dict() for c in self.corrections],
            "completion_calls": self.completion_calls,
            "scoring_calls": self.scoring_calls,
            "termination": self.termination,
            "detail": self.detail,
            "final_scene": self.final_scene.to_dict() if self.final_scene is not None else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PlanTrace":
        steps = []
        for s in d["steps"]:
            act = GroundedAction.from_dict(s["action"])
            steps.append(PlanStep(act, ScoredCandidate.from_dict(s["candidate"], act)))
        corrections = [
            CorrectionEvent(
                c["step_index"], PreconditionError.from_dict(c["error"]), c["prompt"], c["resolved"], c.get("proposal")
            )
            for c in d["corrections"]
        ]
        scene = SceneGraph.from_dict(d["final_scene"]) if d.get("final_scene") else None
        return cls(
            d["task"],
            d["strategy"],
            steps,
            corrections,
            d["completion_calls"],
            d["scoring_calls"],
            d["termination"],
            scene,
            d.get("detail", ""),
        )


# --------------------------------------------------------------------------
# Planning


@dataclass
class PlannerConfig:
    strategy: str = "cape"
    prompt_style: str = "explicit"
    few_shot: bool = False
    scorer: str = "weighted"
    k: int = 5
    max_steps: int = 20
    max_corrections_per_step: int = 3
    max_total_corrections: int = 10
    seed: int = 0
    n_samples: int = 5
    temperature: float = 0.5
    presence_penalty: float = 0.5
    max_tokens: int = 32
    beta: float = 0.3
    threshold: float | None = None
    raw_violation: bool = False

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise PlannerConfigError(f"unknown strategy {self.strategy!r}")
        if self.prompt_style not in PROMPT_STYLES:
            raise PlannerConfigError(f"unknown prompt style {self.prompt_style!r}")
        for name in ("k", "max_steps", "max_corrections_per_step", "max_total_corrections", "n_samples"):
            if getattr(self, name) < 1:
                raise PlannerConfigError(f"{name} must be positive")

    def grounding(self, repertoire: list[GroundedAction]) -> GroundingConfig:
        return GroundingConfig(self.scorer, self.beta, self.threshold, repertoire)

    def request(self, prompt: str) -> CompletionRequest:
        return CompletionRequest(
            prompt,
            max_tokens=self.max_tokens,
            temperature=self.temperature,
            presence_penalty=self.presence_penalty,
            n_samples=self.n_samples,
        )


@dataclass
class Backends:
    llm: CompletionBackend
    embedder: EmbeddingProvider


def clean_step(sample: CompletionSample) -> CompletionSample:
    """Keep the first line of a completion, minus any echoed "Step N:" prefix."""
    text = sample.text.strip().splitlines()[0] if sample.text.strip() else ""
    text = _strip_step_prefix(text)
    return CompletionSample(text, sample.token_logprobs)


class _Episode:
    def __init__(self, task, scene, skills, backends, config, demos, corrections):
        self.task = task
        self.scene = scene
        self.skills = skills
        self.backends = backends
        self.config = config
        self.demos = demos
        self.correction_set = corrections
        self.grounding = config.grounding(enumerate_repertoire(scene, skills))
        self.trace = PlanTrace(task, config.strategy)
        self.extra_scoring = 0
        self.halted = False  # open loop: execution stopped at the first failure

    def sample(self, prompt: str) -> list[CompletionSample]:
        return [clean_step(s) for s in self.backends.llm.complete(self.config.request(prompt))]

    def executed(self) -> list[str]:
        return self.trace.step_texts

    def commit(self, cand: ScoredCandidate) -> None:
        self.trace.steps.append(PlanStep(cand.admissible, cand))
        if self.config.strategy == "open_loop":
            if not self.halted and check_preconditions(self.scene, cand.admissible, self.skills) is None:
                self.scene = apply_action(self.scene, cand.admissible, self.skills)
            else:
                self.halted = True
        else:
            self.scene = apply_action(self.scene, cand.admissible, self.skills)

    def run(self) -> PlanTrace:
        cfg = self.config
        llm = self.backends.llm
        calls0, scores0 = llm.completion_calls, llm.scoring_calls
        try:
            self.demo = select_demonstration(self.task, self.demos, self.backends.embedder)
            prompt = build_initial_prompt(self.demo, self.task)
            self.trace.termination = "max_steps"
            for index in range(1, cfg.max_steps + 1):
                samples = self.sample(prompt)
                if not any(s.text for s in samples):
                    self.trace.termination = "done" if self.trace.steps else "empty_program"
                    break
                outcome = self.step(index, samples)
                if outcome is None:
                    break
                prompt = append_step(prompt, outcome.admissible.rendered, index + 1)
        except (BackendError, EmbeddingTransportError) as exc:
            self.trace.termination = "backend_failure"
            self.trace.detail = f"{type(exc).__name__}: {exc}"
        self.trace.completion_calls = llm.completion_calls - calls0
        self.trace.scoring_calls = llm.scoring_calls - scores0 + self.extra_scoring
        self.trace.final_scene = self.scene
        return self.trace

    def step(self, index: int, samples: list[CompletionSample]) -> ScoredCandidate | None:
        """Ground, verify, and commit one step; None terminates the episode."""
        strategy = self.config.strategy
        if strategy == "resample":
            return self._step_resample(index, samples)
        cand = ground_step(samples, self.grounding, self.backends.embedder)
        if cand is None:
            self.trace.termination = "threshold"
            return None
        if strategy == "cape":
            cand = self._correct(index, cand)
            if cand is None:
                self.trace.termination = "exhausted_corrections"
                return None
        self.commit(cand)
        return cand

    def _step_resample(self, index: int, samples: list[CompletionSample]) -> ScoredCandidate | None:
        cfg = self.config
        ranked = rank_candidates(samples, self.grounding, self.backends.embedder)
        if not ranked or ranked[0].score < self.grounding.threshold:
            self.trace.termination = "threshold"
            return None
        pool = [c for c in ranked[: cfg.k] if c.score >= self.grounding.threshold]
        start = len(self.trace.corrections)
        for i, cand in enumerate(pool):
            if i > 0:
                self.extra_scoring += 1
            err = check_preconditions(self.scene, cand.admissible, self.skills)
            if err is None:
                events = self.trace.corrections
                for j in range(start, len(events)):
                    e = events[j]
                    events[j] = CorrectionEvent(e.step_index, e.error, e.prompt, True, e.proposal)
                self.commit(cand)
                return cand
            if len(self.trace.corrections) >= cfg.max_total_corrections:
                break
            self.trace.corrections.append(CorrectionEvent(index, err, "", False, cand.admissible.rendered))
        self.trace.termination = "exhausted_corrections"
        return None

    def _correct(self, index: int, cand: ScoredCandidate) -> ScoredCandidate | None:
        cfg = self.config
        err = check_preconditions(self.scene, cand.admissible, self.skills)
        attempts = 0
        while err is not None:
            if attempts >= cfg.max_corrections_per_step or len(self.trace.corrections) >= cfg.max_total_corrections:
                return None
            examples = None
            if cfg.few_shot:
                examples = select_correction_examples(err.action.rendered, self.correction_set, self.backends.embedder)
            prompt = build_corrective_prompt(
                (self.task, self.executed()),
                err,
                cfg.prompt_style,
                self.scene,
                examples,
                demonstration=None if examples else self.demo,
                raw_violation=cfg.raw_violation,
            )
            attempts += 1
            proposal = ground_step(self.sample(prompt), self.grounding, self.backends.embedder)
            if proposal is None:
                self.trace.corrections.append(CorrectionEvent(index, err, prompt, False, None))
                continue
            new_err = check_preconditions(self.scene, proposal.admissible, self.skills)
            self.trace.corrections.append(
                CorrectionEvent(index, err, prompt, new_err is None, proposal.admissible.rendered)
            )
            if new_err is None:
                return proposal
            err = new_err
        return cand


def plan(
    task: str,
    scene: SceneGraph,
    skills: Skills,
    backends: Backends,
    config: PlannerConfig,
    demos: DemonstrationSet,
    corrections: CorrectionExampleSet | None = None,
) -> PlanTrace:
    """Run one planning episode from ``scene`` and return its trace."""
    if config.strategy == "cape" and config.few_shot:
        if corrections is None or len(corrections.entries) < FEW_SHOT_K:
            raise PlannerConfigError(f"few-shot correction needs at least {FEW_SHOT_K} examples")
    return _Episode(task, scene, skills, backends, config, demos, corrections).run()


def render_trace(trace: PlanTrace, scene: SceneGraph | None = None) -> str:
    """Numbered plan with failed attempts and corrective interjections inline."""
    lines = [f"Task: {trace.task}"]
    by_step: dict[int, list[CorrectionEvent]] = {}
    for c in trace.corrections:
        by_step.setdefault(c.step_index, []).append(c)
    last = max([len(trace.steps)] + list(by_step))
    for i in range(1, last + 1):
        for c in by_step.get(i, []):
            if not c.prompt:
                lines.append(f"Step {i}: {c.error.action.rendered}")
                lines.append(f"Error: {c.error.message}. Re-sampling")
                continue
            line = c.prompt.rsplit("Error: ", 1)[-1].split(f". {CORRECTION_CUE}")[0]
            lines.append(f"Step {i}: {c.error.action.rendered}")
            lines.append(f"Error: {line}. {CORRECTION_CUE}")
        if i <= len(trace.steps):
            lines.append(f"Step {i}: {trace.steps[i - 1].action.rendered}")
    lines.append(f"[{trace.termination}]")
    return "\n".join(lines)

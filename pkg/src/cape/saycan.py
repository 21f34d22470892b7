"""SayCan baseline: score every admissible action by LLM likelihood times affordance.

Each step scores the (optionally subsampled) repertoire plus a ``done``
skill, executes the argmax, and appends it to the prompt. This costs one
scoring call per candidate per step, which is the cost the corrective
planner avoids.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field

from .completion import BackendError, CompletionRequest
from .embedding import EmbeddingTransportError
from .grounding import ScoredCandidate, subsample_repertoire
from .planner import (
    Backends,
    DemonstrationSet,
    PlanStep,
    PlanTrace,
    append_step,
    build_initial_prompt,
    clean_step,
    select_demonstration,
)
from .world import GroundedAction, SceneGraph, Skills, apply_action, check_preconditions, enumerate_repertoire

AFFORDANCE_MODES = ("perfect", "noisy")
NOISY_FLIP_PROBABILITY = 0.06
STOPWORDS = frozenset("a an the to on in into onto of at it my your with from up".split())


@dataclass
class AffordanceModel:
    mode: str = "perfect"
    flip_probability: float = NOISY_FLIP_PROBABILITY
    seed: int = 0
    rng: random.Random = field(init=False, repr=False)
    queries: int = 0
    flips: int = 0

    def __post_init__(self) -> None:
        if self.mode not in AFFORDANCE_MODES:
            raise ValueError(f"unknown affordance mode {self.mode!r}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip_probability must be in [0, 1]")
        self.rng = random.Random(self.seed)

    def __call__(self, scene: SceneGraph, action: GroundedAction, skills: Skills) -> int:
        return affordance(self, scene, action, skills)


def affordance(model: AffordanceModel, scene: SceneGraph, action: GroundedAction, skills: Skills) -> int:
    """1 if the action is judged executable, else 0.

    Noisy mode takes exactly one draw per query so runs replay exactly.
    """
    verdict = 1 if check_preconditions(scene, action, skills) is None else 0
    model.queries += 1
    if model.mode == "noisy":
        if model.rng.random() < model.flip_probability:
            model.flips += 1
            verdict = 1 - verdict
    return verdict


@dataclass
class SayCanConfig:
    use_subsampling: bool = True
    max_steps: int = 20
    done_skill: str = "done"
    seed: int = 0
    prototype: bool = True

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if not self.done_skill.strip():
            raise ValueError("done_skill must be non-empty")


def target_object(prototype: str, object_names: list[str]) -> str:
    """Guess the object a prototype step is about: its last non-stopword token.

    Multi-word names ("ironing board") match on their final word.
    """
    tokens = [t for t in re.findall(r"[a-z0-9]+", prototype.lower()) if t not in STOPWORDS]
    if not tokens:
        return ""
    last = tokens[-1]
    for name in sorted(object_names, key=lambda n: (-len(n), n)):
        words = name.lower().split()
        if words and words[-1] == last and " ".join(words) in " ".join(tokens):
            return name
    for name in sorted(object_names):
        if name.lower().split()[-1:] == [last]:
            return name
    return last


def plan_saycan(
    task: str,
    scene: SceneGraph,
    skills: Skills,
    backends: Backends,
    config: SayCanConfig,
    model: AffordanceModel,
    demos: DemonstrationSet,
) -> PlanTrace:
    llm = backends.llm
    strategy = f"saycan_{model.mode}"
    trace = PlanTrace(task, strategy)
    repertoire = enumerate_repertoire(scene, skills)
    names = sorted({a.object_name for a in repertoire if a.object_name})
    calls0, scores0 = llm.completion_calls, llm.scoring_calls
    trace.termination = "max_steps"
    try:
        demo = select_demonstration(task, demos, backends.embedder)
        prompt = build_initial_prompt(demo, task)
        for index in range(1, config.max_steps + 1):
            subset = repertoire
            if config.use_subsampling:
                proto = ""
                if config.prototype:
                    req = CompletionRequest(prompt, temperature=0.0, presence_penalty=0.0, n_samples=1)
                    proto = clean_step(llm.complete(req)[0]).text
                if proto:
                    subset = subsample_repertoire(proto, target_object(proto, names), repertoire, backends.embedder)
            best: tuple[float, str] | None = None
            best_action: GroundedAction | None = None
            best_lp = 0.0
            for act in subset:
                lp = llm.score_continuation(prompt, " " + act.rendered)
                s = math.exp(lp) * model(scene, act, skills)
                key = (-s, act.rendered)
                if best is None or key < best:
                    best, best_action, best_lp = key, act, lp
            done_lp = llm.score_continuation(prompt, " " + config.done_skill)
            done_key = (-math.exp(done_lp), config.done_skill)
            if best is None or done_key < best:
                best, best_action = done_key, None
            if best[0] == 0.0:
                trace.termination = "exhausted_corrections"
                break
            if best_action is None:
                trace.termination = "done" if trace.steps else "empty_program"
                break
            cand = ScoredCandidate(best_action.rendered, best_action, 1.0, best_lp, -best[0], "saycan")
            trace.steps.append(PlanStep(best_action, cand))
            if check_preconditions(scene, best_action, skills) is None:
                scene = apply_action(scene, best_action, skills)
            prompt = append_step(prompt, best_action.rendered, index + 1)
    except (BackendError, EmbeddingTransportError) as exc:
        trace.termination = "backend_failure"
        trace.detail = f"{type(exc).__name__}: {exc}"
    trace.completion_calls = llm.completion_calls - calls0
    trace.scoring_calls = llm.scoring_calls - scores0
    trace.final_scene = scene
    return trace

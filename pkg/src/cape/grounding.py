"""Translate free-form step text into admissible actions.

Each generated sample is compared to every admissible action by embedding
cosine similarity and combined with the sample's mean token log-probability
through one of two scorers:

* weighted:  C + beta * P          (unbounded below)
* geometric: (C + 1) / 2 * exp(P)  (bounded to [0, 1])

For each admissible action the best-scoring sample is kept; the admissible
action with the highest such score wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .completion import CompletionSample
from .embedding import EmbeddingProvider
from .world import GroundedAction

SCORERS = ("weighted", "geometric")
DEFAULT_BETA = 0.3
DEFAULT_THRESHOLDS = {"weighted": 0.0, "geometric": 0.4}
SUBSAMPLE_SIMILAR = 500
SUBSAMPLE_TARGET = 1000
_C_TOL = 1e-9


class GroundingConfigError(ValueError):
    pass


def score_weighted(similarity: float, mean_logprob: float, beta: float = DEFAULT_BETA) -> float:
    if not -1.0 - _C_TOL <= similarity <= 1.0 + _C_TOL:
        raise ValueError(f"similarity {similarity} outside [-1, 1]")
    return similarity + beta * mean_logprob


def score_geometric(similarity: float, mean_logprob: float) -> float:
    if not -1.0 - _C_TOL <= similarity <= 1.0 + _C_TOL:
        raise ValueError(f"similarity {similarity} outside [-1, 1]")
    if mean_logprob > 0:
        raise ValueError("mean log-probability must be <= 0")
    return (similarity + 1.0) / 2.0 * math.exp(mean_logprob)


@dataclass(frozen=True)
class ScoredCandidate:
    free_text: str
    admissible: GroundedAction
    similarity: float
    mean_logprob: float
    score: float
    scorer: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "free_text": self.free_text,
            "admissible": self.admissible.rendered,
            "similarity": self.similarity,
            "mean_logprob": self.mean_logprob,
            "score": self.score,
            "scorer": self.scorer,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], action: GroundedAction) -> "ScoredCandidate":
        return cls(d["free_text"], action, d["similarity"], d["mean_logprob"], d["score"], d["scorer"])


@dataclass
class GroundingConfig:
    scorer: str = "weighted"
    beta: float = DEFAULT_BETA
    threshold: float | None = None
    repertoire: list[GroundedAction] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.scorer not in SCORERS:
            raise GroundingConfigError(f"unknown scorer {self.scorer!r}")
        if self.beta < 0:
            raise GroundingConfigError("beta must be >= 0")
        if self.threshold is None:
            self.threshold = DEFAULT_THRESHOLDS[self.scorer]


def _score_matrix(sim: np.ndarray, logp: np.ndarray, config: GroundingConfig) -> np.ndarray:
    if config.scorer == "weighted":
        return sim + config.beta * logp[:, None]
    if np.any(logp > 0):
        raise ValueError("mean log-probability must be <= 0")
    return (sim + 1.0) / 2.0 * np.exp(logp)[:, None]


def rank_candidates(
    samples: Sequence[CompletionSample], config: GroundingConfig, embedder: EmbeddingProvider
) -> list[ScoredCandidate]:
    """Every admissible action with its best sample score, best first.

    Ties are broken by the rendered action string. Blank samples are ignored.
    """
    if not config.repertoire:
        raise GroundingConfigError("empty repertoire")
    usable = [s for s in samples if s.text.strip()]
    if not usable:
        return []
    texts = [s.text.strip() for s in usable]
    rendered = [a.rendered for a in config.repertoire]
    sim = np.clip(embedder.matrix(texts) @ embedder.matrix(rendered).T, -1.0, 1.0)
    logp = np.array([s.mean_logprob for s in usable])
    scores = _score_matrix(sim, logp, config)
    best_i = np.argmax(scores, axis=0)  # first sample wins ties
    cols = np.arange(len(rendered))
    best = scores[best_i, cols]
    order = sorted(cols, key=lambda j: (-best[j], rendered[j]))
    return [
        ScoredCandidate(
            free_text=texts[best_i[j]],
            admissible=config.repertoire[j],
            similarity=float(sim[best_i[j], j]),
            mean_logprob=float(logp[best_i[j]]),
            score=float(best[j]),
            scorer=config.scorer,
        )
        for j in order
    ]


def ground_step(
    samples: Sequence[CompletionSample], config: GroundingConfig, embedder: EmbeddingProvider
) -> ScoredCandidate | None:
    """Best admissible action for the samples, or None when below threshold."""
    ranked = rank_candidates(samples, config, embedder)
    if not ranked or ranked[0].score < config.threshold:
        return None
    return ranked[0]


def subsample_repertoire(
    prototype: str,
    target_object: str,
    repertoire: Sequence[GroundedAction],
    embedder: EmbeddingProvider,
    *,
    n_similar: int = SUBSAMPLE_SIMILAR,
    n_target: int = SUBSAMPLE_TARGET,
) -> list[GroundedAction]:
    """Union of the most prototype-similar actions and actions on ``target_object``.

    Both parts are ranked by similarity to the prototype (ties by rendered
    string), so the target part is the ``n_target`` most similar actions on
    the target object. Small repertoires pass through whole.
    """
    if not repertoire:
        raise GroundingConfigError("empty repertoire")
    if len(repertoire) <= n_similar + n_target:
        return list(repertoire)
    rendered = [a.rendered for a in repertoire]
    q = embedder.matrix([prototype])[0]
    sim = embedder.matrix(rendered) @ q
    order = sorted(range(len(repertoire)), key=lambda j: (-sim[j], rendered[j]))
    similar = order[:n_similar]
    target = [j for j in order if repertoire[j].object_name == target_object][:n_target]
    keep = set(similar) | set(target)
    return [repertoire[j] for j in order if j in keep]

from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cape.completion import CompletionSample
from cape.embedding import TrigramEmbedder, cosine
from cape.grounding import (
    GroundingConfig,
    GroundingConfigError,
    ground_step,
    rank_candidates,
    score_geometric,
    score_weighted,
    subsample_repertoire,
)
from cape.world import GroundedAction, enumerate_repertoire

sims = st.floats(min_value=-1.0, max_value=1.0)
logps = st.floats(min_value=-50.0, max_value=0.0)


def _acts(*texts):
    return [GroundedAction("x", i, t.split()[-1], t) for i, t in enumerate(texts)]


def _sample(text, lp):
    return CompletionSample(text, (lp,))


@settings(max_examples=300)
@given(sims, logps)
def test_geometric_is_bounded(c, p):
    assert 0.0 <= score_geometric(c, p) <= 1.0


@settings(max_examples=200)
@given(sims, sims, logps)
def test_geometric_monotone_in_similarity(c1, c2, p):
    lo, hi = sorted((c1, c2))
    assert score_geometric(lo, p) <= score_geometric(hi, p)


@settings(max_examples=200)
@given(sims, logps, logps)
def test_geometric_monotone_in_logprob(c, p1, p2):
    lo, hi = sorted((p1, p2))
    assert score_geometric(c, lo) <= score_geometric(c, hi)


def test_geometric_extremes():
    assert score_geometric(1.0, 0.0) == 1.0
    assert score_geometric(-1.0, -3.0) == 0.0


def test_weighted_is_unbounded_below():
    assert score_weighted(-1.0, -20.0, 0.3) == pytest.approx(-7.0)


def test_geometric_rejects_positive_logprob():
    with pytest.raises(ValueError):
        score_geometric(0.5, 0.1)


def test_config_defaults_threshold_per_scorer():
    assert GroundingConfig("weighted").threshold == 0.0
    assert GroundingConfig("geometric").threshold == 0.4
    with pytest.raises(GroundingConfigError):
        GroundingConfig("cubic")


@pytest.mark.parametrize("scorer", ["weighted", "geometric"])
def test_rank_matches_brute_force(household, embedder, scorer):
    skills, scene = household
    rep = enumerate_repertoire(scene, skills)
    samples = [_sample("take the milk", -0.4), _sample("open fridge door", -1.2), _sample("go to kitchen", -0.2)]
    cfg = GroundingConfig(scorer, beta=0.3, repertoire=rep)
    got = rank_candidates(samples, cfg, embedder)

    def score(c, p):
        return score_weighted(c, p, 0.3) if scorer == "weighted" else score_geometric(c, p)

    brute = {}
    for a in rep:
        brute[a.rendered] = max(score(cosine(embedder.embed(s.text), embedder.embed(a.rendered)), s.mean_logprob) for s in samples)
    order = sorted(brute, key=lambda r: (-brute[r], r))
    assert [c.admissible.rendered for c in got] == order
    for c in got:
        assert c.score == pytest.approx(brute[c.admissible.rendered], abs=1e-9)


def test_exact_text_wins(household, embedder):
    skills, scene = household
    cfg = GroundingConfig(repertoire=enumerate_repertoire(scene, skills))
    best = ground_step([_sample("open fridge", -0.1)], cfg, embedder)
    assert best.admissible.rendered == "open fridge"
    assert best.similarity == pytest.approx(1.0)


def test_below_threshold_returns_none(embedder):
    cfg = GroundingConfig("geometric", repertoire=_acts("grab milk"))
    assert ground_step([_sample("zzz qqq", -5.0)], cfg, embedder) is None


def test_blank_samples_are_ignored(embedder):
    cfg = GroundingConfig(repertoire=_acts("grab milk"))
    assert rank_candidates([CompletionSample("   ")], cfg, embedder) == []


def test_ties_break_lexicographically():
    class Flat(TrigramEmbedder):
        def _vector(self, text):
            return super()._vector("same")

    cfg = GroundingConfig(repertoire=_acts("grab milk", "grab apple", "find milk"))
    ranked = rank_candidates([_sample("anything", -0.1)], cfg, Flat())
    assert [c.admissible.rendered for c in ranked] == ["find milk", "grab apple", "grab milk"]


# Two samples over the same actions where the weighted scorer (beta=3) and
# the geometric scorer disagree on the argmax.
WITNESS_ACTIONS = ("grab milk", "open fridge", "walk to kitchen")
WITNESS_SAMPLES = (("grab milk", -0.2), ("open the fridge", -0.1))


def test_scorer_disagreement_witness(embedder):
    acts = _acts(*WITNESS_ACTIONS)
    samples = [_sample(t, p) for t, p in WITNESS_SAMPLES]
    w = ground_step(samples, GroundingConfig("weighted", beta=3.0, threshold=-math.inf, repertoire=acts), embedder)
    g = ground_step(samples, GroundingConfig("geometric", threshold=-math.inf, repertoire=acts), embedder)
    assert w.admissible.rendered == "open fridge"
    assert g.admissible.rendered == "grab milk"

    def brute(f):
        table = {a: max(f(cosine(embedder.embed(t), embedder.embed(a)), p) for t, p in WITNESS_SAMPLES) for a in WITNESS_ACTIONS}
        return min(table, key=lambda a: (-table[a], a))

    assert brute(lambda c, p: c + 3.0 * p) == w.admissible.rendered
    assert brute(lambda c, p: (c + 1) / 2 * math.exp(p)) == g.admissible.rendered


def _synthetic_repertoire(n_objects, verbs):
    out = []
    for i in range(n_objects):
        for v in verbs:
            out.append(GroundedAction(v, i, f"thing{i}", f"{v} thing{i}"))
    return out


def test_subsample_passthrough_when_small(embedder):
    rep = _synthetic_repertoire(10, ["grab", "open"])
    assert subsample_repertoire("grab thing3", "thing3", rep, embedder) == rep


def test_subsample_contract_brute_force():
    e = TrigramEmbedder()
    rep = _synthetic_repertoire(100, [f"verb{j}" for j in range(30)])
    got = subsample_repertoire("verb4 thing7", "thing7", rep, e, n_similar=50, n_target=20)
    q = e.embed("verb4 thing7")
    order = sorted(rep, key=lambda a: (-cosine(q, e.embed(a.rendered)), a.rendered))
    assert set(order[:50]) <= set(got)
    target = [a for a in order if a.object_name == "thing7"][:20]
    assert set(target) <= set(got)
    assert len(got) == len(set(order[:50]) | set(target))

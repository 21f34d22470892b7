from __future__ import annotations

import json
import math

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cape.embedding import (
    EmbeddingInputError,
    EmbeddingTransportError,
    EmbeddingVector,
    RemoteEmbedder,
    TrigramEmbedder,
    UndefinedSimilarityError,
    cosine,
    fnv1a,
    rank_by_similarity,
    trigrams,
)

words = st.text(alphabet="abcdefghij klm", min_size=1, max_size=20).filter(lambda s: s.strip())


def test_fnv1a_reference_values():
    # published FNV-1a 32-bit test vectors
    assert fnv1a(b"") == 0x811C9DC5
    assert fnv1a(b"a") == 0xE40C292C
    assert fnv1a(b"foobar") == 0xBF9CF968


def test_trigrams_pad_and_normalise():
    assert trigrams("Ab") == [" ab", "ab "]
    assert trigrams("  GRAB   milk ") == trigrams("grab milk")


def test_offline_vectors_are_unit_and_deterministic():
    a = TrigramEmbedder(cache=False).embed("grab milk")
    b = TrigramEmbedder(cache=False).embed("grab milk")
    assert a.dimension == 256
    assert math.isclose(a.norm, 1.0)
    assert np.array_equal(a.values, b.values)


def test_identical_text_has_similarity_one(embedder):
    v = embedder.embed("walk to kitchen")
    assert cosine(v, v) == pytest.approx(1.0)


def test_opposite_vectors_give_minus_one(embedder):
    v = embedder.embed("open fridge")
    assert cosine(v, -v) == pytest.approx(-1.0)


def test_zero_vector_similarity_is_undefined():
    z = EmbeddingVector.of([0.0, 0.0])
    with pytest.raises(UndefinedSimilarityError):
        cosine(z, EmbeddingVector.of([1.0, 0.0]))


def test_dimension_mismatch_rejected():
    with pytest.raises(EmbeddingInputError):
        cosine(EmbeddingVector.of([1.0]), EmbeddingVector.of([1.0, 0.0]))


def test_empty_text_rejected(embedder):
    with pytest.raises(EmbeddingInputError):
        embedder.embed("   ")


@settings(max_examples=100, deadline=None)
@given(words, words)
def test_cosine_symmetric_and_bounded(a, b):
    e = TrigramEmbedder()
    u, v = e.embed(a), e.embed(b)
    c = cosine(u, v)
    assert -1.0 <= c <= 1.0
    assert c == pytest.approx(cosine(v, u), abs=1e-12)


def test_rank_matches_brute_force(embedder):
    cands = ["walk to kitchen", "grab milk", "open fridge", "grab glass", "sit on couch", "find milk"]
    got = rank_by_similarity("get the milk", cands, 6, embedder)
    q = embedder.embed("get the milk")
    brute = sorted(cands, key=lambda c: (-cosine(q, embedder.embed(c)), c))
    assert [c for c, _ in got] == brute


def test_rank_rejects_bad_arguments(embedder):
    with pytest.raises(EmbeddingInputError):
        rank_by_similarity("x", [], 1, embedder)
    with pytest.raises(EmbeddingInputError):
        rank_by_similarity("x", ["y"], 0, embedder)


def _remote(handler, **kw):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return RemoteEmbedder("http://embed.test/v1", api_key="k", client=client, sleep=lambda s: None, **kw)


def test_remote_embedder_posts_inputs_and_reads_vectors():
    seen = []

    def handler(request):
        seen.append(request)
        inputs = json.loads(request.content)["input"]
        data = [{"index": i, "embedding": [float(len(t)), 1.0]} for i, t in enumerate(inputs)]
        return httpx.Response(200, json={"data": list(reversed(data))})

    emb = _remote(handler)
    vecs = emb.embed_batch(["ab", "abcd"])
    assert [v.values.tolist() for v in vecs] == [[2.0, 1.0], [4.0, 1.0]]
    assert str(seen[0].url) == "http://embed.test/v1/embeddings"
    assert seen[0].headers["authorization"] == "Bearer k"
    emb.embed("ab")
    assert len(seen) == 1  # cached


def test_remote_embedder_retries_server_errors():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json={"data": [{"index": 0, "embedding": [1.0, 0.0]}]})

    assert _remote(handler).embed("x").values.tolist() == [1.0, 0.0]
    assert len(calls) == 3


def test_remote_embedder_gives_up_after_retries():
    def handler(request):
        return httpx.Response(500)

    with pytest.raises(EmbeddingTransportError) as info:
        _remote(handler, max_retries=2).embed("x")
    assert info.value.attempts == 3
    assert info.value.status == 500


def test_remote_embedder_does_not_retry_client_errors():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, text="bad key")

    with pytest.raises(EmbeddingTransportError) as info:
        _remote(handler).embed("x")
    assert not info.value.retryable
    assert len(calls) == 1

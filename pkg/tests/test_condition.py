import json
import threading

import numpy as np
import pytest

from vecdiff.condition import (
    RemoteEmbedder,
    StyleRegistry,
    TextEmbedding,
    ToyEmbedder,
    format_styled_prompt,
)
from vecdiff.customize import MockTeacherServer
from vecdiff.errors import MalformedResponse, RemoteUnavailable, UnknownStyle


def test_toy_embedder_deterministic():
    emb = ToyEmbedder(dim=64, seed=0)
    a = emb.embed("a small star")
    b = emb.embed("a small star")
    assert np.array_equal(a.vectors, b.vectors)
    fresh = ToyEmbedder(dim=64, seed=0).embed("a small star")
    assert np.array_equal(a.vectors, fresh.vectors)


def test_toy_embedder_empty_prompt_is_null():
    emb = ToyEmbedder(dim=32, seed=0)
    e = emb.embed("")
    assert e.null
    assert e.vectors.shape == (1, 32)
    assert np.all(e.vectors == 0.0)
    assert emb.embed("  \t ").null


def test_toy_embedder_distinct_words_nearly_orthogonal():
    emb = ToyEmbedder(dim=64, seed=0)
    a = emb.embed("star").vectors[0]
    b = emb.embed("house").vectors[0]
    cos = float(a @ b)
    assert abs(cos) < 0.5


def test_toy_embedder_token_count_capped():
    emb = ToyEmbedder(dim=16, seed=0)
    e = emb.embed(" ".join(f"w{i}" for i in range(40)))
    assert e.vectors.shape[0] == 16


def test_toy_embedder_unit_vectors():
    emb = ToyEmbedder(dim=48, seed=3)
    vecs = emb.embed("alpha beta gamma").vectors
    assert np.allclose(np.linalg.norm(vecs, axis=1), 1.0, atol=1e-6)


def test_style_registry_unique_tokens_and_vectors():
    reg = StyleRegistry(dim=16, seed=0)
    t1 = reg.register("flat")
    t2 = reg.register("neon")
    assert t1 == "[V*_0]" and t2 == "[V*_1]"
    assert reg.register("flat") == t1  # idempotent
    assert reg.vector("flat").shape == (16,)
    assert not np.array_equal(reg.vector("flat"), reg.vector("neon"))
    with pytest.raises(UnknownStyle):
        reg.token("missing")


def test_style_registry_persistence_bit_identical():
    reg = StyleRegistry(dim=8, seed=1)
    reg.register("a")
    reg.register("b")
    reg.set_vector("a", np.linspace(-1, 1, 8, dtype=np.float32) * np.float32(np.pi))
    reg2 = StyleRegistry.from_json(reg.to_json())
    for name in ("a", "b"):
        assert reg2.token(name) == reg.token(name)
        assert np.array_equal(reg2.vector(name), reg.vector(name))
        assert reg2.vector(name).dtype == np.float32


def test_format_styled_prompt():
    emb = ToyEmbedder(dim=16, seed=0)
    reg = StyleRegistry(dim=16, seed=0)
    reg.register("sticker")
    text, e = format_styled_prompt("a dog", "sticker", reg, emb)
    assert text == "a dog in [V*_0] style"
    base = emb.embed("a dog")
    assert e.vectors.shape[0] == base.vectors.shape[0] + 1
    assert np.array_equal(e.vectors[:-1], base.vectors)
    assert np.array_equal(e.vectors[-1], reg.vector("sticker"))
    with pytest.raises(UnknownStyle):
        format_styled_prompt("a dog", "nope", reg, emb)


def test_two_styles_differ_only_in_appended_vector():
    emb = ToyEmbedder(dim=16, seed=0)
    reg = StyleRegistry(dim=16, seed=0)
    reg.register("s1")
    reg.register("s2")
    _t1, e1 = format_styled_prompt("a cat", "s1", reg, emb)
    _t2, e2 = format_styled_prompt("a cat", "s2", reg, emb)
    assert np.array_equal(e1.vectors[:-1], e2.vectors[:-1])
    assert not np.array_equal(e1.vectors[-1], e2.vectors[-1])


# ---------------------------------------------------------------------------
# remote embedder against the bundled mock server

def test_remote_embedder_roundtrip():
    with MockTeacherServer(embed_dim=24) as server:
        emb = RemoteEmbedder(server.url, timeout=5.0, retries=2)
        e = emb.embed("hello world")
        assert e.vectors.shape == (1, 24)
        again = emb.embed("hello world")
        assert np.allclose(e.vectors, again.vectors)
        assert emb.embed("").null


def test_remote_embedder_retries_then_succeeds():
    with MockTeacherServer(embed_dim=8, fail_times=2) as server:
        emb = RemoteEmbedder(server.url, timeout=5.0, retries=3)
        assert emb.embed("x").vectors.shape == (1, 8)


def test_remote_embedder_unavailable_after_retries():
    with MockTeacherServer(embed_dim=8, fail_times=10) as server:
        emb = RemoteEmbedder(server.url, timeout=5.0, retries=3)
        with pytest.raises(RemoteUnavailable):
            emb.embed("x")


def test_remote_embedder_unreachable_host():
    emb = RemoteEmbedder("http://127.0.0.1:9", timeout=0.2, retries=2)
    with pytest.raises(RemoteUnavailable):
        emb.embed("x")

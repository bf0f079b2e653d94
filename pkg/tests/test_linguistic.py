import numpy as np
import pytest

from srtr.errors import BankLookupError, InputError, LoadError
from srtr.linguistic import (
    PrototypeMemory,
    TextBank,
    TripletText,
    build_prompts,
    embed_text,
    load_embedding_bank,
    surrogate_embedding,
)


def test_prompts_follow_template():
    assert build_prompts("circle", "left of", "star") == (
        "A photo of circle", "A photo of circle left of star", "A photo of star")
    with pytest.raises(InputError):
        build_prompts("circle", " ", "star")


def test_surrogate_is_deterministic_unit_and_seeded():
    a = surrogate_embedding("A photo of circle", 0, 64)
    assert np.array_equal(a, surrogate_embedding("a  PHOTO of circle", 0, 64))
    assert abs(np.linalg.norm(a) - 1) < 1e-12
    assert not np.allclose(a, surrogate_embedding("A photo of circle", 1, 64))


def test_shared_tokens_make_prompts_similar():
    a = surrogate_embedding("A photo of circle left of star", 0, 256)
    b = surrogate_embedding("A photo of circle left of ring", 0, 256)
    c = surrogate_embedding("A photo of moon inside crown", 0, 256)
    assert a @ b > a @ c


def test_imported_bank_lookup_and_errors(tmp_path):
    bank = TextBank(3, entries={"a photo of circle": np.array([1.0, 0, 0])})
    bank.save(tmp_path / "bank.txt")
    loaded = load_embedding_bank(tmp_path / "bank.txt", expected_dim=3)
    assert np.array_equal(embed_text("A photo of circle", loaded), [1.0, 0, 0])
    with pytest.raises(BankLookupError):
        embed_text("A photo of star", loaded)

    cases = {
        "vla-bank v2 dim=3\n": ":1:",
        "vla-bank v1 dim=3\nkey 1 2 3\n": ":2:",
        "vla-bank v1 dim=3\nk\t1 2\n": ":2:",
        "vla-bank v1 dim=3\nk\t1 2 x\n": ":2:",
        "vla-bank v1 dim=3\nk\t1 2 3\nk\t1 2 3\n": ":3:",
        "vla-bank v1 dim=3\nk\t0 0 0\n": ":2:",
    }
    for text, where in cases.items():
        (tmp_path / "bad.txt").write_text(text)
        with pytest.raises(LoadError, match=where):
            load_embedding_bank(tmp_path / "bad.txt")
    with pytest.raises(LoadError, match="dimension"):
        load_embedding_bank(tmp_path / "bank.txt", expected_dim=4)


def test_loaded_vectors_are_renormalized(tmp_path):
    (tmp_path / "b.txt").write_text("vla-bank v1 dim=2\nx\t3 4\n")
    np.testing.assert_allclose(embed_text("x", load_embedding_bank(tmp_path / "b.txt")), [0.6, 0.8])


def test_prototype_moving_average():
    mem = PrototypeMemory(2, 2, momentum=0.9)
    assert not mem.initialized(0)
    mem.update(0, [1.0, 0.0])
    np.testing.assert_allclose(mem.lookup([0])[0], [1.0, 0.0])
    mem.update(0, [0.0, 1.0])
    np.testing.assert_allclose(mem.lookup([0])[0], [0.9, 0.1])
    np.testing.assert_allclose(mem.lookup([1])[0], [0.0, 0.0])


def test_prototype_exact_mean():
    mem = PrototypeMemory(1, 1, exact_mean=True)
    for v in (1.0, 2.0, 6.0):
        mem.update(0, [v])
    assert mem.lookup([0])[0, 0] == pytest.approx(3.0)


def test_triplet_text_batches_rows():
    text = TripletText(TextBank(16), ["circle", "star"], ["left of", "above"])
    s, p, o = text.batch([(0, 1, 1), (1, 0, 0)])
    assert s.shape == p.shape == o.shape == (2, 16)
    assert np.array_equal(s[0], o[1])
    assert not np.allclose(p[0], p[1])

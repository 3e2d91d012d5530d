import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semfsl.databank import FeatureBank, SynthSpec, synth_generate
from semfsl.errors import DimensionError, MissingEmbeddingError, ParseError
from semfsl.semstore import (
    EmbeddingTable,
    build_table,
    coverage_check,
    embedding_for_class,
    load_word_vectors,
    write_word_vectors,
)


def write(tmp_path, text, name="vec.txt"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_single_line_with_unicode_minus(tmp_path):
    table = load_word_vectors(write(tmp_path, "dog 0.5 −0.25\n"), 2)
    assert list(table) == ["dog"] and table["dog"].tolist() == [0.5, -0.25]


def test_empty_file(tmp_path):
    assert load_word_vectors(write(tmp_path, ""), 300) == {}


def test_three_line_fixture(tmp_path):
    text = "cat 1 2 3\n\nking 0.125 -4e-2 7\ncrab -1.5 0 1e3\n"
    table = load_word_vectors(write(tmp_path, text), 3)
    assert len(table) == 3
    assert table["cat"].tolist() == [1.0, 2.0, 3.0]
    assert table["king"].tolist() == [0.125, -0.04, 7.0]
    assert table["crab"].tolist() == [-1.5, 0.0, 1000.0]


def test_wrong_arity_reports_line(tmp_path):
    with pytest.raises(ParseError) as info:
        load_word_vectors(write(tmp_path, "a 1 2\nb 1\n"), 2)
    assert info.value.line == 2 and "line 2" in str(info.value)


def test_unparseable_value_reports_line(tmp_path):
    with pytest.raises(ParseError) as info:
        load_word_vectors(write(tmp_path, "a 1 2\n\nb 1 x\n"), 2)
    assert info.value.line == 3


def test_embedding_for_class_examples():
    v = np.array([0.3, -0.7])
    tokens = {"dog": v, "king": np.array([1.0, 0.0]), "crab": np.array([0.0, 1.0])}
    assert embedding_for_class(tokens, "dog").tolist() == v.tolist()
    assert embedding_for_class(tokens, "King_Crab").tolist() == [0.5, 0.5]
    assert embedding_for_class({"king": v, "crab": v}, "king-crab").tolist() == v.tolist()


def test_joined_token_takes_precedence():
    tokens = {"king": np.zeros(2), "crab": np.ones(2), "king_crab": np.array([9.0, 9.0])}
    assert embedding_for_class(tokens, "king crab").tolist() == [9.0, 9.0]


def test_missing_token_named():
    with pytest.raises(MissingEmbeddingError, match="retriever"):
        embedding_for_class({"golden": np.zeros(2)}, "golden retriever")


@given(st.permutations(["a", "b", "c", "d"]))
def test_mean_order_invariant(order):
    rng = np.random.default_rng(0)
    tokens = {t: rng.normal(size=4) for t in "abcd"}
    np.testing.assert_allclose(embedding_for_class(tokens, " ".join(order)), embedding_for_class(tokens, "a b c d"), atol=1e-15)


def test_table_normalizes_keys_and_dims():
    table = EmbeddingTable(2, {"Golden_Retriever": [1.0, 2.0]})
    assert "golden retriever" in table and "GOLDEN-retriever" in table
    with pytest.raises(MissingEmbeddingError):
        table["poodle"]
    with pytest.raises(DimensionError):
        EmbeddingTable(3, {"a": [1.0]})


def test_unit_norm_flag():
    table = build_table({"a": np.array([3.0, 4.0])}, ["a"], unit_norm=True)
    assert table["a"].tolist() == [0.6, 0.8]
    assert build_table({"a": np.array([3.0, 4.0])}, ["a"])["a"].tolist() == [3.0, 4.0]


def test_write_read_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    table = EmbeddingTable(4, {"king crab": rng.normal(size=4), "dog": rng.normal(size=4)})
    write_word_vectors(tmp_path / "v.txt", table)
    tokens = load_word_vectors(tmp_path / "v.txt", 4)
    again = build_table(tokens, ["king crab", "dog"], 4)
    for name in ("king crab", "dog"):
        assert again[name].tobytes() == table[name].tobytes()


def test_coverage_check():
    bank, table = synth_generate(SynthSpec(n_classes=3, samples_per_class=1, d_v=2, d_e=2))
    assert coverage_check(table, bank) == []
    extra = FeatureBank(bank.d_v, bank.classes + FeatureBank.from_arrays(2, [("zebra", "test", [[0.0, 0.0]])]).classes)
    assert coverage_check(table, extra) == ["zebra"]
    fixture = FeatureBank.from_arrays(1, [("dog", "train", [[0.0]]), ("cat", "train", [[0.0]]), ("king crab", "val", [[0.0]])])
    assert coverage_check({"dog": np.zeros(1), "king": np.zeros(1), "crab": np.zeros(1)}, fixture) == ["cat"]

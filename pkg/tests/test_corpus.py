import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vpgan.corpus import (
    Corpus,
    CorpusError,
    CorpusParseError,
    DimensionMismatchError,
    DuplicateKeyError,
    MalformedHeaderError,
    SpeakerEmbedding,
    SyntheticCorpusSpec,
    generate_pool,
    generate_synthetic,
    read_corpus,
    write_corpus,
)
from vpgan.privacy import asv_score, group_eers

SMALL = SyntheticCorpusSpec(speaker_count=12, utterances_per_speaker=6, dim=40, rank=8)


def tiny(vectors=None, name="c"):
    vectors = np.arange(6.0).reshape(3, 2) if vectors is None else vectors
    return Corpus(name, "trial", vectors, ["a", "a", "b"], ["1", "2", "1"], ["F", "F", "M"])


def test_single_embedding_corpus_is_valid(tmp_path):
    c = Corpus.from_embeddings("one", "trial", [SpeakerEmbedding(np.array([1.0, 2.0]), "s", "u")])
    assert len(c) == 1 and c.speaker_ids() == ["s"]
    for ext in (".vpemb", ".jsonl"):
        assert read_corpus(write_corpus(c, tmp_path / f"one{ext}")) == c


@pytest.mark.parametrize("ext", [".vpemb", ".jsonl"])
def test_round_trip(tmp_path, ext):
    enroll, _ = generate_synthetic(SMALL)
    assert read_corpus(write_corpus(enroll, tmp_path / f"e{ext}")) == enroll


@given(values=st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=8))
def test_jsonl_round_trip_is_bit_exact(values, tmp_path_factory):
    c = Corpus("x", "trial", np.array([values]), ["s"], ["u"])
    path = write_corpus(c, tmp_path_factory.mktemp("j") / "x.jsonl")
    assert read_corpus(path).vectors.tobytes() == c.vectors.tobytes()


@given(values=st.lists(st.floats(allow_nan=False, allow_infinity=False, width=32), min_size=1, max_size=8))
def test_binary_round_trip_is_bit_exact_for_f32(values, tmp_path_factory):
    c = Corpus("x", "trial", np.array([values]), ["s"], ["u"])
    path = write_corpus(c, tmp_path_factory.mktemp("b") / "x.vpemb")
    assert read_corpus(path) == c


def test_binary_layout(tmp_path):
    data = write_corpus(tiny(), tmp_path / "t.vpemb").read_bytes()
    assert data[:5] == b"VPEMB"
    assert [int.from_bytes(data[5 + 4 * k : 9 + 4 * k], "little") for k in range(3)] == [1, 2, 3]


@pytest.mark.parametrize("cut", [3, 10, 20, 40, -1])
def test_truncated_binary_names_offset(tmp_path, cut):
    data = write_corpus(tiny(), tmp_path / "t.vpemb").read_bytes()
    (tmp_path / "bad.vpemb").write_bytes(data[:cut])
    with pytest.raises(CorpusParseError) as err:
        read_corpus(tmp_path / "bad.vpemb")
    assert err.value.offset is not None
    assert "offset" in str(err.value)


def test_trailing_bytes_rejected(tmp_path):
    data = write_corpus(tiny(), tmp_path / "t.vpemb").read_bytes()
    (tmp_path / "bad.vpemb").write_bytes(data + b"\0")
    with pytest.raises(CorpusParseError):
        read_corpus(tmp_path / "bad.vpemb")


def test_bad_version_is_malformed_header(tmp_path):
    data = bytearray(write_corpus(tiny(), tmp_path / "t.vpemb").read_bytes())
    data[5] = 9
    (tmp_path / "bad.vpemb").write_bytes(bytes(data))
    with pytest.raises(MalformedHeaderError):
        read_corpus(tmp_path / "bad.vpemb")


def test_malformed_jsonl_header(tmp_path):
    (tmp_path / "h.jsonl").write_text('{"corpus": "x", "dim": "many"}\n')
    with pytest.raises(MalformedHeaderError):
        read_corpus(tmp_path / "h.jsonl")
    (tmp_path / "g.jsonl").write_text("{not json\n")
    with pytest.raises(MalformedHeaderError):
        read_corpus(tmp_path / "g.jsonl")


def test_jsonl_dimension_mismatch(tmp_path):
    rows = [{"speaker": "a", "utterance": "1", "vector": [1.0, 2.0]}, {"speaker": "a", "utterance": "2", "vector": [1.0]}]
    (tmp_path / "d.jsonl").write_text("\n".join(json.dumps(r) for r in rows))
    with pytest.raises(DimensionMismatchError):
        read_corpus(tmp_path / "d.jsonl")


def test_duplicate_keys(tmp_path):
    rows = [{"speaker": "a", "utterance": "1", "vector": [1.0]}] * 2
    (tmp_path / "d.jsonl").write_text("\n".join(json.dumps(r) for r in rows))
    with pytest.raises(DuplicateKeyError):
        read_corpus(tmp_path / "d.jsonl")


def test_error_kinds_are_distinct():
    kinds = {MalformedHeaderError, DimensionMismatchError, DuplicateKeyError}
    assert len(kinds) == 3 and all(issubclass(k, CorpusError) for k in kinds)
    assert not issubclass(DimensionMismatchError, CorpusParseError)
    assert not issubclass(DuplicateKeyError, CorpusParseError)


def test_jsonl_without_header_uses_file_stem(tmp_path):
    (tmp_path / "raw.jsonl").write_text(json.dumps({"speaker": "a", "utterance": "1", "vector": [0.5]}) + "\n")
    c = read_corpus(tmp_path / "raw.jsonl")
    assert c.name == "raw" and c.sexes == ("unspecified",)


def test_corpus_validation():
    with pytest.raises(CorpusError):
        Corpus("x", "trial", np.zeros((0, 3)), [], [])
    with pytest.raises(CorpusError):
        Corpus("x", "trial", [[np.nan]], ["a"], ["1"])
    with pytest.raises(CorpusError):
        Corpus("x", "trial", [[1.0]], ["a"], ["1"], ["X"])
    with pytest.raises(DimensionMismatchError):
        Corpus.from_embeddings("x", "t", [SpeakerEmbedding(np.zeros(2), "a", "1"), SpeakerEmbedding(np.zeros(3), "a", "2")])


def test_corpus_is_immutable():
    c = tiny()
    with pytest.raises(ValueError):
        c.vectors[0, 0] = 1.0


def test_speaker_helpers():
    c = tiny()
    assert c.speaker_ids() == ["a", "b"]
    np.testing.assert_array_equal(c.rows_of("a"), [0, 1])
    ids, means = c.speaker_means()
    np.testing.assert_array_equal(means, [[1.0, 2.0], [4.0, 5.0]])
    assert c.sex_of() == {"a": "F", "b": "M"}
    assert len(c.subset([2])) == 1


# -- synthetic ---------------------------------------------------------------


def test_synthetic_split_structure():
    enroll, trial = generate_synthetic(SMALL)
    assert enroll.speaker_ids() == trial.speaker_ids()
    assert not set(enroll.utterances) & set(trial.utterances)
    assert len(enroll) + len(trial) == 12 * 6
    assert enroll.split == "enrollment" and trial.split == "trial"
    assert set(enroll.sexes) == {"F", "M"}


def test_zero_within_scale_gives_identical_utterances():
    enroll, trial = generate_synthetic(SyntheticCorpusSpec(speaker_count=4, utterances_per_speaker=3, dim=10, rank=3, within_speaker_scale=0.0))
    for s in trial.speaker_ids():
        rows = trial.vectors[trial.rows_of(s)]
        assert np.all(rows == rows[0])
        np.testing.assert_array_equal(enroll.vectors[enroll.rows_of(s)][0], rows[0])


def test_synthetic_files_byte_identical(tmp_path):
    a = write_corpus(generate_synthetic(SMALL)[1], tmp_path / "a.vpemb").read_bytes()
    b = write_corpus(generate_synthetic(SMALL)[1], tmp_path / "b.vpemb").read_bytes()
    assert a == b


def test_default_corpus_separable_and_verifiable():
    enroll, trial = generate_synthetic(SyntheticCorpusSpec())
    eers = group_eers(asv_score(enroll, trial))
    assert eers["all"] <= 10.0
    ids, means = trial.speaker_means()
    unit = trial.vectors / np.linalg.norm(trial.vectors, axis=1, keepdims=True)
    spk = np.array(trial.speakers)
    within, between = [], []
    for s in ids[:20]:
        rows = unit[spk == s]
        sim = rows @ rows.T
        within.append(sim[~np.eye(len(rows), dtype=bool)].mean())
        between.append((rows @ unit[spk != s].T).mean())
    assert np.mean(within) - np.mean(between) > 0.5


def test_pool_is_disjoint_population():
    pool = generate_pool(SMALL, speaker_count=5, utterances_per_speaker=3)
    enroll, _ = generate_synthetic(SMALL)
    assert len(pool) == 15 and pool.split == "train"
    assert not set(pool.speakers) & set(enroll.speakers)


@pytest.mark.parametrize(
    "kw",
    [
        {"between_speaker_scale": 0.1, "within_speaker_scale": 0.2},
        {"utterances_per_speaker": 1},
        {"sex_split": 1.5},
        {"rank": 50, "dim": 40},
    ],
)
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        SyntheticCorpusSpec(**{"dim": 40, "rank": 8, **kw})

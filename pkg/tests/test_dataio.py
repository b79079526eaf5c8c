import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spkver.dataio import (
    EmbeddingStore,
    Label,
    ScoreSet,
    Trial,
    UtteranceRecord,
    format_manifest,
    parse_manifest,
    parse_scores,
    parse_trials,
    read_embeddings,
    read_wav,
    write_embeddings,
    write_scores,
    write_wav,
)
from spkver.errors import FormatError, InputError


class TestManifest:
    def test_single_line(self):
        assert parse_manifest("u1\tspkA\t/a.wav\t12.5") == [UtteranceRecord("u1", "spkA", "/a.wav", 12.5)]

    def test_empty(self):
        assert parse_manifest("") == []

    def test_comments_and_blanks_skipped(self):
        text = "# header\n\nu1\tA\ta.wav\t1.0\n   \n#x\nu2\tB\tb.wav\t2\n"
        assert [r.utt_id for r in parse_manifest(text)] == ["u1", "u2"]

    def test_duplicate_names_line(self):
        with pytest.raises(FormatError) as err:
            parse_manifest("u1\tA\ta.wav\t1\nu1\tB\tb.wav\t2\n")
        assert err.value.line == 2

    @pytest.mark.parametrize("dur", ["abc", "-1", "0", "nan", "inf"])
    def test_bad_duration(self, dur):
        with pytest.raises(FormatError) as err:
            parse_manifest(f"u1\tA\ta.wav\t{dur}")
        assert err.value.line == 1

    def test_wrong_field_count(self):
        with pytest.raises(FormatError):
            parse_manifest("u1 A a.wav 1.0")

    def test_format_roundtrip(self):
        recs = [UtteranceRecord("u1", "A", "x/a.wav", 1.25), UtteranceRecord("u2", "B", "b.wav", 3.0)]
        assert parse_manifest(format_manifest(recs)) == recs


class TestTrials:
    def test_labelled(self):
        assert parse_trials("spkA u7 target") == [Trial("spkA", "u7", Label.TARGET)]

    def test_unlabelled(self):
        assert parse_trials("spkA u7") == [Trial("spkA", "u7", None)]

    def test_bad_label(self):
        with pytest.raises(FormatError) as err:
            parse_trials("a b nontarget\nspkA u7 maybe\n")
        assert err.value.line == 2


class TestEmbeddings:
    def test_roundtrip_small(self):
        store = EmbeddingStore(2, {"a": [1.0, 0.0]})
        assert read_embeddings(write_embeddings(store)) == store

    def test_empty_store_is_header_only(self):
        store = EmbeddingStore(192)
        data = write_embeddings(store)
        assert data == b"EMBV1" + struct.pack("<I", 192)
        back = read_embeddings(data)
        assert back == store and back.dim == 192 and len(back) == 0

    def test_layout(self):
        data = write_embeddings(EmbeddingStore(1, {"ab": [0.5]}))
        assert data == b"EMBV1" + struct.pack("<I", 1) + struct.pack("<H", 2) + b"ab" + struct.pack("<f", 0.5)

    def test_bit_exact_special_values(self):
        vals = np.array([np.float32(1) / 3, -0.0, 1e-45, np.finfo(np.float32).max], dtype=np.float32)
        back = read_embeddings(write_embeddings(EmbeddingStore(4, {"x": vals, "ünï": vals[::-1]})))
        assert back["x"].tobytes() == vals.tobytes()
        assert back["ünï"].tobytes() == vals[::-1].tobytes()

    def test_truncated_mid_vector(self):
        data = write_embeddings(EmbeddingStore(3, {"a": [1, 2, 3], "b": [4, 5, 6]}))
        with pytest.raises(FormatError, match="record 2"):
            read_embeddings(data[:-5])

    def test_bad_magic(self):
        with pytest.raises(FormatError, match="magic"):
            read_embeddings(b"EMBV2" + b"\x00" * 8)

    def test_duplicate_id_on_read(self):
        one = write_embeddings(EmbeddingStore(1, {"a": [1.0]}))
        with pytest.raises(FormatError, match="duplicate"):
            read_embeddings(one + one[9:])

    def test_store_rejects_wrong_dim(self):
        with pytest.raises(InputError):
            EmbeddingStore(3, {"a": [1.0, 2.0]})

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 16), st.lists(st.text(min_size=1, max_size=12), unique=True, max_size=10),
           st.integers(0, 2**32 - 1))
    def test_roundtrip_property(self, dim, ids, seed):
        rng = np.random.default_rng(seed)
        store = EmbeddingStore(dim, {i: rng.standard_normal(dim).astype(np.float32) for i in ids})
        assert read_embeddings(write_embeddings(store)) == store


class TestScores:
    def test_format(self):
        assert write_scores(ScoreSet([("spkA", "u7", 0.5)])) == "spkA u7 0.500000\n"

    def test_roundtrip_random_rows(self):
        rng = np.random.default_rng(0)
        rows = [(f"spk{i % 7}", f"u{i}", float(rng.uniform(-1, 1))) for i in range(100)]
        back = parse_scores(write_scores(ScoreSet(rows)))
        assert [r[:2] for r in back.rows] == [r[:2] for r in rows]
        np.testing.assert_allclose(back.scores(), [r[2] for r in rows], atol=1e-6, rtol=0)

    @pytest.mark.parametrize("bad", ["NaN", "inf", "x1"])
    def test_rejects_non_numeric_or_non_finite(self, bad):
        with pytest.raises(FormatError) as err:
            parse_scores(f"a b 0.1\nspkA u7 {bad}\n")
        assert err.value.line == 2

    def test_duplicate_trial(self):
        with pytest.raises(FormatError):
            parse_scores("a b 0.1\na b 0.2\n")


def test_wav_roundtrip(tmp_path):
    x = np.sin(np.linspace(0, 100, 1600)) * 0.5
    write_wav(tmp_path / "a.wav", x, 16000)
    y, sr = read_wav(tmp_path / "a.wav")
    assert sr == 16000 and y.shape == x.shape
    np.testing.assert_allclose(y, x, atol=1 / 32768)

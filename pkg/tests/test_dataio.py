import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emoembed.content import ContentEncoder, encode_content
from emoembed.dataio import (MAGIC, DatasetManifest, assign_splits, generate_synthetic_pair, load_dataset,
                             load_embedding_table, load_lexicon, load_manifest, load_model, load_registry,
                             registry_lines, save_model, split_dataset, split_pair, synthetic_map)
from emoembed.errors import (ConfigurationError, CoverageError, ModelFormatError, ParseError,
                             UnsupportedVersionError, ValidationError)
from emoembed.evaluation import pearson_r
from emoembed.formats import VariableScale, default_registry
from emoembed.mapper import MultiWayMapper, translate
from helpers import random_labels

REG = default_registry()


def vad_manifest(tmp_path, data="lex.csv", **kw):
    return DatasetManifest("en1", "en-words", "VAD", tmp_path / data,
                           {v: VariableScale(v, 1, 9) for v in REG["VAD"].variables}, **kw)


def write_table(path, rows, header=None):
    lines = [header] if header else []
    lines += [" ".join([tok] + [repr(float(x)) for x in vec]) for tok, vec in rows]
    path.write_text("\n".join(lines) + "\n")


def test_load_lexicon_normalizes(tmp_path):
    (tmp_path / "lex.csv").write_text("id,Valence,Arousal,Dominance\nrollercoaster,8.0,8.1,5.1\nsad,2,3,3\n")
    write_table(tmp_path / "emb.vec", [("rollercoaster", [1, 2]), ("sad", [0, 1])])
    ds = load_lexicon(tmp_path / "lex.csv", vad_manifest(tmp_path), REG, load_embedding_table(tmp_path / "emb.vec"))
    assert np.allclose(ds.labels.values[0], [0.75, 0.775, 0.025], atol=1e-12)
    assert ds.ids == ["rollercoaster", "sad"] and ds.normalized and ds.dropped == 0
    assert np.array_equal(ds.features[0], [1, 2])


def test_load_lexicon_errors(tmp_path):
    table = load_embedding_table(_table(tmp_path))
    (tmp_path / "lex.csv").write_text("id,Valence,Arousal\nw,1,2\n")
    with pytest.raises(ValidationError, match="Valence.*Dominance"):
        load_lexicon(tmp_path / "lex.csv", vad_manifest(tmp_path), REG, table)
    (tmp_path / "lex.csv").write_text("")
    with pytest.raises(ParseError):
        load_lexicon(tmp_path / "lex.csv", vad_manifest(tmp_path), REG, table)
    (tmp_path / "lex.csv").write_text("id,Valence,Arousal,Dominance\na,1,2,3\nb,1,x,3\n")
    with pytest.raises(ParseError) as info:
        load_lexicon(tmp_path / "lex.csv", vad_manifest(tmp_path), REG, table)
    assert info.value.line == 3
    (tmp_path / "lex.csv").write_text("id,Valence,Arousal,Dominance\na,1,2,3\nzz,1,2,3\nyy,1,2,3\n")
    with pytest.raises(CoverageError):
        load_lexicon(tmp_path / "lex.csv", vad_manifest(tmp_path), REG, table)


def test_load_lexicon_drops_and_counts(tmp_path, caplog):
    table = load_embedding_table(_table(tmp_path))
    (tmp_path / "lex.csv").write_text("id,Valence,Arousal,Dominance\na,1,2,3\nb,1,2,3\nzz,1,2,3\n")
    ds = load_lexicon(tmp_path / "lex.csv", vad_manifest(tmp_path), REG, table)
    assert len(ds) == 2 and ds.dropped == 1 and "dropped 1 of 3" in caplog.text


def test_lowercase_fallback(tmp_path):
    table = load_embedding_table(_table(tmp_path))
    (tmp_path / "lex.csv").write_text("id,text,Valence,Arousal,Dominance\n1,A,1,2,3\n2,B,1,2,3\n3,c,1,2,3\n")
    with pytest.raises(CoverageError):
        load_lexicon(tmp_path / "lex.csv", vad_manifest(tmp_path), REG, table)
    ds = load_lexicon(tmp_path / "lex.csv", vad_manifest(tmp_path, lowercase_fallback=True), REG, table)
    assert ds.texts == ["A", "B", "c"]


def _table(tmp_path):
    path = tmp_path / "t.vec"
    write_table(path, [("a", [1, 2, 3, 4]), ("b", [0, 0, 1, 0]), ("c", [5, 5, 5, 5])])
    return path


def test_embedding_table(tmp_path):
    t = load_embedding_table(_table(tmp_path))
    assert len(t) == 3 and t.dim == 4
    write_table(tmp_path / "h.vec", [("x", [0.0] * 300), ("y", [1.0] * 300)], header="2 300")
    assert load_embedding_table(tmp_path / "h.vec").dim == 300
    (tmp_path / "bad.vec").write_text("a 1 2 3 4\nb 1 2 3\n")
    with pytest.raises(ParseError) as info:
        load_embedding_table(tmp_path / "bad.vec")
    assert info.value.line == 2
    (tmp_path / "dup.vec").write_text("a 1 2\na 3 4\n")
    with pytest.raises(ValidationError):
        load_embedding_table(tmp_path / "dup.vec")


def test_manifest_and_registry_files(tmp_path):
    (tmp_path / "reg.txt").write_text("\n".join(registry_lines(REG)) + "\n")
    reg = load_registry(tmp_path / "reg.txt")
    assert reg.ids == REG.ids and reg.equivalences == REG.equivalences and reg.formats == REG.formats
    (tmp_path / "m.manifest").write_text(
        "id = en1\ndomain = en-words\nformat = VAD\ndata = lex.csv\nembeddings = t.vec\nsplit = 3,1,1\n"
        + "".join(f"scale.{v} = 1,9\n" for v in REG["VAD"].variables))
    man = load_manifest(tmp_path / "m.manifest", REG)
    assert man.split == (3.0, 1.0, 1.0) and man.data == tmp_path / "lex.csv"
    (tmp_path / "m.manifest").write_text("id = en1\ndomain = w\nformat = VAD\ndata = x.csv\nembeddings = t.vec\n")
    with pytest.raises(ConfigurationError):
        load_manifest(tmp_path / "m.manifest", REG)
    (tmp_path / "m.manifest").write_text("id = en1\nflavour = sweet\n")
    with pytest.raises(ParseError):
        load_manifest(tmp_path / "m.manifest", REG)
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "missing.manifest")


def test_load_dataset_end_to_end(tmp_path):
    _table(tmp_path)
    (tmp_path / "lex.csv").write_text("id,Valence,Arousal,Dominance\na,9,1,5\nb,1,9,5\nc,5,5,5\n")
    (tmp_path / "m.manifest").write_text(
        "id = en1\ndomain = en-words\nformat = VAD\ndata = lex.csv\nembeddings = t.vec\n"
        + "".join(f"scale.{v} = 1,9\n" for v in REG["VAD"].variables))
    ds = load_dataset(tmp_path / "m.manifest", REG)
    assert ds.labels.values.tolist() == [[1, -1, 0], [-1, 1, 0], [0, 0, 0]]
    assert ds.manifest.id == "en1"


def _dataset(n):
    return generate_synthetic_pair(n=n, seed=1, feature_dim=4).a


def test_split_examples():
    ds = _dataset(100)
    tr, dev, te = split_dataset(ds, (8, 1, 1), seed=0)
    assert (len(tr), len(dev), len(te)) == (80, 10, 10)
    assert set(tr.ids) | set(dev.ids) | set(te.ids) == set(ds.ids)
    assert not (set(tr.ids) & set(dev.ids) or set(tr.ids) & set(te.ids) or set(dev.ids) & set(te.ids))
    again = split_dataset(ds, (8, 1, 1), seed=0)
    assert [s.ids for s in again] == [tr.ids, dev.ids, te.ids]
    assert (tr.split, dev.split, te.split) == ("train", "dev", "test")
    with pytest.raises(ValidationError):
        split_dataset(_dataset(2))


@given(st.integers(3, 300), st.integers(0, 10**6), st.sampled_from([(8, 1, 1), (3, 1, 1), (1, 1, 1)]))
def test_split_partition(n, seed, ratios):
    ids = [f"x{i}" for i in range(n)]
    a = assign_splits(ids, ratios, seed)
    assert set(a) == set(ids) and set(a.values()) <= {"train", "dev", "test"}
    assert {"dev", "test"} <= set(a.values())
    assert a == assign_splits(list(reversed(ids)), ratios, seed)


def test_split_pair_consistent():
    pair = generate_synthetic_pair(n=60, seed=2, feature_dim=4)
    (a_tr, _, a_te), (b_tr, _, b_te) = split_pair(pair.a.subset(range(50)), pair.b.subset(range(10, 60)), seed=3)
    assert not set(a_tr.ids) & set(b_te.ids)
    assert not set(b_tr.ids) & set(a_te.ids)


def test_synthetic_generator():
    p1 = generate_synthetic_pair(n=300, seed=4)
    p2 = generate_synthetic_pair(n=300, seed=4)
    assert np.array_equal(p1.a.features, p2.a.features) and np.array_equal(p1.b.labels.values, p2.b.labels.values)
    exact = generate_synthetic_pair(n=300, noise=0.0, seed=4)
    assert np.array_equal(exact.b.labels.values, synthetic_map(exact.a.labels.values))
    ya = p1.a.labels.values
    assert ya.min() >= -1 and ya.max() <= 1 and p1.b.labels.values.min() >= 0
    assert p1.a.ids == p1.b.ids and p1.a.domain == p1.b.domain


def test_synthetic_noise_bound():
    pair = generate_synthetic_pair(n=2000, noise=0.05, seed=0)
    truth = synthetic_map(pair.a.labels.values)
    r = [pearson_r(truth[:, j], pair.b.labels.values[:, j]) for j in range(4)]
    assert min(r) >= 0.98


def _trained_like_mapper():
    m = MultiWayMapper(REG, d=6, hidden=(8, 8), seed=9)
    for p in m.parameters():
        p.value[...] = p.value.astype(np.float32)
    return m


def test_model_round_trip(tmp_path, rng):
    m = _trained_like_mapper()
    enc = ContentEncoder("en-words", 4, 6, hidden=(5,), seed=1, name="en1")
    for p in enc.parameters():
        p.value[...] = p.value.astype(np.float32)
    save_model(tmp_path / "m.emoe", m, {"en1": enc}, {"seed": 9})
    m2, encs, meta = load_model(tmp_path / "m.emoe")
    assert meta == {"seed": 9} and m2.registry == m.registry and m2.d == 6
    assert m2.fingerprint() == m.fingerprint()
    y = random_labels(REG["VAD"], 5, rng)
    for fid in REG.ids:
        assert np.array_equal(translate(m, y, fid).values, translate(m2, y, fid).values)
    x = rng.normal(size=(3, 4))
    assert np.array_equal(encode_content(enc, x), encode_content(encs["en1"], x))
    assert encs["en1"].domain == "en-words"


def test_model_file_errors(tmp_path):
    path = tmp_path / "m.emoe"
    save_model(path, _trained_like_mapper())
    data = path.read_bytes()
    assert data[:4] == MAGIC
    (tmp_path / "bad.emoe").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(ModelFormatError) as info:
        load_model(tmp_path / "bad.emoe")
    assert info.value.offset == 0
    (tmp_path / "v2.emoe").write_bytes(MAGIC + struct.pack("<I", 2) + data[8:])
    with pytest.raises(UnsupportedVersionError):
        load_model(tmp_path / "v2.emoe")
    (tmp_path / "cut.emoe").write_bytes(data[: len(data) // 2])
    with pytest.raises(ModelFormatError) as info:
        load_model(tmp_path / "cut.emoe")
    assert info.value.offset is not None
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "nothing.emoe")

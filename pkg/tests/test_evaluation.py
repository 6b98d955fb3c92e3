import csv

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emoembed.content import EncoderTrainConfig
from emoembed.dataio import generate_synthetic_pair, write_feature_file, write_lexicon, write_manifest
from emoembed.errors import DegenerateVectorError, DimensionError, ParseError, ValidationError
from emoembed.evaluation import (SuiteConfig, accuracy, argmax_classes, check_split_isolation, evaluate_mapping,
                                 evaluate_supervised, evaluate_zero_shot, load_suite, mapping_dataset_from,
                                 mean_score, pearson_r, run_suite, write_results)
from emoembed.mapper import MapperTrainConfig

vectors = arrays(np.float64, st.integers(3, 30), elements=st.floats(-100, 100))


def test_pearson_examples():
    x = np.array([0.3, 1.0, -2.0, 4.5])
    assert pearson_r(x, x) == pytest.approx(1.0)
    assert pearson_r(x, -x) == pytest.approx(-1.0)
    assert pearson_r([1, 2, 3], [1, 2, 4]) == pytest.approx(0.98198, abs=1e-5)


def test_pearson_errors():
    with pytest.raises(DegenerateVectorError):
        pearson_r([1, 1, 1], [1, 2, 3])
    with pytest.raises(DimensionError):
        pearson_r([1, 2], [1, 2, 3])
    with pytest.raises(ValidationError):
        pearson_r([1], [2])


@given(vectors, st.floats(0.1, 10), st.floats(-50, 50), st.integers(0, 1000))
def test_pearson_invariances(x, a, b, seed):
    y = np.random.default_rng(seed).normal(size=x.size)
    assume(np.std(x) > 1e-3)
    r = pearson_r(x, y)
    assert pearson_r(y, x) == pytest.approx(r, abs=1e-12)
    assert pearson_r(a * x + b, y) == pytest.approx(r, abs=1e-9)
    assert -1.0 <= r <= 1.0


def test_accuracy_examples():
    assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert accuracy([1, 2, 0], [0, 1, 2]) == 0.0
    assert accuracy([0, 1, 1, 0], [0, 1, 0, 1]) == 0.5
    with pytest.raises(ValidationError):
        accuracy([], [])


def test_argmax_ties_go_low():
    assert argmax_classes(np.array([[0.4, 0.4, 0.2], [0.1, 0.45, 0.45]])).tolist() == [0, 1]


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=40), st.randoms())
def test_accuracy_permutation_invariant(pairs, rnd):
    p, g = map(list, zip(*pairs))
    order = list(range(len(p)))
    rnd.shuffle(order)
    assert accuracy(p, g) == accuracy([p[i] for i in order], [g[i] for i in order])


def test_mapping_dataset_from_aligns_by_id(synth):
    a = synth.a.subset([5, 1, 3])
    b = synth.b.subset([3, 9, 5])
    m = mapping_dataset_from(a, b)
    assert len(m) == 2
    assert np.array_equal(m.y1.values, synth.a.labels.values[[5, 3]])
    assert np.array_equal(m.y2.values, synth.b.labels.values[[5, 3]])
    with pytest.raises(ValidationError):
        mapping_dataset_from(synth.a.subset([0]), synth.b.subset([1]))


def test_split_isolation(synth_splits):
    tr, _, te = synth_splits["a"]
    check_split_isolation(tr, te)
    with pytest.raises(ValidationError):
        check_split_isolation(tr, tr.subset([0, 1], "test"))


def test_reports_on_trained_models(mapper, encoders, synth_splits, tmp_path):
    m = evaluate_mapping(mapper, synth_splits["map_test"], "forward")
    assert m.scenario == "mapping" and m.metric == "pearson_r" and len(m.scores) == 4
    assert m.score == pytest.approx(np.mean(list(m.scores.values())))
    sup = evaluate_supervised(encoders["augmented", "a"], mapper, synth_splits["a"][2])
    zs = evaluate_zero_shot(encoders["augmented", "b"], mapper, synth_splits["a"][2])
    assert sup.scenario == "supervised" and zs.scenario == "zero_shot"
    assert sup.score >= 0.95
    with pytest.raises(ValidationError):
        evaluate_supervised(encoders["augmented", "a"], mapper, synth_splits["a"][0])
    with pytest.raises(ValidationError):
        evaluate_mapping(mapper, synth_splits["map_test"], "sideways")
    write_results([m, sup, zs], tmp_path / "r.tsv")
    rows = list(csv.reader(open(tmp_path / "r.tsv"), delimiter="\t"))
    assert rows[0] == ["dataset", "scenario", "mode", "metric", "per_variable", "mean"]
    assert len(rows) == 4 and float(rows[2][-1]) == pytest.approx(sup.score, rel=1e-5)
    assert mean_score([sup, zs]) == pytest.approx((sup.score + zs.score) / 2)
    assert np.isnan(mean_score([], "mapping"))


def _write_pair(tmp_path, n=120, seed=0):
    pair = generate_synthetic_pair(n=n, seed=seed, feature_dim=8)
    write_feature_file(pair.a, tmp_path / "features.csv")
    for ds in (pair.a, pair.b):
        write_lexicon(ds, tmp_path / f"{ds.name}.csv", pair.registry)
        write_manifest(tmp_path / f"{ds.name}.manifest", ds.name, "synth", pair.registry[ds.format_id],
                       f"{ds.name}.csv", features="features.csv")
    (tmp_path / "registry.txt").write_text(
        "format = SA | regression | -1,1 | Valence, Arousal, Dominance\n"
        "format = SB | regression | 0,1 | Pleasure, Joy, Energy, Control\n"
        "class = SA:Valence, SB:Pleasure\n")
    (tmp_path / "suite.txt").write_text("registry = registry.txt\npair = synA.manifest, synB.manifest\n")
    return tmp_path / "suite.txt"


def _small_config(seed=0, modes=("augmented",)):
    return SuiteConfig(mapper=MapperTrainConfig(n_steps=150, d=8, hidden=(16, 16), seed=seed),
                       encoder=EncoderTrainConfig(n_epochs=3, hidden=(16,), seed=seed), modes=modes, seed=seed)


def test_suite_over_one_pair(tmp_path):
    registry, pairs = load_suite(_write_pair(tmp_path))
    reports, mapper, encs = run_suite(pairs, _small_config(), registry, out_dir=tmp_path / "out")
    assert len(reports) == 6
    assert sorted(r.scenario for r in reports) == ["mapping"] * 2 + ["supervised"] * 2 + ["zero_shot"] * 2
    assert (tmp_path / "out" / "results.tsv").exists() and (tmp_path / "out" / "model.emoe").exists()
    assert set(encs) == {"synA", "synB"}

    again, mapper2, _ = run_suite(pairs, _small_config(), registry)
    assert mapper.fingerprint() == mapper2.fingerprint()
    assert [r.row() for r in reports] == [r.row() for r in again]


def test_suite_ablation_modes(tmp_path):
    registry, pairs = load_suite(_write_pair(tmp_path))
    reports, _, _ = run_suite(pairs, _small_config(modes=("augmented", "plain", "multitask")), registry)
    modes = [r.mode for r in reports if r.scenario != "mapping"]
    assert modes.count("augmented") == 4 and modes.count("plain") == 4 and modes.count("multitask") == 2


def test_suite_rejects_bad_pairs(tmp_path, synth):
    with pytest.raises(ValidationError):
        run_suite([], _small_config(), synth.registry, datasets=[(synth.a, synth.a)])
    other = synth.b.subset(range(len(synth.b)))
    other.domain = "elsewhere"
    with pytest.raises(ValidationError):
        run_suite([], _small_config(), synth.registry, datasets=[(synth.a, other)])
    with pytest.raises(ValidationError):
        SuiteConfig(modes=("nope",))


def test_suite_file_errors(tmp_path):
    (tmp_path / "s.txt").write_text("pair = only_one.manifest\n")
    with pytest.raises(ParseError):
        load_suite(tmp_path / "s.txt")
    (tmp_path / "s.txt").write_text("# nothing\n")
    with pytest.raises(ValidationError):
        load_suite(tmp_path / "s.txt")
    (tmp_path / "s.txt").write_text("colour = blue\n")
    with pytest.raises(ParseError):
        load_suite(tmp_path / "s.txt")

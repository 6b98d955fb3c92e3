import io
import json

import numpy as np
import pytest

from emoembed.cli import main
from emoembed.content import ContentDataset
from emoembed.dataio import generate_synthetic_pair, synthetic_map, write_feature_file, write_lexicon, write_manifest
from emoembed.formats import LabelBatch, default_registry


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def snapshot(root):
    return {p for p in root.rglob("*")}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """gen-synth output plus a mapper and both encoders trained through the CLI."""
    d = tmp_path_factory.mktemp("cli")
    assert run("gen-synth", "--n", 400, "--out", d / "data")[0] == 0
    pair = ("--pair", f"{d / 'data' / 'synA.manifest'},{d / 'data' / 'synB.manifest'}")
    code, out, err = run("train-mapper", "--registry", d / "data" / "registry.txt", *pair,
                         "--steps", 600, "--log-every", 300, "--d", 16, "--out", d / "m")
    assert code == 0, err
    assert out.splitlines()[0].startswith("step=300 l_map=")
    for me, other in (("synA", "synB"), ("synB", "synA")):
        src = d / "m" / "model.emoe"
        code, _, err = run("train-encoder", "--model", src, "--data", d / "data" / f"{me}.manifest",
                           "--pair-with", d / "data" / f"{other}.manifest", "--epochs", 5, "--out", d / "m")
        assert code == 0, err
    return d


def test_gen_synth_files(workdir):
    names = {p.name for p in (workdir / "data").iterdir()}
    assert names == {"registry.txt", "features.csv", "synA.csv", "synB.csv", "synA.manifest", "synB.manifest",
                     "suite.txt"}


def test_translate_outputs(workdir):
    code, out, _ = run("translate", "--model", workdir / "m" / "model.emoe", "--format-in", "SA",
                       "--format-out", "SB", "--values", "0.5,0,-0.5")
    assert code == 0
    fields = out.split()
    assert [f.split("=")[0] for f in fields] == ["Pleasure", "Joy", "Energy", "Control"]
    for f in fields:
        value = f.split("=")[1]
        assert len(value.lstrip("-").replace(".", "").lstrip("0")) <= 6
    code, out, _ = run("translate", "--model", workdir / "m" / "model.emoe", "--format-in", "SA",
                       "--format-out", "SB", "--values", "0.5,0,-0.5", "--json-lines")
    rec = json.loads(out)
    assert rec["format"] == "SB" and set(rec["values"]) == {"Pleasure", "Joy", "Energy", "Control"}


def test_evaluate_predict_pca_retrieve(workdir):
    model, data = workdir / "m" / "model.emoe", workdir / "data"
    for scenario in ("mapping", "supervised", "zero-shot"):
        code, out, err = run("evaluate", "--model", model, "--data", data / "synA.manifest",
                             "--pair-with", data / "synB.manifest", "--scenario", scenario, "--json-lines")
        assert code == 0, err
        recs = [json.loads(line) for line in out.splitlines()]
        assert len(recs) == (2 if scenario == "mapping" else 1)
        assert all(-1 <= r["mean"] <= 1 for r in recs)
    code, out, _ = run("predict", "--model", model, "--data", data / "synB.manifest", "--limit", 4)
    assert code == 0 and len(out.splitlines()) == 4 and len(out.splitlines()[0].split("\t")) == 5
    code, out, _ = run("analyze-pca", "--model", model, "--k", 2, "--out", workdir / "pca",
                       "--data", data / "synA.manifest")
    assert code == 0 and (workdir / "pca" / "pca.tsv").exists()
    code, out, err = run("retrieve", "--model", model, "--query", "item00007", "--query-data", data / "synA.manifest",
                         "--in", "synB", "--data", data / "synA.manifest", "--data", data / "synB.manifest",
                         "--top", 3)
    assert code == 0, err
    ranks = [line.split("\t") for line in out.splitlines()]
    assert [r[0] for r in ranks] == ["1", "2", "3"]
    sims = [float(r[2]) for r in ranks]
    assert sims == sorted(sims, reverse=True)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_error_exit_codes(workdir, tmp_path):
    code, _, err = run("translate", "--model", tmp_path / "missing.emoe", "--format-in", "SA",
                       "--format-out", "SB", "--values", "0,0,0")
    assert code == 1 and "missing.emoe" in err
    assert run("translate", "--nonsense")[0] == 1
    assert run("frobnicate")[0] == 1
    code, _, err = run("translate", "--model", workdir / "m" / "model.emoe", "--format-in", "SA",
                       "--format-out", "ZZ", "--values", "0,0,0")
    assert code == 1 and "ZZ" in err
    code, _, err = run("train-mapper", "--registry", workdir / "data" / "registry.txt",
                       "--pair", f"{workdir / 'data' / 'synA.manifest'},{workdir / 'data' / 'synB.manifest'}",
                       "--steps", 5, "--lr", "1e300", "--out", tmp_path / "boom")
    assert code == 2 and "step" in err


def test_reproducible_and_confined(workdir, tmp_path):
    data = workdir / "data"
    before = snapshot(workdir)
    outputs = []
    for k in range(2):
        out_dir = tmp_path / f"run{k}"
        code, out, _ = run("train-mapper", "--registry", data / "registry.txt",
                           "--pair", f"{data / 'synA.manifest'},{data / 'synB.manifest'}",
                           "--steps", 50, "--d", 8, "--seed", 4, "--out", out_dir)
        assert code == 0
        outputs.append(((out_dir / "model.emoe").read_bytes(), out.replace(str(out_dir), "")))
    assert outputs[0] == outputs[1]
    assert snapshot(workdir) == before
    assert {p.name for p in tmp_path.iterdir()} == {"run0", "run1"}


def test_run_suite(workdir, tmp_path):
    code, out, err = run("run-suite", "--suite", workdir / "data" / "suite.txt", "--steps", 100, "--epochs", 2,
                         "--d", 8, "--out", tmp_path / "suite")
    assert code == 0, err
    assert len(out.splitlines()) == 6
    assert (tmp_path / "suite" / "results.tsv").exists() and (tmp_path / "suite" / "model.emoe").exists()


def test_translate_vad_to_be5(tmp_path):
    """Default registry formats: a mapper trained on VAD/BE5 pairs translates
    a normalized VAD label into five values inside [0, 1]."""
    reg = default_registry()
    pair = generate_synthetic_pair(n=600, seed=5, feature_dim=8)
    ya = pair.a.labels.values
    t = synthetic_map(ya)
    be5 = np.column_stack([t, (1 - t[:, 0]) * 0.8 + 0.1])
    vad = ContentDataset("vad", "w", pair.a.ids, pair.a.features, LabelBatch("VAD", ya))
    bes = ContentDataset("be5", "w", pair.a.ids, pair.a.features, LabelBatch("BE5", be5))
    write_feature_file(vad, tmp_path / "f.csv")
    for ds in (vad, bes):
        write_lexicon(ds, tmp_path / f"{ds.name}.csv", reg)
        write_manifest(tmp_path / f"{ds.name}.manifest", ds.name, "w", reg[ds.format_id], f"{ds.name}.csv",
                       features="f.csv")
    code, _, err = run("train-mapper", "--pair", f"{tmp_path / 'vad.manifest'},{tmp_path / 'be5.manifest'}",
                       "--steps", 1500, "--out", tmp_path / "m")
    assert code == 0, err
    code, out, _ = run("translate", "--model", tmp_path / "m" / "model.emoe", "--format-in", "VAD",
                       "--format-out", "BE5", "--values", "0.75,0.775,0.025", "--json-lines")
    values = json.loads(out)["values"]
    assert list(values) == sorted(["Joy", "Anger", "Sadness", "Fear", "Disgust"])
    assert all(0.0 <= v <= 1.0 for v in values.values())

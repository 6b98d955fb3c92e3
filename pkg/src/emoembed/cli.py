"""Command-line entry point: ``emoembed <subcommand> ...``.

Exit codes: 0 success, 1 validation error (bad flags, inputs or files),
2 runtime error (divergence, non-convergence).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .analysis import build_index, head_row_table, pca_fit, pca_project, query_top_k, write_coordinates
from .autodiff import OptimizerConfig
from .content import MODES, EncoderTrainConfig, encode_content, predict, train_content_encoder
from .errors import EmoError, ValidationError
from .evaluation import (SuiteConfig, check_split_isolation, evaluate_mapping, evaluate_supervised,
                         evaluate_zero_shot, load_suite, mapping_dataset_from, run_suite, write_results)
from .formats import EmotionLabel, default_registry
from .mapper import MapperTrainConfig, format_progress, train_mapper, translate

log = logging.getLogger("emoembed")


def fmt6(x):
    return f"{float(x):.6g}"


class Printer:
    """Human-readable lines, or one JSON object per result with --json-lines."""

    def __init__(self, json_lines=False, stream=None):
        self.json_lines = json_lines
        self.stream = stream or sys.stdout

    def emit(self, text, record):
        if self.json_lines:
            print(json.dumps(record, sort_keys=True, default=_jsonable), file=self.stream)
        else:
            print(text, file=self.stream)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def _round6(values):
    return [float(fmt6(v)) for v in values]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _out_dir(args, required=True):
    if args.out is None:
        if required:
            raise ValidationError(f"{args.command} needs --out")
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _registry(args):
    return dataio.load_registry(args.registry) if getattr(args, "registry", None) else default_registry()


def _load(manifest, registry, cache):
    return dataio.load_dataset(manifest, registry, cache)


def _pair_arg(text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2 or not all(parts):
        raise argparse.ArgumentTypeError("expected two manifest paths as A,B")
    return tuple(parts)


def _floats_arg(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


# ------------------------------------------------------------------ subcommands

def cmd_gen_synth(args, out):
    d = _out_dir(args)
    pair = dataio.generate_synthetic_pair(args.n, args.noise, args.seed, args.feature_dim)
    (d / "registry.txt").write_text("\n".join(dataio.registry_lines(pair.registry)) + "\n", encoding="utf-8")
    dataio.write_feature_file(pair.a, d / "features.csv")
    for ds in (pair.a, pair.b):
        dataio.write_lexicon(ds, d / f"{ds.name}.csv", pair.registry)
        dataio.write_manifest(d / f"{ds.name}.manifest", ds.name, ds.domain, pair.registry[ds.format_id],
                              f"{ds.name}.csv", features="features.csv")
    (d / "suite.txt").write_text("registry = registry.txt\npair = synA.manifest, synB.manifest\n", encoding="utf-8")
    out.emit(f"wrote {len(pair.a)} synthetic items to {d}", {"n": len(pair.a), "out": str(d)})


def cmd_train_mapper(args, out):
    d = _out_dir(args)
    registry = _registry(args)
    cache, train = {}, []
    for a_path, b_path in args.pair:
        a, b = _load(a_path, registry, cache), _load(b_path, registry, cache)
        (ta, _, _), (tb, _, _) = dataio.fixed_splits(a, b, args.seed)
        train.append(mapping_dataset_from(ta, tb))
    cfg = MapperTrainConfig(n_steps=args.steps, batch_size=args.batch_size, d=args.d, seed=args.seed,
                            optimizer=OptimizerConfig(lr=args.lr), log_every=0)

    def progress(step, parts):
        if not args.log_every or (step % args.log_every and step != args.steps):
            return
        out.emit(format_progress(step, parts), {"step": step, **{f"l_{k}": float(v) for k, v in parts.items()}})

    mapper = train_mapper(train, cfg, registry, callback=progress)
    path = d / "model.emoe"
    dataio.save_model(path, mapper, {}, {"seed": args.seed})
    out.emit(f"model {path} fingerprint {mapper.fingerprint()[:16]}",
             {"model": str(path), "fingerprint": mapper.fingerprint()})


def cmd_train_encoder(args, out):
    d = _out_dir(args)
    mapper, encoders, meta = dataio.load_model(args.model)
    cache = {}
    data = _load(args.data, mapper.registry, cache)
    other = _load(args.pair_with, mapper.registry, cache) if args.pair_with else None
    if args.mode == "multitask" and other is None:
        raise ValidationError("--mode multitask needs --pair-with")
    if other is not None:
        (tr, dev, _), (otr, odev, _) = dataio.fixed_splits(data, other, args.seed)
    else:
        tr, dev, _ = dataio.fixed_splits(data, seed=args.seed)
        otr = odev = None
    aug = tuple(args.augment_format or ())
    if args.mode == "augmented" and not aug:
        if other is None:
            raise ValidationError("--mode augmented needs --augment-format or --pair-with")
        aug = (other.format_id,)
    cfg = EncoderTrainConfig(n_epochs=args.epochs, batch_size=args.batch_size, mode=args.mode,
                             augmentation_formats=aug if args.mode == "augmented" else (),
                             patience=args.patience, seed=args.seed, optimizer=OptimizerConfig(lr=args.lr))
    enc = train_content_encoder(tr, mapper, cfg, dev=dev,
                                second=otr if args.mode == "multitask" else None,
                                second_dev=odev if args.mode == "multitask" else None)
    encoders[enc.name] = enc
    path = d / "model.emoe"
    dataio.save_model(path, mapper, encoders, {**meta, f"encoder.{enc.name}.mode": args.mode})
    out.emit(f"encoder {enc.name} ({args.mode}) saved to {path}",
             {"encoder": enc.name, "mode": args.mode, "model": str(path)})


def cmd_translate(args, out):
    mapper, _, _ = dataio.load_model(args.model)
    src = mapper.format(args.format_in)
    tgt = mapper.format(args.format_out)
    label = EmotionLabel(src.id, np.asarray(args.values))
    mapper.registry.validate(label)
    res = translate(mapper, label, tgt.id).values
    text = " ".join(f"{v}={fmt6(x)}" for v, x in zip(tgt.variables, res))
    out.emit(text, {"format": tgt.id, "values": dict(zip(tgt.variables, _round6(res)))})


def _encoder_named(encoders, name):
    if name not in encoders:
        known = ", ".join(sorted(encoders)) or "none"
        raise ValidationError(f"model has no content encoder {name!r} (available: {known})")
    return encoders[name]


def cmd_predict(args, out):
    mapper, encoders, _ = dataio.load_model(args.model)
    ds = _load(args.data, mapper.registry, {})
    enc = _encoder_named(encoders, args.encoder or ds.name)
    fmt = mapper.format(args.format or ds.format_id)
    rows = predict(enc, mapper, ds, fmt.id).values
    rows = np.atleast_2d(rows)
    limit = len(ds) if args.limit is None else min(args.limit, len(ds))
    for sid, row in zip(ds.ids[:limit], rows[:limit]):
        out.emit(sid + "\t" + "\t".join(fmt6(x) for x in row),
                 {"id": sid, "format": fmt.id, "values": dict(zip(fmt.variables, _round6(row)))})


def cmd_evaluate(args, out):
    mapper, encoders, _ = dataio.load_model(args.model)
    cache = {}
    data = _load(args.data, mapper.registry, cache)
    other = _load(args.pair_with, mapper.registry, cache) if args.pair_with else None
    if args.scenario in ("mapping", "zero-shot") and other is None:
        raise ValidationError(f"--scenario {args.scenario} needs --pair-with")
    if other is not None:
        (tr, _, te), (otr, _, ote) = dataio.fixed_splits(data, other, args.seed)
    else:
        tr, _, te = dataio.fixed_splits(data, seed=args.seed)
    if args.scenario == "mapping":
        test = mapping_dataset_from(te, ote)
        reports = [evaluate_mapping(mapper, test, "forward"), evaluate_mapping(mapper, test, "backward")]
    elif args.scenario == "supervised":
        check_split_isolation(tr, te)
        reports = [evaluate_supervised(_encoder_named(encoders, args.encoder or data.name), mapper, te)]
    else:
        check_split_isolation(otr, te)
        reports = [evaluate_zero_shot(_encoder_named(encoders, args.encoder or other.name), mapper, te)]
    for rep in reports:
        per_var = " ".join(f"{k}={fmt6(v)}" for k, v in rep.scores.items())
        out.emit(f"{rep.dataset} {rep.scenario} {rep.metric} mean={fmt6(rep.score)} {per_var}", rep.as_dict())
    if args.out is not None:
        write_results(reports, _out_dir(args) / "results.tsv")


def cmd_analyze_pca(args, out):
    mapper, encoders, _ = dataio.load_model(args.model)
    labels, rows = head_row_table(mapper)
    model = pca_fit(rows, args.k)
    coords = [pca_project(model, rows)]
    all_labels, kinds = list(labels), ["head"] * len(labels)
    cache = {}
    for manifest in args.data or ():
        ds = _load(manifest, mapper.registry, cache)
        enc = _encoder_named(encoders, ds.name)
        coords.append(pca_project(model, encode_content(enc, ds)))
        all_labels += ds.texts or ds.ids
        kinds += [ds.name] * len(ds)
    coords = np.vstack(coords)
    for i, var in enumerate(model.explained_variance):
        out.emit(f"pc{i + 1} explained_variance={fmt6(var)}", {"component": i + 1, "explained_variance": float(var)})
    for label, row in zip(labels, coords):
        out.emit(label + "\t" + "\t".join(fmt6(x) for x in row), {"label": label, "coords": _round6(row)})
    if args.out is not None:
        write_coordinates(_out_dir(args) / "pca.tsv", all_labels, coords, kinds)


def _query_features(manifest_path, token, registry, cache):
    man = dataio.load_manifest(manifest_path, registry)
    if man.embeddings is not None:
        key = ("emb", str(man.embeddings))
        if key not in cache:
            cache[key] = dataio.load_embedding_table(man.embeddings)
        vec = cache[key].lookup(token, man.lowercase_fallback)
    else:
        key = ("feat", str(man.features))
        if key not in cache:
            cache[key] = dataio.load_feature_file(man.features)
        vec = cache[key].get(token)
    if vec is None:
        raise ValidationError(f"query {token!r} not found in the feature source of {man.id}")
    return man, vec


def cmd_retrieve(args, out):
    mapper, encoders, _ = dataio.load_model(args.model)
    cache = {}
    datasets = [_load(m, mapper.registry, cache) for m in args.data]
    if args.query_data is None:
        raise ValidationError("retrieve needs --query-data (the dataset whose encoder embeds the query)")
    man, vec = _query_features(args.query_data, args.query, mapper.registry, cache)
    q = encode_content(_encoder_named(encoders, man.id), vec)
    index = build_index(mapper, encoders, datasets)
    if args.in_dataset not in set(index.datasets):
        raise ValidationError(f"--in {args.in_dataset!r} is not among the indexed datasets")
    for hit in query_top_k(index, q, args.top, args.in_dataset):
        out.emit(f"{hit.rank}\t{hit.text or hit.id}\t{fmt6(hit.similarity)}",
                 {"rank": hit.rank, "id": hit.id, "dataset": hit.dataset, "text": hit.text,
                  "similarity": float(fmt6(hit.similarity))})


def cmd_run_suite(args, out):
    d = _out_dir(args)
    registry, pairs = load_suite(args.suite)
    cfg = SuiteConfig(
        mapper=MapperTrainConfig(n_steps=args.steps, batch_size=args.batch_size, d=args.d, seed=args.seed),
        encoder=EncoderTrainConfig(n_epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
                                   patience=args.patience),
        modes=tuple(args.modes), seed=args.seed)
    reports, _, _ = run_suite(pairs, cfg, registry, out_dir=d)
    for rep in reports:
        out.emit(f"{rep.dataset}\t{rep.scenario}\t{rep.mode or '-'}\t{rep.metric}\t{fmt6(rep.score)}", rep.as_dict())


# ------------------------------------------------------------------ parser

def build_parser():
    p = _Parser(prog="emoembed", description="Emotion embeddings: label mapping and content encoders.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text, out=True, seed=True):
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(func=fn)
        sp.add_argument("--json-lines", action="store_true", help="one JSON object per result")
        if out:
            sp.add_argument("--out", help="output directory; nothing is written elsewhere")
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        return sp

    sp = add("gen-synth", cmd_gen_synth, "write a synthetic dataset pair with manifests and a suite file")
    sp.add_argument("--n", type=int, default=2000)
    sp.add_argument("--noise", type=float, default=0.05)
    sp.add_argument("--feature-dim", type=int, default=32)

    sp = add("train-mapper", cmd_train_mapper, "train the multi-way label mapper on dataset pairs")
    sp.add_argument("--pair", type=_pair_arg, action="append", required=True, metavar="A,B")
    sp.add_argument("--registry")
    sp.add_argument("--steps", type=int, default=5000)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--d", type=int, default=100)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--log-every", type=int, default=500)

    sp = add("train-encoder", cmd_train_encoder, "train a content encoder against a saved mapper")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--pair-with", help="second dataset over the same domain (joint split, multitask partner)")
    sp.add_argument("--mode", choices=MODES, default="augmented")
    sp.add_argument("--augment-format", action="append")
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--patience", type=int, default=10)
    sp.add_argument("--lr", type=float, default=1e-3)

    sp = add("translate", cmd_translate, "translate a label between formats", out=False, seed=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--format-in", required=True)
    sp.add_argument("--format-out", required=True)
    sp.add_argument("--values", type=_floats_arg, required=True)

    sp = add("predict", cmd_predict, "predict labels for every sample of a dataset", out=False, seed=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--encoder")
    sp.add_argument("--format")
    sp.add_argument("--limit", type=int)

    sp = add("evaluate", cmd_evaluate, "score a saved model on a test split")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--pair-with")
    sp.add_argument("--scenario", choices=("supervised", "zero-shot", "mapping"), required=True)
    sp.add_argument("--encoder")

    sp = add("analyze-pca", cmd_analyze_pca, "PCA of head rows and optional sample embeddings", seed=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--k", type=int, default=2)
    sp.add_argument("--data", action="append")

    sp = add("retrieve", cmd_retrieve, "nearest samples to a query token by cosine similarity", out=False,
             seed=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("--query-data", help="manifest whose feature source and encoder embed the query")
    sp.add_argument("--in", dest="in_dataset", required=True, help="dataset id to search")
    sp.add_argument("--data", action="append", required=True, help="manifests to index")
    sp.add_argument("--top", type=int, default=10)

    sp = add("run-suite", cmd_run_suite, "train and evaluate everything listed in a suite file")
    sp.add_argument("--suite", required=True)
    sp.add_argument("--modes", nargs="+", choices=MODES, default=["augmented"])
    sp.add_argument("--steps", type=int, default=5000)
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--d", type=int, default=100)
    sp.add_argument("--patience", type=int, default=10)
    return p


def main(argv=None, stdout=None, stderr=None):
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=stderr)
        args.func(args, Printer(args.json_lines, stdout))
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    except (EmoError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

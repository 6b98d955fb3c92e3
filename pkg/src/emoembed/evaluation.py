"""Metrics and the mapping / supervised / zero-shot evaluation protocols."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .content import ContentDataset, ContentEncoder, predict
from .errors import DegenerateVectorError, DimensionError, ValidationError
from .formats import LabelBatch
from .mapper import MappingDataset, MultiWayMapper, translate


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError(f"pearson_r needs two equal-length sequences, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValidationError("pearson_r needs at least two observations")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((dx * dx).sum()), np.sqrt((dy * dy).sum())
    if sx == 0.0 or sy == 0.0:
        raise DegenerateVectorError("pearson_r is undefined for a constant sequence")
    return float(np.clip((dx * dy).sum() / (sx * sy), -1.0, 1.0))


def argmax_classes(probs):
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return np.argmax(np.atleast_2d(probs), axis=-1)


def accuracy(predicted, gold) -> float:
    predicted = np.asarray(predicted)
    gold = np.asarray(gold)
    if predicted.shape != gold.shape:
        raise DimensionError(f"accuracy: {predicted.shape} vs {gold.shape}")
    if predicted.size == 0:
        raise ValidationError("accuracy of an empty prediction set")
    return float(np.mean(predicted == gold))


@dataclass
class EvalReport:
    dataset: str
    scenario: str
    metric: str
    scores: dict = field(default_factory=dict)
    score: float = float("nan")
    source: str = ""
    mode: str = ""

    def row(self):
        per_var = ";".join(f"{k}={v:.6g}" for k, v in self.scores.items())
        return [self.dataset, self.scenario, self.mode, self.metric, per_var, f"{self.score:.6g}"]

    def as_dict(self):
        return {"dataset": self.dataset, "scenario": self.scenario, "mode": self.mode, "metric": self.metric,
                "scores": self.scores, "mean": self.score, "source": self.source}


def score_labels(fmt, predicted: np.ndarray, gold: np.ndarray):
    """Per-variable Pearson r (regression) or accuracy (classification)."""
    predicted = np.atleast_2d(predicted)
    gold = np.atleast_2d(gold)
    if fmt.is_regression:
        scores = {v: pearson_r(predicted[:, i], gold[:, i]) for i, v in enumerate(fmt.variables)}
        return "pearson_r", scores, float(np.mean(list(scores.values())))
    acc = accuracy(argmax_classes(predicted), argmax_classes(gold))
    return "accuracy", {"accuracy": acc}, acc


def evaluate_mapping(mapper: MultiWayMapper, dataset: MappingDataset, direction="forward", name=None):
    """Translate every source label and score against the aligned targets.

    ``direction`` is ``"forward"`` (y1 -> y2) or ``"backward"`` (y2 -> y1).
    """
    if direction not in ("forward", "backward"):
        raise ValidationError(f"direction must be forward or backward, got {direction!r}")
    src, tgt = (dataset.y1, dataset.y2) if direction == "forward" else (dataset.y2, dataset.y1)
    fmt = mapper.format(tgt.format_id)
    pred = translate(mapper, src, tgt.format_id).values
    metric, scores, mean = score_labels(fmt, pred, tgt.values)
    label = name or f"{dataset.name}:{src.format_id}->{tgt.format_id}"
    return EvalReport(label, "mapping", metric, scores, mean, source=src.format_id)


def _evaluate_content(encoder, mapper, test: ContentDataset, scenario):
    if test.split not in ("test", "dev", "all"):
        raise ValidationError(f"refusing to evaluate on a {test.split!r} split")
    fmt = mapper.format(test.format_id)
    pred = predict(encoder, mapper, test, fmt.id).values
    metric, scores, mean = score_labels(fmt, pred, test.labels.values)
    return EvalReport(test.name, scenario, metric, scores, mean, source=encoder.name)


def evaluate_supervised(encoder: ContentEncoder, mapper, test_split: ContentDataset):
    return _evaluate_content(encoder, mapper, test_split, "supervised")


def evaluate_zero_shot(encoder_from_other_dataset: ContentEncoder, mapper, test_split: ContentDataset):
    return _evaluate_content(encoder_from_other_dataset, mapper, test_split, "zero_shot")


def check_split_isolation(train: ContentDataset, test: ContentDataset):
    overlap = set(train.ids) & set(test.ids)
    if overlap:
        raise ValidationError(f"{len(overlap)} ids shared between training and test data")


def write_results(reports, path, delimiter="\t"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["dataset", "scenario", "mode", "metric", "per_variable", "mean"])
        for rep in reports:
            w.writerow(rep.row())


def mean_score(reports, scenario=None):
    vals = [r.score for r in reports if scenario is None or r.scenario == scenario]
    return float(np.mean(vals)) if vals else float("nan")


def mapping_dataset_from(a: ContentDataset, b: ContentDataset, name=None) -> MappingDataset:
    """Labels of the items two datasets have in common, aligned by id."""
    pos_b = {i: k for k, i in enumerate(b.ids)}
    common = [(k, pos_b[i]) for k, i in enumerate(a.ids) if i in pos_b]
    if not common:
        raise ValidationError(f"datasets {a.name} and {b.name} share no items")
    ia, ib = map(np.array, zip(*common))
    return MappingDataset(LabelBatch(a.format_id, a.labels.values[ia]),
                          LabelBatch(b.format_id, b.labels.values[ib]),
                          name or f"{a.name}&{b.name}")


# ------------------------------------------------------------------ suite

@dataclass
class SuiteConfig:
    mapper: object = None
    encoder: object = None
    modes: tuple = ("augmented",)
    seed: int = 0

    def __post_init__(self):
        from .content import MODES, EncoderTrainConfig
        from .mapper import MapperTrainConfig

        self.mapper = self.mapper or MapperTrainConfig(seed=self.seed)
        self.encoder = self.encoder or EncoderTrainConfig(seed=self.seed)
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ValidationError(f"unknown modes {bad}")


def load_suite(path):
    """Suite file: optional ``registry = <file>`` and one ``pair = a, b`` line
    per dataset pair (manifest paths, relative to the suite file)."""
    from pathlib import Path

    from .dataio import load_registry, read_kv
    from .errors import ParseError
    from .formats import default_registry

    path = Path(path)
    registry, pairs = None, []
    for key, value, lineno in read_kv(path):
        if key == "registry":
            registry = load_registry(path.parent / value)
        elif key == "pair":
            parts = [p.strip() for p in value.split(",")]
            if len(parts) != 2 or not all(parts):
                raise ParseError("pair needs two manifest paths", lineno, path)
            pairs.append((path.parent / parts[0], path.parent / parts[1]))
        else:
            raise ParseError(f"unknown suite key {key!r}", lineno, path)
    if not pairs:
        raise ValidationError(f"{path}: suite lists no dataset pairs")
    return registry or default_registry(), pairs


def run_suite(pairs, config: SuiteConfig | None = None, registry=None, out_dir=None, datasets=None):
    """Train one mapper on all pairs, then content encoders per dataset, and
    report mapping, supervised and zero-shot scores.

    ``pairs`` holds ``(manifest_a, manifest_b)`` paths, or ``datasets`` may
    supply already-loaded ``(ContentDataset, ContentDataset)`` tuples.
    Returns ``(reports, mapper, encoders)``; encoders are those of the first
    mode, keyed by dataset name.
    """
    from pathlib import Path

    from .content import train_content_encoder
    from .dataio import fixed_splits, load_dataset, save_model
    from .formats import default_registry
    from .mapper import train_mapper

    config = config or SuiteConfig()
    registry = registry or default_registry()
    if datasets is None:
        cache = {}
        datasets = [(load_dataset(a, registry, cache), load_dataset(b, registry, cache)) for a, b in pairs]
    splits = []
    for a, b in datasets:
        if a.domain != b.domain:
            raise ValidationError(f"pair {a.name}/{b.name}: domains differ ({a.domain} vs {b.domain})")
        if a.format_id == b.format_id:
            raise ValidationError(f"pair {a.name}/{b.name}: both use format {a.format_id}")
        splits.append(fixed_splits(a, b, config.seed))

    mapping_train = [mapping_dataset_from(sa[0], sb[0]) for sa, sb in splits]
    mapper = train_mapper(mapping_train, config.mapper, registry)

    reports, first_encoders = [], None
    for (sa, sb) in splits:
        test_map = mapping_dataset_from(sa[2], sb[2])
        for direction in ("forward", "backward"):
            reports.append(evaluate_mapping(mapper, test_map, direction))
    for mode in config.modes:
        encoders = {}
        for (sa, sb) in splits:
            for mine, other in ((sa, sb), (sb, sa)):
                cfg = _encoder_config(config.encoder, mode, other[0].format_id)
                encoders[mine[0].name] = train_content_encoder(
                    mine[0], mapper, cfg, dev=mine[1],
                    second=other[0] if mode == "multitask" else None,
                    second_dev=other[1] if mode == "multitask" else None)
        for (sa, sb) in splits:
            for mine, other in ((sa, sb), (sb, sa)):
                check_split_isolation(mine[0], mine[2])
                rep = evaluate_supervised(encoders[mine[0].name], mapper, mine[2])
                rep.mode = mode
                reports.append(rep)
            if mode == "multitask":
                continue
            for mine, other in ((sa, sb), (sb, sa)):
                check_split_isolation(other[0], mine[2])
                rep = evaluate_zero_shot(encoders[other[0].name], mapper, mine[2])
                rep.mode = mode
                reports.append(rep)
        if first_encoders is None:
            first_encoders = encoders

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_results(reports, out_dir / "results.tsv")
        save_model(out_dir / "model.emoe", mapper, first_encoders, {"seed": config.seed})
    return reports, mapper, first_encoders


def _encoder_config(base, mode, other_format):
    from dataclasses import replace

    aug = base.augmentation_formats or (other_format,)
    return replace(base, mode=mode, augmentation_formats=aug if mode == "augmented" else ())

"""Multi-way label mapping model: label encoders and bias-free prediction heads
sharing one emotion embedding space, trained on pairs of aligned labels."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DegenerateVectorError, DimensionError, DivergenceError, RegistryError, ValidationError
from .formats import EmotionLabel, FormatRegistry, LabelBatch, LabelFormat, default_registry, validate_values
from .layers import FeedForward

log = logging.getLogger(__name__)

LOSS_TERMS = ("map", "auto", "sim", "para")


class LabelEncoder:
    def __init__(self, fmt: LabelFormat, d, hidden, rng):
        self.format_id = fmt.id
        self.net = FeedForward([fmt.size, *hidden, d], rng, activation="relu", name=f"g[{fmt.id}]")

    def __call__(self, values):
        return self.net(values)

    def parameters(self):
        return self.net.parameters()


class PredictionHead:
    """``z(W e)`` with no bias; ``z`` follows the format's problem type."""

    def __init__(self, fmt: LabelFormat, d, rng):
        self.format_id = fmt.id
        self.activation = fmt.head_activation
        bound = np.sqrt(3.0 / d)
        self.weight = ad.Parameter(rng.uniform(-bound, bound, size=(fmt.size, d)), name=f"h[{fmt.id}].weight")

    def logits(self, e):
        return ad.affine(e, self.weight)

    def __call__(self, e):
        return ad.activation(self.activation, self.logits(e))

    def parameters(self):
        return [self.weight]


class MultiWayMapper:
    def __init__(self, registry: FormatRegistry | None = None, d=100, hidden=(128, 128), seed=0):
        self.registry = registry if registry is not None else default_registry()
        self.d = int(d)
        self.hidden = tuple(int(h) for h in hidden)
        rng = np.random.default_rng([seed, 0])
        self.encoders = {f.id: LabelEncoder(f, self.d, self.hidden, rng) for f in self.registry.formats}
        self.heads = {f.id: PredictionHead(f, self.d, rng) for f in self.registry.formats}

    def format(self, format_id) -> LabelFormat:
        return self.registry[format_id]

    def encoder(self, format_id) -> LabelEncoder:
        try:
            return self.encoders[format_id]
        except KeyError:
            raise RegistryError(f"no label encoder for format {format_id!r}") from None

    def head(self, format_id) -> PredictionHead:
        try:
            return self.heads[format_id]
        except KeyError:
            raise RegistryError(f"no prediction head for format {format_id!r}") from None

    def parameters(self):
        params = []
        for fid in self.registry.ids:
            params += self.encoders[fid].parameters()
            params += self.heads[fid].parameters()
        return params

    def set_trainable(self, flag):
        for p in self.parameters():
            p.trainable = flag

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()


# ------------------------------------------------------------------ inference

def _values(label, fmt):
    validate_values(fmt, label.values)
    return label.values


def encode_label(mapper: MultiWayMapper, label) -> np.ndarray:
    """Emotion embedding of a label (vector) or label batch (rows)."""
    fmt = mapper.format(label.format_id)
    return mapper.encoder(fmt.id)(_values(label, fmt)).value


def decode_embedding(mapper: MultiWayMapper, e, target_format) -> EmotionLabel | LabelBatch:
    fmt = mapper.format(target_format)
    e = np.asarray(e, dtype=np.float64)
    if e.shape[-1] != mapper.d:
        raise DimensionError(f"embedding width {e.shape[-1]} != d={mapper.d}")
    out = mapper.head(fmt.id)(e).value
    return EmotionLabel(fmt.id, out) if out.ndim == 1 else LabelBatch(fmt.id, out)


def translate(mapper: MultiWayMapper, label, target_format):
    return decode_embedding(mapper, encode_label(mapper, label), target_format)


def head_rows(mapper: MultiWayMapper, format_id):
    fmt = mapper.format(format_id)
    W = mapper.head(fmt.id).weight.value
    return [(var, W[i].copy()) for i, var in enumerate(fmt.variables)]


# ------------------------------------------------------------------ objectives

def head_loss(fmt: LabelFormat, logits, gold, soft=False):
    """Format-specific criterion applied to head logits."""
    if fmt.criterion == "mse":
        return ad.mse(logits, gold)
    if fmt.criterion == "cross_entropy":
        return ad.cross_entropy(logits, gold, soft=soft)
    return ad.binary_cross_entropy(ad.sigmoid(logits), gold)


def _pair(mapper, y1, y2):
    if y1.format_id == y2.format_id:
        raise ValidationError(f"mapping pair needs two distinct formats, got {y1.format_id} twice")
    f1, f2 = mapper.format(y1.format_id), mapper.format(y2.format_id)
    v1 = np.atleast_2d(_values(y1, f1))
    v2 = np.atleast_2d(_values(y2, f2))
    if v1.shape[0] != v2.shape[0]:
        raise DimensionError(f"label batches differ in length: {v1.shape[0]} vs {v2.shape[0]}")
    return f1, f2, v1, v2


def _alphas(alpha, f1, f2):
    alpha = alpha or {}
    return float(alpha.get(f1.id, 1.0)), float(alpha.get(f2.id, 1.0))


def _map_term(mapper, f1, f2, v1, v2, e1, e2, a1, a2):
    h1, h2 = mapper.head(f1.id), mapper.head(f2.id)
    return ad.weighted_sum(
        [head_loss(f1, h1.logits(e2), v1), head_loss(f2, h2.logits(e1), v2)], [a1, a2])


def _auto_term(mapper, f1, f2, v1, v2, e1, e2, a1, a2):
    h1, h2 = mapper.head(f1.id), mapper.head(f2.id)
    return ad.weighted_sum(
        [head_loss(f1, h1.logits(e1), v1), head_loss(f2, h2.logits(e2), v2)], [a1, a2])


def _encode_pair(mapper, f1, f2, v1, v2):
    return mapper.encoder(f1.id)(v1), mapper.encoder(f2.id)(v2)


def mapping_loss(mapper, y1, y2, alpha=None):
    """``a1*C1[y1, h1(g2(y2))] + a2*C2[y2, h2(g1(y1))]``, batch-averaged."""
    f1, f2, v1, v2 = _pair(mapper, y1, y2)
    e1, e2 = _encode_pair(mapper, f1, f2, v1, v2)
    return _map_term(mapper, f1, f2, v1, v2, e1, e2, *_alphas(alpha, f1, f2))


def autoencoder_loss(mapper, y1, y2, alpha=None):
    """``a1*C1[y1, h1(g1(y1))] + a2*C2[y2, h2(g2(y2))]``."""
    f1, f2, v1, v2 = _pair(mapper, y1, y2)
    e1, e2 = _encode_pair(mapper, f1, f2, v1, v2)
    return _auto_term(mapper, f1, f2, v1, v2, e1, e2, *_alphas(alpha, f1, f2))


def similarity_loss(mapper, y1, y2):
    """MSE between the two label embeddings."""
    f1, f2, v1, v2 = _pair(mapper, y1, y2)
    e1, e2 = _encode_pair(mapper, f1, f2, v1, v2)
    return ad.mse(e1, e2)


def parameter_sharing_loss(mapper: MultiWayMapper):
    """Sum over equivalence classes and unordered member pairs of ``1 - cos(u, v)``
    between the corresponding head rows."""
    eq = mapper.registry.equivalences
    if len(eq) == 0:
        raise ValidationError("parameter sharing needs at least one equivalence class")
    terms = []
    for (fa, va), (fb, vb) in eq.pairs():
        u = ad.row(mapper.head(fa).weight, mapper.format(fa).index(va))
        v = ad.row(mapper.head(fb).weight, mapper.format(fb).index(vb))
        try:
            terms.append(ad.cosine(u, v))
        except DegenerateVectorError:
            raise DegenerateVectorError(f"zero head row in class of {fa}:{va} / {fb}:{vb}") from None
    return ad.weighted_sum(terms, [-1.0] * len(terms), offset=float(len(terms)))


# ------------------------------------------------------------------ training

@dataclass
class MappingDataset:
    """Two aligned label batches describing the same items in two formats."""

    y1: LabelBatch
    y2: LabelBatch
    name: str = ""

    def __post_init__(self):
        if len(self.y1) != len(self.y2):
            raise ValidationError(f"mapping dataset {self.name!r}: {len(self.y1)} vs {len(self.y2)} labels")
        if len(self.y1) == 0:
            raise ValidationError(f"mapping dataset {self.name!r} is empty")
        if self.y1.format_id == self.y2.format_id:
            raise ValidationError(f"mapping dataset {self.name!r} needs two distinct formats")

    def __len__(self):
        return len(self.y1)

    def subset(self, idx):
        return MappingDataset(self.y1[idx], self.y2[idx], self.name)


@dataclass
class MapperTrainConfig:
    n_steps: int = 5000
    batch_size: int = 32
    d: int = 100
    hidden: tuple = (128, 128)
    alpha: dict = field(default_factory=dict)
    term_weights: dict = field(default_factory=lambda: {t: 1.0 for t in LOSS_TERMS})
    sampling: str | list = "uniform"
    optimizer: ad.OptimizerConfig = field(default_factory=ad.OptimizerConfig)
    seed: int = 0
    log_every: int = 500

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValidationError("n_steps must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if any(a <= 0 for a in self.alpha.values()):
            raise ValidationError("all alpha weights must be positive")
        unknown = set(self.term_weights) - set(LOSS_TERMS)
        if unknown:
            raise ValidationError(f"unknown loss terms {sorted(unknown)}")
        self.term_weights = {t: float(self.term_weights.get(t, 1.0)) for t in LOSS_TERMS}


def _sampling_probs(datasets, sampling):
    if sampling == "uniform":
        w = np.ones(len(datasets))
    elif sampling == "size":
        w = np.array([len(ds) for ds in datasets], dtype=float)
    else:
        w = np.asarray(sampling, dtype=float)
        if w.shape != (len(datasets),) or np.any(w < 0) or w.sum() <= 0:
            raise ValidationError("dataset sampling weights must be non-negative, one per dataset")
    return w / w.sum()


def batch_losses(mapper, y1, y2, alpha=None, terms=LOSS_TERMS):
    """All active loss terms for one batch, sharing the two encodings."""
    f1, f2, v1, v2 = _pair(mapper, y1, y2)
    e1, e2 = _encode_pair(mapper, f1, f2, v1, v2)
    a1, a2 = _alphas(alpha, f1, f2)
    out = {}
    if "map" in terms:
        out["map"] = _map_term(mapper, f1, f2, v1, v2, e1, e2, a1, a2)
    if "auto" in terms:
        out["auto"] = _auto_term(mapper, f1, f2, v1, v2, e1, e2, a1, a2)
    if "sim" in terms:
        out["sim"] = ad.mse(e1, e2)
    if "para" in terms and len(mapper.registry.equivalences):
        out["para"] = parameter_sharing_loss(mapper)
    return out


def total_loss(mapper, y1, y2, config: MapperTrainConfig | None = None):
    config = config or MapperTrainConfig()
    active = [t for t in LOSS_TERMS if config.term_weights[t] != 0.0]
    parts = batch_losses(mapper, y1, y2, config.alpha, active)
    return ad.weighted_sum(parts.values(), [config.term_weights[t] for t in parts]), parts


def snap_float32(params):
    """Round parameters onto the float32 grid used by the model file."""
    for p in params:
        p.value[...] = p.value.astype(np.float32).astype(np.float64)


def train_mapper(datasets, config: MapperTrainConfig | None = None, registry=None, callback=None):
    """Fit a mapper on one or more mapping datasets.

    Each step samples a dataset, then a batch from it, and minimizes the
    weighted sum of the mapping, autoencoder, similarity and parameter
    sharing losses. Datasets sharing a format share its encoder and head.
    """
    config = config or MapperTrainConfig()
    datasets = list(datasets)
    if not datasets:
        raise ValidationError("train_mapper needs at least one mapping dataset")
    registry = registry if registry is not None else default_registry()
    for ds in datasets:
        registry[ds.y1.format_id], registry[ds.y2.format_id]
        if len(ds) == 0:
            raise ValidationError(f"mapping dataset {ds.name!r} is empty")

    mapper = MultiWayMapper(registry, d=config.d, hidden=config.hidden, seed=config.seed)
    opt = config.optimizer.build(mapper.parameters())
    rng = np.random.default_rng([config.seed, 1])
    probs = _sampling_probs(datasets, config.sampling)

    for step in range(1, config.n_steps + 1):
        ds = datasets[rng.choice(len(datasets), p=probs)]
        idx = rng.choice(len(ds), size=min(config.batch_size, len(ds)), replace=False)
        with ad.Graph() as graph:
            root, parts = total_loss(mapper, ds.y1[idx], ds.y2[idx], config)
        value = root.item()
        if not np.isfinite(value):
            raise DivergenceError(step, value)
        graph.backward(root)
        opt.step()
        if config.log_every and (step % config.log_every == 0 or step == config.n_steps):
            log.info(format_progress(step, parts))
        if callback is not None:
            callback(step, {k: v.item() for k, v in parts.items()})

    snap_float32(mapper.parameters())
    return mapper


def format_progress(step, parts):
    vals = {t: float(getattr(parts[t], "value", parts[t])) if t in parts else 0.0 for t in LOSS_TERMS}
    return " ".join([f"step={step}"] + [f"l_{t}={vals[t]:.6g}" for t in LOSS_TERMS])

"""Content encoders: map feature vectors of words, texts or images into the
emotion space, trained against frozen prediction heads."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, DivergenceError, ValidationError
from .formats import EmotionLabel, LabelBatch
from .layers import FeedForward
from .mapper import MultiWayMapper, decode_embedding, head_loss, snap_float32

log = logging.getLogger(__name__)

MODES = ("augmented", "plain", "multitask")


@dataclass(frozen=True)
class ContentSample:
    id: str
    features: np.ndarray
    text: str | None = None


@dataclass
class ContentDataset:
    """Samples of one domain, labelled in one format.

    ``features`` has one row per id; ``labels`` are already normalized.
    """

    name: str
    domain: str
    ids: list
    features: np.ndarray
    labels: LabelBatch
    texts: list | None = None
    split: str = "all"
    normalized: bool = True
    dropped: int = 0
    manifest: object = None

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        if not (len(self.ids) == self.features.shape[0] == len(self.labels)):
            raise ValidationError(f"dataset {self.name}: {len(self.ids)} ids, {self.features.shape[0]} "
                                  f"feature rows, {len(self.labels)} labels")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError(f"dataset {self.name}: duplicate sample ids")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError(f"dataset {self.name}: non-finite features")
        if self.texts is not None and len(self.texts) != len(self.ids):
            raise ValidationError(f"dataset {self.name}: texts do not align with ids")

    def __len__(self):
        return len(self.ids)

    @property
    def format_id(self):
        return self.labels.format_id

    @property
    def width(self):
        return self.features.shape[1]

    def sample(self, i) -> ContentSample:
        return ContentSample(self.ids[i], self.features[i], self.texts[i] if self.texts else None)

    def subset(self, idx, split=None):
        idx = np.asarray(idx, dtype=int)
        return replace(
            self,
            ids=[self.ids[i] for i in idx],
            features=self.features[idx],
            labels=self.labels[idx],
            texts=[self.texts[i] for i in idx] if self.texts else None,
            split=split or self.split,
        )


class ContentEncoder:
    def __init__(self, domain, n_features, d, hidden=(256, 128), dropout=0.2, seed=0, name=None):
        self.domain = domain
        self.name = name or domain
        rng = np.random.default_rng([seed, 2])
        self.net = FeedForward([n_features, *hidden, d], rng, activation="relu", dropout=dropout,
                               name=f"f[{self.name}]")

    @property
    def n_features(self):
        return self.net.n_in

    @property
    def d(self):
        return self.net.n_out

    def __call__(self, features, rng=None):
        x = np.asarray(features, dtype=np.float64) if not isinstance(features, ad.Tensor) else features
        if x.shape[-1] != self.n_features:
            raise DimensionError(f"encoder {self.name} expects {self.n_features} features, got {x.shape[-1]}")
        return self.net(x, rng)

    def parameters(self):
        return self.net.parameters()


def _features(x):
    return x.features if isinstance(x, (ContentSample, ContentDataset)) else np.asarray(x, dtype=np.float64)


def encode_content(encoder: ContentEncoder, sample) -> np.ndarray:
    """Embedding of a sample, a dataset, or a raw feature array."""
    return encoder(_features(sample)).value


def predict(encoder: ContentEncoder, mapper: MultiWayMapper, sample, format_id):
    return decode_embedding(mapper, encode_content(encoder, sample), format_id)


def zero_shot_predict(encoder, mapper, sample, unseen_format):
    """Prediction in a format the encoder never saw gold labels for."""
    return predict(encoder, mapper, sample, unseen_format)


def synthesize_label(mapper: MultiWayMapper, y1, target_format):
    """Teacher label ``h2(g1(y1))`` in the target format."""
    if y1.format_id == target_format:
        raise ValidationError("augmentation format must differ from the source format")
    fmt = mapper.format(y1.format_id)
    values = mapper.encoder(fmt.id)(y1.values).value
    out = mapper.head(target_format)(values).value
    return EmotionLabel(target_format, out) if out.ndim == 1 else LabelBatch(target_format, out)


@dataclass
class EncoderTrainConfig:
    n_epochs: int = 100
    batch_size: int = 32
    hidden: tuple = (256, 128)
    dropout: float = 0.2
    optimizer: ad.OptimizerConfig = field(default_factory=ad.OptimizerConfig)
    mode: str = "augmented"
    augmentation_formats: tuple = ()
    aug_weight: float = 1.0
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown encoder training mode {self.mode!r}")
        if isinstance(self.augmentation_formats, str):
            self.augmentation_formats = (self.augmentation_formats,)
        self.augmentation_formats = tuple(self.augmentation_formats)
        if self.n_epochs < 1 or self.batch_size < 1:
            raise ValidationError("n_epochs and batch_size must be >= 1")
        if self.aug_weight < 0:
            raise ValidationError("aug_weight must be non-negative")


def prediction_loss(encoder, mapper, features, gold: LabelBatch, rng=None):
    """Gold-label loss through the frozen head of the gold format."""
    fmt = mapper.format(gold.format_id)
    e = encoder(features, rng)
    return head_loss(fmt, mapper.head(fmt.id).logits(e), gold.values), e


def augmentation_loss(mapper, e, gold: LabelBatch, target_format):
    """Loss against the teacher label synthesized from ``gold``.

    Classification teacher outputs are kept soft.
    """
    fmt = mapper.format(target_format)
    teacher = synthesize_label(mapper, gold, target_format).values
    return head_loss(fmt, mapper.head(fmt.id).logits(e), teacher, soft=True)


def encoder_loss(encoder, mapper, features, gold, aug_formats=(), aug_weight=1.0, rng=None):
    """``L_pred + aug_weight * sum(L_aug)`` for one batch."""
    pred, e = prediction_loss(encoder, mapper, features, gold, rng)
    terms, weights = [pred], [1.0]
    for target in aug_formats:
        terms.append(augmentation_loss(mapper, e, gold, target))
        weights.append(aug_weight)
    return ad.weighted_sum(terms, weights)


def _dev_loss(encoder, mapper, dataset, aug_formats=(), aug_weight=1.0):
    return encoder_loss(encoder, mapper, dataset.features, dataset.labels, aug_formats, aug_weight).item()


def train_content_encoder(dataset: ContentDataset, mapper: MultiWayMapper, config=None,
                          dev: ContentDataset | None = None, second: ContentDataset | None = None,
                          second_dev: ContentDataset | None = None):
    """Train an encoder for ``dataset`` with every mapper parameter frozen.

    ``augmented`` adds teacher-label losses for ``augmentation_formats``;
    ``multitask`` alternates batches with the gold-labelled ``second`` dataset.
    With ``dev`` given, training stops after ``patience`` epochs without a dev
    improvement and the best epoch's weights are kept.
    """
    config = config or EncoderTrainConfig()
    mapper.format(dataset.format_id)
    aug = config.augmentation_formats if config.mode == "augmented" else ()
    if config.mode == "augmented" and not aug:
        raise ValidationError("augmented mode needs an augmentation format")
    for target in aug:
        mapper.format(target)
        if target == dataset.format_id:
            raise ValidationError("augmentation format must differ from the dataset format")
    if config.mode == "multitask":
        if second is None:
            raise ValidationError("multitask mode needs a second dataset")
        if second.width != dataset.width:
            raise DimensionError("multitask datasets must share a feature width")
        mapper.format(second.format_id)

    encoder = ContentEncoder(dataset.domain, dataset.width, mapper.d, config.hidden, config.dropout,
                             config.seed, name=dataset.name)
    params = encoder.parameters()
    opt = config.optimizer.build(params)
    rng = np.random.default_rng([config.seed, 3])
    frozen_before = mapper.fingerprint()
    previously = [p.trainable for p in mapper.parameters()]
    mapper.set_trainable(False)

    sources = [(dataset, aug)] + ([(second, ())] if config.mode == "multitask" else [])
    best, best_state, stale, step = np.inf, None, 0, 0
    try:
        for epoch in range(1, config.n_epochs + 1):
            orders = [rng.permutation(len(ds)) for ds, _ in sources]
            n_batches = [int(np.ceil(len(ds) / config.batch_size)) for ds, _ in sources]
            for b in range(max(n_batches)):
                for (ds, targets), order, nb in zip(sources, orders, n_batches):
                    if b >= nb:
                        continue
                    idx = order[b * config.batch_size:(b + 1) * config.batch_size]
                    step += 1
                    with ad.Graph() as graph:
                        root = encoder_loss(encoder, mapper, ds.features[idx], ds.labels[idx],
                                            targets, config.aug_weight, rng)
                    if not np.isfinite(root.item()):
                        raise DivergenceError(step, root.item())
                    graph.backward(root)
                    opt.step()
            if dev is not None:
                score = _dev_loss(encoder, mapper, dev, aug, config.aug_weight)
                if second_dev is not None and config.mode == "multitask":
                    score += _dev_loss(encoder, mapper, second_dev)
                if score < best - 1e-12:
                    best, stale = score, 0
                    best_state = [p.value.copy() for p in params]
                else:
                    stale += 1
                    if stale >= config.patience:
                        log.info("encoder %s: early stop at epoch %d (dev loss %.6g)", encoder.name, epoch, best)
                        break
    finally:
        for p, flag in zip(mapper.parameters(), previously):
            p.trainable = flag
    assert mapper.fingerprint() == frozen_before, "mapper parameters changed during encoder training"

    if best_state is not None:
        for p, v in zip(params, best_state):
            p.value[...] = v
    snap_float32(params)
    return encoder

"""Emotion label formats, equivalence classes, and label normalization."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ConfigurationError, RegistryError, UnsupportedError, ValidationError

log = logging.getLogger(__name__)

REGRESSION = "regression"
SINGLE_LABEL = "single_label"
MULTI_LABEL = "multi_label"
PROBLEMS = (REGRESSION, SINGLE_LABEL, MULTI_LABEL)


@dataclass(frozen=True)
class LabelFormat:
    """A named, ordered set of emotion variables.

    ``interval`` is the normalized value range for regression formats and
    ``None`` for classification formats, whose values live in {0, 1}.
    Variable order fixes the vector layout and one-hot indices.
    """

    id: str
    variables: tuple
    problem: str = REGRESSION
    interval: tuple | None = (-1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        if not self.id:
            raise ValidationError("format id must be non-empty")
        if not self.variables:
            raise ValidationError(f"format {self.id} has no variables")
        if len(set(self.variables)) != len(self.variables):
            raise ValidationError(f"format {self.id} has duplicate variable names")
        if self.problem not in PROBLEMS:
            raise ValidationError(f"format {self.id}: unknown problem type {self.problem!r}")
        if self.problem == REGRESSION:
            if self.interval is None:
                raise ValidationError(f"regression format {self.id} needs an interval range")
            lo, hi = map(float, self.interval)
            if not lo < hi:
                raise ValidationError(f"format {self.id}: empty interval {self.interval}")
            object.__setattr__(self, "interval", (lo, hi))
        elif self.interval is not None:
            raise ValidationError(f"classification format {self.id} takes the binary range, not an interval")

    @property
    def size(self):
        return len(self.variables)

    @property
    def is_regression(self):
        return self.problem == REGRESSION

    @property
    def head_activation(self):
        return {REGRESSION: "identity", SINGLE_LABEL: "softmax", MULTI_LABEL: "sigmoid"}[self.problem]

    @property
    def criterion(self):
        return {REGRESSION: "mse", SINGLE_LABEL: "cross_entropy", MULTI_LABEL: "binary_cross_entropy"}[self.problem]

    @property
    def metric(self):
        return "pearson_r" if self.is_regression else "accuracy"

    def index(self, variable):
        try:
            return self.variables.index(variable)
        except ValueError:
            raise RegistryError(f"format {self.id} has no variable {variable!r}") from None


@dataclass(frozen=True)
class EmotionLabel:
    format_id: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


@dataclass(frozen=True)
class LabelBatch:
    """Row-stacked labels of one format, shape ``(batch, n_variables)``."""

    format_id: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.atleast_2d(np.asarray(self.values, dtype=np.float64)))

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return EmotionLabel(self.format_id, self.values[idx])
        return LabelBatch(self.format_id, self.values[idx])

    @classmethod
    def from_labels(cls, labels):
        labels = list(labels)
        if not labels:
            raise ValidationError("cannot batch an empty label list")
        fid = labels[0].format_id
        if any(lb.format_id != fid for lb in labels):
            raise ValidationError("labels in a batch must share one format")
        return cls(fid, np.stack([lb.values for lb in labels]))


@dataclass(frozen=True)
class VariableScale:
    variable: str
    source_min: float
    source_max: float

    def __post_init__(self):
        if not self.source_min < self.source_max:
            raise ConfigurationError(f"scale for {self.variable}: need min < max, got "
                                     f"[{self.source_min}, {self.source_max}]")


@dataclass(frozen=True)
class EquivalenceClasses:
    """Groups of (format_id, variable) pairs with identical affective meaning."""

    classes: tuple = ()

    def __post_init__(self):
        classes = tuple(tuple((str(f), str(v)) for f, v in cls) for cls in self.classes)
        seen = set()
        for cls in classes:
            if len(cls) < 2:
                raise ValidationError(f"equivalence class {cls} needs at least two members")
            for pair in cls:
                if pair in seen:
                    raise ValidationError(f"{pair[0]}:{pair[1]} appears in more than one class")
                seen.add(pair)
        object.__setattr__(self, "classes", classes)

    def __iter__(self):
        return iter(self.classes)

    def __len__(self):
        return len(self.classes)

    def members(self):
        return [pair for cls in self.classes for pair in cls]

    def class_of(self, format_id, variable):
        for cls in self.classes:
            if (format_id, variable) in cls:
                return cls
        return None

    def pairs(self):
        """Unordered pairs within each class; each pair once."""
        return [pair for cls in self.classes for pair in combinations(cls, 2)]


@dataclass(frozen=True)
class FormatRegistry:
    formats: tuple
    equivalences: EquivalenceClasses = field(default_factory=EquivalenceClasses)

    def __post_init__(self):
        formats = tuple(self.formats)
        if not formats:
            raise ValidationError("a registry needs at least one format")
        ids = [f.id for f in formats]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate format ids in {ids}")
        object.__setattr__(self, "formats", formats)
        for fid, var in self.equivalences.members():
            if fid not in ids:
                raise RegistryError(f"equivalence class references unknown format {fid!r}")
            self[fid].index(var)

    def __getitem__(self, format_id) -> LabelFormat:
        for f in self.formats:
            if f.id == format_id:
                return f
        raise RegistryError(f"unknown label format {format_id!r}")

    def __contains__(self, format_id):
        return any(f.id == format_id for f in self.formats)

    def __len__(self):
        return len(self.formats)

    @property
    def ids(self):
        return [f.id for f in self.formats]

    def validate(self, label):
        fmt = self[label.format_id]
        validate_values(fmt, label.values)
        return fmt


def validate_values(fmt: LabelFormat, values, tol=1e-9):
    """Raise unless ``values`` (vector or row batch) is valid under ``fmt``."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape[-1:] != (fmt.size,) or v.ndim not in (1, 2):
        raise ValidationError(f"{fmt.id} expects {fmt.size} values, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{fmt.id} label has non-finite values")
    if fmt.is_regression:
        lo, hi = fmt.interval
        if np.any(v < lo - tol) or np.any(v > hi + tol):
            raise ValidationError(f"{fmt.id} values outside normalized range [{lo}, {hi}]")
        return
    if not np.all((v == 0.0) | (v == 1.0)):
        raise ValidationError(f"{fmt.id} values must be 0 or 1")
    if fmt.problem == SINGLE_LABEL and not np.all(v.sum(axis=-1) == 1.0):
        raise ValidationError(f"{fmt.id} label must be one-hot")


def default_registry() -> FormatRegistry:
    formats = (
        LabelFormat("VA", ("Valence", "Arousal"), REGRESSION, (-1.0, 1.0)),
        LabelFormat("VAD", ("Valence", "Arousal", "Dominance"), REGRESSION, (-1.0, 1.0)),
        LabelFormat("BE5", ("Joy", "Anger", "Sadness", "Fear", "Disgust"), REGRESSION, (0.0, 1.0)),
        LabelFormat("BE7", ("Happy", "Anger", "Sad", "Fear", "Disgust", "Surprise", "Neutral"),
                    SINGLE_LABEL, None),
        LabelFormat("BE8", ("Happiness", "Anger", "Sadness", "Fear", "Disgust", "Surprise", "Neutral",
                            "Contempt"), SINGLE_LABEL, None),
    )
    classes = EquivalenceClasses((
        (("VA", "Valence"), ("VAD", "Valence")),
        (("VA", "Arousal"), ("VAD", "Arousal")),
        (("BE5", "Joy"), ("BE7", "Happy"), ("BE8", "Happiness")),
        (("BE5", "Anger"), ("BE7", "Anger"), ("BE8", "Anger")),
        (("BE5", "Sadness"), ("BE7", "Sad"), ("BE8", "Sadness")),
        (("BE5", "Fear"), ("BE7", "Fear"), ("BE8", "Fear")),
        (("BE5", "Disgust"), ("BE7", "Disgust"), ("BE8", "Disgust")),
        (("BE7", "Surprise"), ("BE8", "Surprise")),
        (("BE7", "Neutral"), ("BE8", "Neutral")),
    ))
    return FormatRegistry(formats, classes)


def _scales_for(fmt, scales):
    by_name = {s.variable: s for s in scales}
    missing = [v for v in fmt.variables if v not in by_name]
    if missing:
        raise ConfigurationError(f"{fmt.id}: no source scale for {', '.join(missing)}")
    lo = np.array([by_name[v].source_min for v in fmt.variables])
    hi = np.array([by_name[v].source_max for v in fmt.variables])
    return lo, hi


def normalize(raw, scales, fmt: LabelFormat) -> EmotionLabel:
    """Min-max map raw ratings onto the format's interval.

    Classification values are validated and passed through unchanged.
    Raw values outside their source interval are clamped with a warning.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if not fmt.is_regression:
        validate_values(fmt, raw)
        return EmotionLabel(fmt.id, raw.copy())
    if raw.shape[-1:] != (fmt.size,):
        raise ValidationError(f"{fmt.id} expects {fmt.size} raw values, got shape {raw.shape}")
    lo, hi = _scales_for(fmt, scales)
    clamped = np.clip(raw, lo, hi)
    if np.any(clamped != raw):
        log.warning("%s: clamped raw values %s to source ranges", fmt.id, raw[clamped != raw])
    t_lo, t_hi = fmt.interval
    values = t_lo + (clamped - lo) / (hi - lo) * (t_hi - t_lo)
    return EmotionLabel(fmt.id, values)


def denormalize(label: EmotionLabel, scales, fmt: LabelFormat) -> np.ndarray:
    if not fmt.is_regression:
        raise UnsupportedError(f"{fmt.id} is a classification format; nothing to denormalize")
    lo, hi = _scales_for(fmt, scales)
    t_lo, t_hi = fmt.interval
    return lo + (np.asarray(label.values) - t_lo) / (t_hi - t_lo) * (hi - lo)


def encode_input(label: EmotionLabel, fmt: LabelFormat) -> np.ndarray:
    """Vector fed to a label encoder. All three problem types pass through."""
    if label.format_id != fmt.id:
        raise ValidationError(f"label of format {label.format_id} given for {fmt.id}")
    validate_values(fmt, label.values)
    return np.array(label.values, dtype=np.float64)


def one_hot(fmt: LabelFormat, variable) -> EmotionLabel:
    values = np.zeros(fmt.size)
    values[fmt.index(variable)] = 1.0
    return EmotionLabel(fmt.id, values)

"""Manifests, lexicon and embedding-table loaders, splits, the synthetic
oracle generator, and the binary model file."""
from __future__ import annotations

import csv
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .content import ContentDataset, ContentEncoder
from .errors import (ConfigurationError, CoverageError, ModelFormatError, ParseError,
                     UnsupportedVersionError, ValidationError)
from .formats import (MULTI_LABEL, PROBLEMS, REGRESSION, SINGLE_LABEL, EquivalenceClasses,
                      FormatRegistry, LabelBatch, LabelFormat, VariableScale, default_registry, normalize)
from .mapper import MappingDataset, MultiWayMapper

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ key-value files

def read_kv(path):
    """``key = value`` lines; ``#`` starts a comment; keys may repeat."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    entries = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError("empty key", lineno, path)
        entries.append((key, value, lineno))
    return entries


def _floats(text, n=None, what="values", line=None, path=None):
    try:
        vals = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise ParseError(f"non-numeric {what}: {text!r}", line, path) from None
    if n is not None and len(vals) != n:
        raise ParseError(f"expected {n} {what}, got {len(vals)}", line, path)
    return vals


def load_registry(path) -> FormatRegistry:
    """Registry file lines::

        format = VAD | regression | -1,1 | Valence, Arousal, Dominance
        format = BE7 | single_label | binary | Happy, Anger, ...
        class = VA:Valence, VAD:Valence
    """
    formats, classes = [], []
    for key, value, lineno in read_kv(path):
        if key == "format":
            parts = [p.strip() for p in value.split("|")]
            if len(parts) != 4:
                raise ParseError("format needs 'id | problem | range | variables'", lineno, path)
            fid, problem, rng, variables = parts
            if problem not in PROBLEMS:
                raise ParseError(f"unknown problem type {problem!r}", lineno, path)
            interval = None if rng == "binary" else tuple(_floats(rng, 2, "range bounds", lineno, path))
            names = [v.strip() for v in variables.split(",") if v.strip()]
            try:
                formats.append(LabelFormat(fid, names, problem, interval))
            except ValidationError as exc:
                raise ParseError(str(exc), lineno, path) from None
        elif key == "class":
            members = []
            for m in value.split(","):
                if ":" not in m:
                    raise ParseError(f"class member {m.strip()!r} is not FORMAT:Variable", lineno, path)
                f, v = m.split(":", 1)
                members.append((f.strip(), v.strip()))
            classes.append(tuple(members))
        else:
            raise ParseError(f"unknown key {key!r}", lineno, path)
    return FormatRegistry(tuple(formats), EquivalenceClasses(tuple(classes)))


def registry_lines(registry: FormatRegistry):
    lines = []
    for f in registry.formats:
        rng = "binary" if f.interval is None else f"{f.interval[0]:g},{f.interval[1]:g}"
        lines.append(f"format = {f.id} | {f.problem} | {rng} | {', '.join(f.variables)}")
    for cls in registry.equivalences:
        lines.append("class = " + ", ".join(f"{a}:{b}" for a, b in cls))
    return lines


@dataclass
class DatasetManifest:
    id: str
    domain: str
    format: str
    data: Path
    scales: dict = field(default_factory=dict)
    split: tuple = (8, 1, 1)
    embeddings: Path | None = None
    features: Path | None = None
    lowercase_fallback: bool = False
    seed: int = 0


def load_manifest(path, registry=None) -> DatasetManifest:
    """Dataset manifest::

        id = en1
        domain = en-words
        format = VAD
        data = en1.csv
        embeddings = vectors.vec      # or: features = feats.csv
        split = 8,1,1
        scale.Valence = 1,9
    """
    path = Path(path)
    base = path.parent
    fields, scales = {}, {}
    for key, value, lineno in read_kv(path):
        if key.startswith("scale."):
            var = key[len("scale."):]
            lo, hi = _floats(value, 2, "scale bounds", lineno, path)
            try:
                scales[var] = VariableScale(var, lo, hi)
            except ConfigurationError as exc:
                raise ParseError(str(exc), lineno, path) from None
        elif key in ("id", "domain", "format", "data", "split", "embeddings", "features",
                     "lowercase_fallback", "seed"):
            fields[key] = (value, lineno)
        else:
            raise ParseError(f"unknown manifest key {key!r}", lineno, path)
    for req in ("id", "domain", "format", "data"):
        if req not in fields:
            raise ConfigurationError(f"{path}: manifest lacks required key {req!r}")
    if "embeddings" in fields and "features" in fields:
        raise ConfigurationError(f"{path}: give either embeddings or features, not both")
    if "embeddings" not in fields and "features" not in fields:
        raise ConfigurationError(f"{path}: manifest needs an embeddings or features source")
    split = (8, 1, 1)
    if "split" in fields:
        split = tuple(_floats(fields["split"][0], 3, "split ratios", fields["split"][1], path))
        if any(r <= 0 for r in split):
            raise ParseError("split ratios must be positive", fields["split"][1], path)
    man = DatasetManifest(
        id=fields["id"][0],
        domain=fields["domain"][0],
        format=fields["format"][0],
        data=base / fields["data"][0],
        scales=scales,
        split=split,
        embeddings=base / fields["embeddings"][0] if "embeddings" in fields else None,
        features=base / fields["features"][0] if "features" in fields else None,
        lowercase_fallback=fields.get("lowercase_fallback", ("false", 0))[0].lower() in ("1", "true", "yes"),
        seed=int(fields.get("seed", ("0", 0))[0]),
    )
    if registry is not None:
        fmt = registry[man.format]
        if fmt.is_regression:
            missing = [v for v in fmt.variables if v not in scales]
            if missing:
                raise ConfigurationError(f"{path}: no scale for {', '.join(missing)}")
    return man


# ------------------------------------------------------------------ embedding tables

@dataclass
class EmbeddingTable:
    tokens: list
    vectors: np.ndarray

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValidationError("embedding table has duplicate tokens")

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def lookup(self, token, lowercase_fallback=False):
        i = self.index.get(token)
        if i is None and lowercase_fallback:
            i = self.index.get(token.lower())
        return None if i is None else self.vectors[i]


def load_embedding_table(path) -> EmbeddingTable:
    """Whitespace-separated ``token v1 ... vdim`` lines, optionally preceded
    by a ``count dim`` header line."""
    path = Path(path)
    tokens, rows, dim = [], [], None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2:
                try:
                    _, dim = int(parts[0]), int(parts[1])
                    continue
                except ValueError:
                    pass
            if dim is None:
                dim = len(parts) - 1
            if len(parts) - 1 != dim:
                raise ParseError(f"expected {dim} values, got {len(parts) - 1}", lineno, path)
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError:
                raise ParseError("non-numeric vector entry", lineno, path) from None
            tokens.append(parts[0])
    if not tokens:
        raise ParseError("embedding table is empty", None, path)
    return EmbeddingTable(tokens, np.asarray(rows, dtype=np.float64))


def load_feature_file(path):
    """CSV of ``id, f1, ..., fk`` with a header row."""
    path = Path(path)
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("feature file is empty", None, path)
        width = len(header) - 1
        for lineno, row in enumerate(reader, 2):
            if len(row) != width + 1:
                raise ParseError(f"expected {width + 1} columns, got {len(row)}", lineno, path)
            try:
                out[row[0]] = np.array([float(x) for x in row[1:]])
            except ValueError:
                raise ParseError("non-numeric feature", lineno, path) from None
    return out


# ------------------------------------------------------------------ lexicons

def load_lexicon(path, manifest: DatasetManifest, registry=None, table=None) -> ContentDataset:
    """Read a labelled CSV (``id[,text],<variables...>``) and normalize it.

    Samples are resolved to feature vectors through ``table`` (an
    :class:`EmbeddingTable`, looked up by text if present, else id) or a
    mapping of id to vector. Unresolvable rows are dropped and counted.
    """
    registry = registry or default_registry()
    fmt = registry[manifest.format]
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("lexicon is empty", None, path)
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "id":
        raise ParseError("first column must be 'id'", 1, path)
    has_text = len(header) > 1 and header[1] == "text"
    variables = header[2:] if has_text else header[1:]
    if tuple(variables) != fmt.variables:
        raise ValidationError(f"{path}: header variables {variables} do not match format "
                              f"{fmt.id} variables {list(fmt.variables)}")
    if len(rows) == 1:
        raise ParseError("lexicon has a header but no rows", 1, path)
    lead = 2 if has_text else 1
    scales = [manifest.scales[v] for v in fmt.variables] if fmt.is_regression else []

    ids, texts, feats, labels, misses = [], [], [], [], 0
    for lineno, row in enumerate(rows[1:], 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, got {len(row)}", lineno, path)
        try:
            raw = [float(x) for x in row[lead:]]
        except ValueError:
            raise ParseError("non-numeric rating", lineno, path) from None
        try:
            label = normalize(raw, scales, fmt)
        except ValidationError as exc:
            raise ParseError(str(exc), lineno, path) from None
        sid = row[0].strip()
        text = row[1] if has_text else None
        if isinstance(table, EmbeddingTable):
            vec = table.lookup(text if has_text else sid, manifest.lowercase_fallback)
        elif table is not None:
            vec = table.get(sid)
        else:
            vec = None
        if vec is None:
            misses += 1
            continue
        ids.append(sid)
        texts.append(text if has_text else sid)
        feats.append(vec)
        labels.append(label.values)
    total = len(ids) + misses
    if total == 0:
        raise ParseError("lexicon has no data rows", None, path)
    if misses:
        log.warning("%s: dropped %d of %d rows without feature vectors", manifest.id, misses, total)
    if misses * 2 > total:
        raise CoverageError(f"{manifest.id}: {misses} of {total} samples have no feature vector")
    return ContentDataset(manifest.id, manifest.domain, ids, np.vstack(feats),
                          LabelBatch(fmt.id, np.vstack(labels)), texts, dropped=misses, manifest=manifest)


def load_dataset(manifest_path, registry=None, cache=None) -> ContentDataset:
    """Manifest plus everything it references, labels normalized."""
    registry = registry or default_registry()
    man = load_manifest(manifest_path, registry)
    cache = {} if cache is None else cache
    if man.embeddings is not None:
        key = ("emb", str(man.embeddings))
        if key not in cache:
            cache[key] = load_embedding_table(man.embeddings)
    else:
        key = ("feat", str(man.features))
        if key not in cache:
            cache[key] = load_feature_file(man.features)
    return load_lexicon(man.data, man, registry, cache[key])


# ------------------------------------------------------------------ splits

def assign_splits(ids, ratios=(8, 1, 1), seed=0):
    """Seeded ``id -> "train" | "dev" | "test"`` assignment.

    The shuffle runs over the sorted id set, so the result does not depend
    on row order.
    """
    ids = sorted(set(map(str, ids)))
    n = len(ids)
    if n < 3:
        raise ValidationError(f"need at least 3 items to split, got {n}")
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios <= 0):
        raise ValidationError("split ratios must be three positive numbers")
    fr = ratios / ratios.sum()
    n_dev = max(1, int(round(n * fr[1])))
    n_test = max(1, int(round(n * fr[2])))
    if n_dev + n_test >= n:
        n_dev = n_test = 1
    perm = np.random.default_rng(seed).permutation(n)
    out = {}
    for rank, k in enumerate(perm):
        out[ids[k]] = "test" if rank < n_test else "dev" if rank < n_test + n_dev else "train"
    return out


def apply_splits(dataset: ContentDataset, assignment):
    """``(train, dev, test)`` subsets; ids missing from ``assignment`` go to train."""
    groups = {"train": [], "dev": [], "test": []}
    for k, i in enumerate(dataset.ids):
        groups[assignment.get(i, "train")].append(k)
    return tuple(dataset.subset(groups[s], s) for s in ("train", "dev", "test"))


def split_dataset(dataset: ContentDataset, ratios=(8, 1, 1), seed=0):
    if len(dataset) < 3:
        raise ValidationError(f"dataset {dataset.name} has {len(dataset)} items; need at least 3 to split")
    return apply_splits(dataset, assign_splits(dataset.ids, ratios, seed))


def split_pair(a: ContentDataset, b: ContentDataset, ratios=(8, 1, 1), seed=0):
    """Split two datasets over one domain so a shared item lands in the same
    part of both."""
    assignment = assign_splits(set(a.ids) | set(b.ids), ratios, seed)
    return apply_splits(a, assignment), apply_splits(b, assignment)


def fixed_splits(a: ContentDataset, b: ContentDataset | None = None, seed=0):
    """The dataset's fixed split: ratios and seed come from its manifest when
    it has one. With ``b`` the two are split jointly (see :func:`split_pair`)."""
    ratios = a.manifest.split if a.manifest is not None else (8, 1, 1)
    seed = a.manifest.seed if a.manifest is not None else seed
    if b is None:
        return split_dataset(a, ratios, seed)
    return split_pair(a, b, ratios, seed)


# ------------------------------------------------------------------ synthetic oracle

SYNTH_A, SYNTH_B = "SA", "SB"


def synthetic_registry() -> FormatRegistry:
    """Two regression formats whose first variables are declared equivalent."""
    return FormatRegistry(
        (
            LabelFormat(SYNTH_A, ("Valence", "Arousal", "Dominance"), REGRESSION, (-1.0, 1.0)),
            LabelFormat(SYNTH_B, ("Pleasure", "Joy", "Energy", "Control"), REGRESSION, (0.0, 1.0)),
        ),
        EquivalenceClasses(((("SA", "Valence"), ("SB", "Pleasure")),)),
    )


def synthetic_map(ya):
    """Ground-truth map from SA labels in [-1, 1]^3 to SB labels in [0, 1]^4.

    With ``u = (1 + a) / 2`` and ``s(x) = sin(pi x / 2)^2``::

        Pleasure = u1
        Joy      = s(u1 * (0.6 + 0.4 u2))
        Energy   = s(u2)
        Control  = s(u3) * (0.8 + 0.2 u1)

    The map is smooth and invertible on its image, and every output has a
    standard deviation above 0.25 under uniform inputs.
    """
    u = (1.0 + np.atleast_2d(ya)) / 2.0

    def s(x):
        return np.sin(np.pi / 2.0 * x) ** 2

    return np.stack([
        u[:, 0],
        s(u[:, 0] * (0.6 + 0.4 * u[:, 1])),
        s(u[:, 1]),
        s(u[:, 2]) * (0.8 + 0.2 * u[:, 0]),
    ], axis=1)


@dataclass
class SyntheticPair:
    registry: FormatRegistry
    mapping: MappingDataset
    a: ContentDataset
    b: ContentDataset
    projection: np.ndarray


def generate_synthetic_pair(n=2000, noise=0.05, seed=0, feature_dim=32, feature_noise=0.05):
    """Labels ``y_A`` uniform on [-1, 1]^3, ``y_B = clip(T(y_A) + N(0, noise), 0, 1)``.

    Content features are ``P y_A + N(0, feature_noise)`` for a fixed random
    ``feature_dim x 3`` matrix ``P``. Both content datasets cover the same
    items, as dataset pairs over one domain do.
    """
    if noise < 0 or feature_noise < 0:
        raise ValidationError("noise levels must be non-negative")
    rng = np.random.default_rng(seed)
    reg = synthetic_registry()
    ya = rng.uniform(-1.0, 1.0, size=(n, 3))
    yb = np.clip(synthetic_map(ya) + rng.normal(0.0, noise, size=(n, 4)), 0.0, 1.0) if noise else synthetic_map(ya)
    P = rng.normal(0.0, 1.0, size=(feature_dim, 3))
    feats = ya @ P.T + rng.normal(0.0, feature_noise, size=(n, feature_dim))
    ids = [f"item{i:05d}" for i in range(n)]
    la, lb = LabelBatch(SYNTH_A, ya), LabelBatch(SYNTH_B, yb)
    return SyntheticPair(
        reg,
        MappingDataset(la, lb, "synth"),
        ContentDataset("synA", "synth", ids, feats, la, list(ids)),
        ContentDataset("synB", "synth", ids, feats.copy(), lb, list(ids)),
        P,
    )


def write_lexicon(dataset: ContentDataset, path, registry=None, scales=None):
    """Write labels as a lexicon CSV. Without ``scales`` the normalized values
    are written and the format interval serves as the source scale."""
    fmt = (registry or default_registry())[dataset.format_id]
    values = dataset.labels.values
    if scales is not None:
        from .formats import EmotionLabel, denormalize

        values = denormalize(EmotionLabel(fmt.id, values), scales, fmt)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *fmt.variables])
        for sid, row in zip(dataset.ids, values):
            w.writerow([sid, *(repr(float(x)) for x in row)])


def write_feature_file(dataset: ContentDataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *(f"f{i}" for i in range(dataset.width))])
        for sid, row in zip(dataset.ids, dataset.features):
            w.writerow([sid, *(repr(float(x)) for x in row)])


def write_manifest(path, dataset_id, domain, fmt: LabelFormat, data, features=None, embeddings=None,
                   split=(8, 1, 1), scales=None):
    lines = [f"id = {dataset_id}", f"domain = {domain}", f"format = {fmt.id}", f"data = {data}"]
    if features:
        lines.append(f"features = {features}")
    if embeddings:
        lines.append(f"embeddings = {embeddings}")
    lines.append("split = " + ",".join(f"{r:g}" for r in split))
    if fmt.is_regression:
        for v in fmt.variables:
            lo, hi = (scales[v].source_min, scales[v].source_max) if scales else fmt.interval
            lines.append(f"scale.{v} = {lo:g},{hi:g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ model file

MAGIC = b"EMOE"
VERSION = 1
_PROBLEM_CODES = {REGRESSION: 0, SINGLE_LABEL: 1, MULTI_LABEL: 2}


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def u8(self, x):
        self.buf.write(struct.pack("<B", x))

    def u32(self, x):
        self.buf.write(struct.pack("<I", x))

    def f64(self, x):
        self.buf.write(struct.pack("<d", x))

    def str(self, s):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.buf.write(b)

    def matrix(self, a):
        a = np.atleast_2d(a)
        self.u32(a.shape[0])
        self.u32(a.shape[1])
        self.buf.write(np.ascontiguousarray(a, dtype="<f4").tobytes())

    def bytes(self):
        return self.buf.getvalue()


class _Reader:
    def __init__(self, data, base=0):
        self.data = data
        self.pos = 0
        self.base = base

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"truncated model file: wanted {n} bytes", self.base + self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self):
        return struct.unpack("<d", self.take(8))[0]

    def str(self):
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ModelFormatError("invalid UTF-8 string", self.base + self.pos) from None

    def matrix(self):
        rows, cols = self.u32(), self.u32()
        raw = self.take(4 * rows * cols)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(rows, cols)


def _write_ffn(w, net):
    w.u32(len(net.layers))
    for layer in net.layers:
        w.matrix(layer.weight.value)
        w.matrix(layer.bias.value[None, :])


def _read_ffn(r):
    return [(r.matrix(), r.matrix()[0]) for _ in range(r.u32())]


def _load_ffn(net, layers, what):
    if len(layers) != len(net.layers):
        raise ModelFormatError(f"{what}: layer count mismatch")
    for layer, (W, b) in zip(net.layers, layers):
        if W.shape != layer.weight.value.shape or b.shape != layer.bias.value.shape:
            raise ModelFormatError(f"{what}: weight shape mismatch")
        layer.weight.value[...] = W
        layer.bias.value[...] = b


def save_model(path, mapper: MultiWayMapper, encoders=None, meta=None):
    """Write the mapper and content encoders to ``path`` (format ``EMOE`` v1)."""
    encoders = dict(encoders or {})
    reg = mapper.registry
    sections = []

    w = _Writer()
    w.u32(len(reg.formats))
    for f in reg.formats:
        w.str(f.id)
        w.u8(_PROBLEM_CODES[f.problem])
        lo, hi = f.interval if f.interval is not None else (float("nan"), float("nan"))
        w.f64(lo)
        w.f64(hi)
        w.u32(f.size)
        for v in f.variables:
            w.str(v)
    sections.append((b"REGF", w.bytes()))

    w = _Writer()
    ids = reg.ids
    w.u32(len(reg.equivalences))
    for cls in reg.equivalences:
        w.u32(len(cls))
        for fid, var in cls:
            w.u32(ids.index(fid))
            w.u32(reg[fid].index(var))
    sections.append((b"EQCL", w.bytes()))

    w = _Writer()
    w.u32(mapper.d)
    w.u32(len(mapper.hidden))
    for h in mapper.hidden:
        w.u32(h)
    for fid in ids:
        _write_ffn(w, mapper.encoders[fid].net)
        w.matrix(mapper.heads[fid].weight.value)
    sections.append((b"MAPR", w.bytes()))

    w = _Writer()
    w.u32(len(encoders))
    for name in sorted(encoders):
        enc = encoders[name]
        w.str(name)
        w.str(enc.domain)
        w.f64(enc.net.dropout)
        _write_ffn(w, enc.net)
    sections.append((b"CENC", w.bytes()))

    w = _Writer()
    w.str(json.dumps(meta or {}, sort_keys=True))
    sections.append((b"META", w.bytes()))

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for tag, payload in sections:
            fh.write(tag)
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_model(path):
    """Returns ``(mapper, encoders, meta)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise ModelFormatError("bad magic bytes; not an EMOE model file", 0)
    r = _Reader(data)
    r.take(4)
    version = r.u32()
    if version > VERSION or version == 0:
        raise UnsupportedVersionError(f"unsupported model file version {version} (this build reads {VERSION})", 4)
    sections = {}
    while r.pos < len(data):
        start = r.pos
        tag = r.take(4)
        size = r.u64()
        if tag in sections:
            raise ModelFormatError(f"duplicate section {tag!r}", start)
        sections[tag] = _Reader(r.take(size), base=r.pos - size)
    for tag in (b"REGF", b"EQCL", b"MAPR", b"CENC", b"META"):
        if tag not in sections:
            raise ModelFormatError(f"missing section {tag.decode()}", len(data))

    s = sections[b"REGF"]
    formats = []
    codes = {v: k for k, v in _PROBLEM_CODES.items()}
    for _ in range(s.u32()):
        fid = s.str()
        code = s.u8()
        if code not in codes:
            raise ModelFormatError(f"unknown problem code {code}", s.base + s.pos)
        lo, hi = s.f64(), s.f64()
        variables = [s.str() for _ in range(s.u32())]
        problem = codes[code]
        formats.append(LabelFormat(fid, variables, problem, (lo, hi) if problem == REGRESSION else None))
    s = sections[b"EQCL"]
    classes = []
    for _ in range(s.u32()):
        members = []
        for _ in range(s.u32()):
            fi, vi = s.u32(), s.u32()
            try:
                members.append((formats[fi].id, formats[fi].variables[vi]))
            except IndexError:
                raise ModelFormatError("equivalence class index out of range", s.base + s.pos) from None
        classes.append(tuple(members))
    registry = FormatRegistry(tuple(formats), EquivalenceClasses(tuple(classes)))

    s = sections[b"MAPR"]
    d = s.u32()
    hidden = tuple(s.u32() for _ in range(s.u32()))
    mapper = MultiWayMapper(registry, d=d, hidden=hidden)
    for fid in registry.ids:
        _load_ffn(mapper.encoders[fid].net, _read_ffn(s), f"label encoder {fid}")
        W = s.matrix()
        if W.shape != mapper.heads[fid].weight.value.shape:
            raise ModelFormatError(f"head {fid}: weight shape mismatch", s.base + s.pos)
        mapper.heads[fid].weight.value[...] = W

    s = sections[b"CENC"]
    encoders = {}
    for _ in range(s.u32()):
        name, domain, dropout = s.str(), s.str(), s.f64()
        layers = _read_ffn(s)
        widths = [layers[0][0].shape[1]] + [W.shape[0] for W, _ in layers]
        enc = ContentEncoder(domain, widths[0], widths[-1], tuple(widths[1:-1]), dropout, name=name)
        _load_ffn(enc.net, layers, f"content encoder {name}")
        encoders[name] = enc

    meta = json.loads(sections[b"META"].str())
    return mapper, encoders, meta

"""PCA of the emotion space and cosine-similarity retrieval."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .content import encode_content
from .errors import DegenerateVectorError, DimensionError, ValidationError


def jacobi_eigh(A, tol=1e-12, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors as columns,
    sorted by decreasing eigenvalue. Sweeps stop once the off-diagonal
    Frobenius norm drops below ``tol`` (relative to the matrix norm when
    that exceeds 1).
    """
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionError(f"jacobi_eigh needs a square matrix, got {A.shape}")
    if not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ValidationError("jacobi_eigh needs a symmetric matrix")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    threshold = tol * max(1.0, np.linalg.norm(A))
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(A, 1) ** 2))
        if off < threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(diff) + 1e3 * abs(apq) == abs(diff):
                    t = apq / diff  # theta would overflow; tan of the small angle
                else:
                    theta = diff / (2.0 * apq)
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise RuntimeError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    vals = np.diag(A).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], V[:, order]


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray

    @property
    def k(self):
        return self.components.shape[0]


def pca_fit(vectors, k) -> PcaModel:
    X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    n, d = X.shape
    if not 1 <= k <= d:
        raise ValidationError(f"k must be in [1, {d}], got {k}")
    if n < k + 1:
        raise ValidationError(f"pca_fit needs at least {k + 1} vectors, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    vals, vecs = jacobi_eigh(cov)
    comps = vecs[:, :k].T.copy()
    # sign convention: largest-magnitude entry of each component is positive
    flip = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
    comps *= np.where(flip == 0, 1.0, flip)[:, None]
    return PcaModel(mean, comps, np.clip(vals[:k], 0.0, None))


def pca_project(model: PcaModel, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.mean.shape[0]:
        raise DimensionError(f"expected width {model.mean.shape[0]}, got {v.shape[-1]}")
    return (v - model.mean) @ model.components.T


def unit_rows(vectors):
    X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateVectorError("cannot project a zero vector onto the unit sphere")
    return X / norms


def head_row_table(mapper):
    """``(labels, unit-normalized rows)`` for every head row, labels ``FMT:Var``."""
    from .mapper import head_rows

    labels, rows = [], []
    for fid in mapper.registry.ids:
        for var, r in head_rows(mapper, fid):
            labels.append(f"{fid}:{var}")
            rows.append(r)
    return labels, unit_rows(rows)


def write_coordinates(path, labels, coords, kinds=None, delimiter="\t"):
    coords = np.atleast_2d(coords)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        header = ["label"] + (["kind"] if kinds is not None else [])
        w.writerow(header + [f"pc{i + 1}" for i in range(coords.shape[1])])
        for i, (label, row) in enumerate(zip(labels, coords)):
            lead = [label] + ([kinds[i]] if kinds is not None else [])
            w.writerow(lead + [f"{x:.6g}" for x in row])


# ------------------------------------------------------------------ retrieval

@dataclass(frozen=True)
class Hit:
    rank: int
    id: str
    dataset: str
    text: str
    similarity: float


class RetrievalIndex:
    """Exhaustive cosine-similarity index over cached embeddings."""

    def __init__(self, ids, datasets, texts, embeddings):
        self.ids = [str(i) for i in ids]
        self.datasets = [str(d) for d in datasets]
        self.texts = [t if t is not None else "" for t in texts]
        self.embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
        n = len(self.ids)
        if not (len(self.datasets) == len(self.texts) == self.embeddings.shape[0] == n):
            raise DimensionError("index fields have inconsistent lengths")
        keys = list(zip(self.datasets, self.ids))
        if len(set(keys)) != n:
            raise ValidationError("duplicate (dataset, id) entries in index")
        self.norms = np.linalg.norm(self.embeddings, axis=1)

    def __len__(self):
        return len(self.ids)

    @property
    def d(self):
        return self.embeddings.shape[1]

    def similarities(self, query):
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.d,):
            raise DimensionError(f"query width {q.shape} != index width {self.d}")
        qn = np.linalg.norm(q)
        if qn == 0.0:
            raise DegenerateVectorError("zero query vector")
        with np.errstate(invalid="ignore", divide="ignore"):
            sims = (self.embeddings @ q) / (self.norms * qn)
        return np.clip(np.nan_to_num(sims, nan=-1.0), -1.0, 1.0)


def build_index(mapper, encoders, datasets) -> RetrievalIndex:
    """Embed every sample of every dataset with its supervised encoder.

    ``encoders`` maps dataset name (or, failing that, domain) to encoder.
    """
    ids, names, texts, embs = [], [], [], []
    for ds in datasets:
        enc = encoders.get(ds.name) or encoders.get(ds.domain)
        if enc is None:
            raise ValidationError(f"no content encoder for dataset {ds.name} (domain {ds.domain})")
        if enc.d != mapper.d:
            raise DimensionError(f"encoder {enc.name} emits width {enc.d}, mapper d={mapper.d}")
        embs.append(encode_content(enc, ds))
        ids += ds.ids
        names += [ds.name] * len(ds)
        texts += ds.texts if ds.texts else [""] * len(ds)
    if not embs:
        raise ValidationError("cannot build an index over no datasets")
    return RetrievalIndex(ids, names, texts, np.vstack(embs))


def query_top_k(index: RetrievalIndex, query_embedding, k, dataset=None):
    """Top ``k`` entries by cosine similarity; ties go to the smaller id."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    sims = index.similarities(query_embedding)
    cand = np.arange(len(index))
    if dataset is not None:
        cand = cand[np.array(index.datasets) == dataset]
    ids = [index.ids[i] for i in cand]
    # lexsort: last key is primary
    order = cand[np.lexsort((np.array(ids, dtype=str) if ids else np.array([], dtype=str), -sims[cand]))]
    return [Hit(r + 1, index.ids[i], index.datasets[i], index.texts[i], float(sims[i]))
            for r, i in enumerate(order[:k])]

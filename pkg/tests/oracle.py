"""Plain-numpy reference computations, independent of the autodiff engine."""
import numpy as np


def ffn(net, x):
    h = np.asarray(x, dtype=np.float64)
    for k, layer in enumerate(net.layers):
        h = h @ layer.weight.value.T + layer.bias.value
        if k < len(net.layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def criterion(fmt, logits, gold):
    if fmt.is_regression:
        return float(np.mean((logits - gold) ** 2))
    if fmt.problem == "single_label":
        return float(-np.mean(np.sum(gold * log_softmax(logits), axis=-1)))
    p = np.clip(1.0 / (1.0 + np.exp(-logits)), 1e-7, 1 - 1e-7)
    return float(-np.mean(gold * np.log(p) + (1 - gold) * np.log(1 - p)))


def embed(mapper, fid, values):
    return ffn(mapper.encoders[fid].net, np.atleast_2d(values))


def logits(mapper, fid, e):
    return e @ mapper.heads[fid].weight.value.T


def mapping_loss(mapper, y1, y2, a1=1.0, a2=1.0):
    f1, f2 = mapper.format(y1.format_id), mapper.format(y2.format_id)
    e1, e2 = embed(mapper, f1.id, y1.values), embed(mapper, f2.id, y2.values)
    return (a1 * criterion(f1, logits(mapper, f1.id, e2), np.atleast_2d(y1.values))
            + a2 * criterion(f2, logits(mapper, f2.id, e1), np.atleast_2d(y2.values)))


def autoencoder_loss(mapper, y1, y2, a1=1.0, a2=1.0):
    f1, f2 = mapper.format(y1.format_id), mapper.format(y2.format_id)
    e1, e2 = embed(mapper, f1.id, y1.values), embed(mapper, f2.id, y2.values)
    return (a1 * criterion(f1, logits(mapper, f1.id, e1), np.atleast_2d(y1.values))
            + a2 * criterion(f2, logits(mapper, f2.id, e2), np.atleast_2d(y2.values)))


def similarity_loss(mapper, y1, y2):
    e1, e2 = embed(mapper, y1.format_id, y1.values), embed(mapper, y2.format_id, y2.values)
    return float(np.mean((e1 - e2) ** 2))


def parameter_sharing_loss(mapper):
    total = 0.0
    for (fa, va), (fb, vb) in mapper.registry.equivalences.pairs():
        u = mapper.heads[fa].weight.value[mapper.format(fa).index(va)]
        v = mapper.heads[fb].weight.value[mapper.format(fb).index(vb)]
        total += 1.0 - u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
    return total


def brute_force_top_k(embeddings, ids, q, k):
    sims = []
    for i, e in enumerate(embeddings):
        sims.append((-(e @ q) / (np.linalg.norm(e) * np.linalg.norm(q)), ids[i]))
    sims.sort()
    return [(i, -s) for s, i in sims[:k]]

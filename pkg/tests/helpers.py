import numpy as np

from emoembed.formats import LabelBatch


def random_labels(fmt, n, rng):
    if fmt.is_regression:
        lo, hi = fmt.interval
        return LabelBatch(fmt.id, rng.uniform(lo, hi, size=(n, fmt.size)))
    if fmt.problem == "single_label":
        return LabelBatch(fmt.id, np.eye(fmt.size)[rng.integers(fmt.size, size=n)])
    return LabelBatch(fmt.id, rng.integers(0, 2, size=(n, fmt.size)).astype(float))

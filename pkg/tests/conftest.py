import numpy as np
import pytest

from segrel import LabelMap, LogitStack


def random_label_map(rng, h, w, num_classes, ignore_frac=0.0, ignore_id=255):
    data = rng.integers(0, num_classes, size=(h, w)).astype(np.uint8)
    if ignore_frac > 0:
        mask = rng.random((h, w)) < ignore_frac
        data[mask] = ignore_id
    return LabelMap(data, ignore_id=ignore_id)


def calibrated_pixels(rng, n, num_classes, scale=1.0, bias=None):
    """Logits scale*log(p) for random distributions p, labels sampled from p.

    At scale 1 the logits are NLL-optimal at temperature 1; at scale s the
    optimal temperature is s.
    """
    probs = rng.dirichlet(np.ones(num_classes) * 2.0, size=n)
    if bias is not None:
        probs = probs * 0.2 + np.asarray(bias) * 0.8
        probs /= probs.sum(axis=1, keepdims=True)
    labels = np.array([rng.choice(num_classes, p=p) for p in probs], dtype=np.uint8)
    logits = (scale * np.log(probs)).astype(np.float32)
    return (
        LogitStack(logits.reshape(1, n, num_classes)),
        LabelMap(labels.reshape(1, n)),
    )


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)

import time

import numpy as np
import pytest
from hypothesis import settings

from emoembed.content import EncoderTrainConfig, train_content_encoder
from emoembed.dataio import generate_synthetic_pair, split_pair
from emoembed.evaluation import mapping_dataset_from
from emoembed.mapper import MapperTrainConfig, train_mapper

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

MAPPER_STEPS = 3000
ENCODER_EPOCHS = 40

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def record(number, title, passed, detail):
    ACCEPTANCE[number] = (title, passed, detail)
    status = "PASS" if passed is True else "SKIP" if passed is None else "FAIL"
    print(f"\n[criterion {number:>2}] {status}  {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        status = "PASS" if passed is True else "SKIP" if passed is None else "FAIL"
        terminalreporter.write_line(f"{number:>2}. {status:4}  {title}: {detail}")


@pytest.fixture(scope="session")
def synth():
    return generate_synthetic_pair(n=2000, noise=0.05, seed=0)


@pytest.fixture(scope="session")
def synth_splits(synth):
    (a_tr, a_dev, a_te), (b_tr, b_dev, b_te) = split_pair(synth.a, synth.b, (8, 1, 1), seed=0)
    return {"a": (a_tr, a_dev, a_te), "b": (b_tr, b_dev, b_te),
            "map_train": mapping_dataset_from(a_tr, b_tr), "map_test": mapping_dataset_from(a_te, b_te)}


@pytest.fixture(scope="session")
def trained(synth, synth_splits):
    t0 = time.perf_counter()
    mapper = train_mapper([synth_splits["map_train"]], MapperTrainConfig(n_steps=MAPPER_STEPS, seed=0),
                          synth.registry)
    return mapper, time.perf_counter() - t0


@pytest.fixture(scope="session")
def mapper(trained):
    return trained[0]


@pytest.fixture(scope="session")
def encoders(mapper, synth_splits):
    """Encoders for both synthetic datasets in augmented and plain mode."""
    out, t0 = {}, time.perf_counter()
    for mode in ("augmented", "plain"):
        for mine, other in (("a", "b"), ("b", "a")):
            tr, dev, _ = synth_splits[mine]
            cfg = EncoderTrainConfig(n_epochs=ENCODER_EPOCHS, mode=mode, seed=0,
                                     augmentation_formats=(synth_splits[other][0].format_id,))
            out[mode, mine] = train_content_encoder(tr, mapper, cfg, dev=dev)
    out["seconds"] = time.perf_counter() - t0
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

#!/usr/bin/env python3
"""Train the mapper and content encoders on the synthetic pair and print scores."""
import argparse
import logging
import time
from dataclasses import dataclass

from emoembed.content import EncoderTrainConfig
from emoembed.dataio import generate_synthetic_pair
from emoembed.evaluation import SuiteConfig, run_suite
from emoembed.mapper import MapperTrainConfig


@dataclass
class Config:
    n: int = 2000
    noise: float = 0.05
    steps: int = 3000
    epochs: int = 40
    seed: int = 0
    out: str | None = None


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    for name, default in vars(Config()).items():
        p.add_argument(f"--{name}", type=type(default) if default is not None else str, default=default)
    cfg = Config(**vars(p.parse_args(argv)))
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    synth = generate_synthetic_pair(cfg.n, cfg.noise, cfg.seed)
    suite = SuiteConfig(MapperTrainConfig(n_steps=cfg.steps, seed=cfg.seed),
                        EncoderTrainConfig(n_epochs=cfg.epochs, seed=cfg.seed), ("augmented",), cfg.seed)
    t0 = time.perf_counter()
    reports, _, _ = run_suite(None, suite, synth.registry, cfg.out, datasets=[(synth.a, synth.b)])
    for rep in reports:
        print(f"{rep.dataset:<24} {rep.scenario:<11} {rep.metric:<9} {rep.score:.4f}")
    print(f"total {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()

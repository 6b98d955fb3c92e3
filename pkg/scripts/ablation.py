#!/usr/bin/env python3
"""Ablations on the synthetic pair.

* mapper loss terms: drop one of map / auto / sim / para at a time and report
  held-out mapping r, reconstruction MSE and the equivalent-row cosine;
* encoder training modes: augmented vs plain vs multitask.
"""
import argparse
from dataclasses import dataclass

import numpy as np

from emoembed.dataio import generate_synthetic_pair, split_pair
from emoembed.evaluation import SuiteConfig, evaluate_mapping, mapping_dataset_from, run_suite
from emoembed.content import EncoderTrainConfig
from emoembed.mapper import MapperTrainConfig, head_rows, train_mapper, translate


@dataclass
class Config:
    n: int = 2000
    steps: int = 3000
    epochs: int = 40
    seed: int = 0


def row_cosine(mapper):
    (fa, va), (fb, vb) = mapper.registry.equivalences.pairs()[0]
    u, v = dict(head_rows(mapper, fa))[va], dict(head_rows(mapper, fb))[vb]
    return float(u @ v / np.linalg.norm(u) / np.linalg.norm(v))


def loss_terms(cfg, synth):
    (a_tr, _, a_te), (b_tr, _, b_te) = split_pair(synth.a, synth.b, seed=cfg.seed)
    train, test = mapping_dataset_from(a_tr, b_tr), mapping_dataset_from(a_te, b_te)
    print("dropped   r(A->B)  r(B->A)  recon-mse  equiv-cos")
    for drop in (None, "map", "auto", "sim", "para"):
        weights = {drop: 0.0} if drop else {}
        m = train_mapper([train], MapperTrainConfig(n_steps=cfg.steps, seed=cfg.seed, term_weights=weights),
                         synth.registry)
        fwd = evaluate_mapping(m, test, "forward").score
        bwd = evaluate_mapping(m, test, "backward").score
        mse = np.mean([np.mean((translate(m, y, y.format_id).values - y.values) ** 2) for y in (test.y1, test.y2)])
        print(f"{drop or '-':<9} {fwd:7.4f}  {bwd:7.4f}  {mse:9.2e}  {row_cosine(m):9.4f}")


def modes(cfg, synth):
    suite = SuiteConfig(MapperTrainConfig(n_steps=cfg.steps, seed=cfg.seed),
                        EncoderTrainConfig(n_epochs=cfg.epochs, seed=cfg.seed),
                        ("augmented", "plain", "multitask"), cfg.seed)
    reports, _, _ = run_suite(None, suite, synth.registry, datasets=[(synth.a, synth.b)])
    print("mode        scenario    dataset   r")
    for rep in reports:
        if rep.scenario != "mapping":
            print(f"{rep.mode:<11} {rep.scenario:<11} {rep.dataset:<9} {rep.score:.4f}")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    for name, default in vars(Config()).items():
        p.add_argument(f"--{name}", type=type(default), default=default)
    p.add_argument("--only", choices=("terms", "modes"))
    args = vars(p.parse_args(argv))
    only = args.pop("only")
    cfg = Config(**args)
    synth = generate_synthetic_pair(cfg.n, 0.05, cfg.seed)
    if only in (None, "terms"):
        loss_terms(cfg, synth)
    if only in (None, "modes"):
        modes(cfg, synth)


if __name__ == "__main__":
    main()

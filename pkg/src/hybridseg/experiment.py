"""Scaled-down end-to-end run: pre-train, alternate training, DDIM refinement, metrics."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .evalio.synthetic import gen_synthetic
from .losses import LossWeights
from .pipeline import Checkpoint, TrainConfig, evaluate, pretrain_segmentor, train_alternate


@dataclass
class ExperimentConfig:
    n_train: int = 512
    n_test: int = 64
    size: int = 32
    classes: int = 2
    small_object_rate: float = 0.5
    noise_level: float = 0.15
    data_seed: int = 0
    test_seed: int = 1
    sample_seed: int = 0
    # short CPU budget: smaller batch, faster refiner, BCE in place of the focal term
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(batch_size=16, ref_lr=1e-3, weights=LossWeights(gamma=0.0))
    )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentResult:
    metrics: dict[str, float]
    seconds: dict[str, float]
    checkpoint: Checkpoint
    evaluation: object

    @property
    def small_gain(self) -> float:
        """Refined minus prior mean Dice on the small-object subset, in Dice points (x100)."""
        return 100.0 * (self.metrics["refined_small_dice"] - self.metrics["prior_small_dice"])


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentResult:
    tc = cfg.train
    tc.model.size, tc.model.classes = cfg.size, cfg.classes
    train = gen_synthetic(cfg.n_train, cfg.size, cfg.classes, cfg.small_object_rate, cfg.noise_level, cfg.data_seed)
    test = gen_synthetic(cfg.n_test, cfg.size, cfg.classes, cfg.small_object_rate, cfg.noise_level, cfg.test_seed)
    seconds = {}
    t0 = time.perf_counter()
    seg_ckpt = pretrain_segmentor(train, tc, progress=progress)
    seconds["pretrain"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    ckpt = train_alternate(train, seg_ckpt, tc, progress=progress)
    seconds["train"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    ev = evaluate(test, ckpt, sampler=tc.sampler, steps=tc.sampler_steps, seed=cfg.sample_seed,
                  final_draw=tc.final_draw, prior_clamp=tc.prior_clamp)
    seconds["eval"] = time.perf_counter() - t0
    metrics = ev.summary()
    metrics["n_small"] = float(len(ev.prior_small.per_class[0].dice)) if ev.prior_small else 0.0
    metrics["final_pretrain_loss"] = float(np.float32(seg_ckpt.history["pretrain_loss"][-1])) if tc.pretrain_iters else float("nan")
    return ExperimentResult(metrics, seconds, ckpt, ev)

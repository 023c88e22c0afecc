"""Synthetic end-to-end benchmark: generate tiles, train the reduced network, score held-out tiles."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .datapipe import SceneConfig, generate_scene, scene_seed
from .evaluation import Metrics, as_field, evaluate_fields, summarize
from .labels import LabelField, expectation_decode
from .netgraph import forward, reduced_network
from .trainer import Sample, TrainConfig, train

REDUCED_WIDTHS = (8, 12, 16, 24, 16, 12, 12)


def benchmark_scenes() -> SceneConfig:
    return SceneConfig(tile=128, building_count_range=(2, 6), size_range=(12.0, 40.0))


@dataclass
class BenchmarkConfig:
    tiles: int = 100
    held_out: int = 20
    epochs: int = 150
    seed: int = 0
    precision: int = 64
    widths: tuple = REDUCED_WIDTHS
    scene: SceneConfig = field(default_factory=benchmark_scenes)
    min_area: int = 4

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, seed=self.seed, precision=self.precision)


@dataclass
class BenchmarkResult:
    log: list  # EpochRecord per epoch
    rows: list  # (name, Metrics) per held-out tile
    mean: Metrics
    seconds: float

    @property
    def loss_column(self):
        return [r.train_loss for r in self.log]


def make_samples(cfg: BenchmarkConfig):
    out = []
    for i in range(cfg.tiles):
        s = generate_scene(scene_seed(cfg.seed, i), cfg.scene)
        out.append((Sample(s.image, LabelField.from_mask(s.mask).class_index, f"tile_{i:04d}"), s.mask))
    return out


def run_benchmark(cfg: BenchmarkConfig | None = None, log_file=None) -> BenchmarkResult:
    """Train on the first `tiles - held_out` tiles and score the rest at the readout thresholds."""
    cfg = cfg or BenchmarkConfig()
    if not 0 < cfg.held_out < cfg.tiles:
        raise ValueError("held_out must leave at least one training tile")
    t0 = time.perf_counter()
    pairs = make_samples(cfg)
    ntrain = cfg.tiles - cfg.held_out
    spec = reduced_network(cfg.widths)
    result = train(spec, [s for s, _ in pairs[:ntrain]], cfg.train_config(), log_file=log_file)
    rows = []
    for sample, mask in pairs[ntrain:]:
        probs, _ = forward(spec, result.best_params, sample.image)
        field_ = expectation_decode(probs.astype(np.float64), tol=1e-4)
        rows.append((sample.name, evaluate_fields(field_, as_field(mask), cfg.min_area)))
    return BenchmarkResult(result.log, rows, summarize(m for _, m in rows), time.perf_counter() - t0)


def check_thresholds(mean: Metrics) -> dict:
    """Pass/fail for each frozen benchmark threshold."""
    return {
        "precision >= 0.85": mean.precision >= 0.85,
        "recall >= 0.85": mean.recall >= 0.85,
        "TD >= 0.9 * buildings": mean.true_detections >= 0.9 * mean.building_count,
        "FA <= 0.1 * TD": mean.false_alarms <= 0.1 * mean.true_detections,
    }


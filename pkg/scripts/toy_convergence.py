#!/usr/bin/env python3
"""Train the 2-stage toy network on small synthetic tiles and report the loss ratio."""
import argparse

from bldgseg.datapipe import SceneConfig, generate_scene
from bldgseg.labels import LabelField
from bldgseg.netgraph import NetworkSpec, StageSpec
from bldgseg.trainer import Sample, TrainConfig, train

TOY = NetworkSpec((StageSpec(4, 3, 2, True), StageSpec(4, 3, 1, True)))
TOY_SCENES = SceneConfig(tile=64, building_count_range=(6, 10), size_range=(8.0, 20.0))


def toy_run(tiles=20, epochs=200, learning_rate=0.05, seed=0):
    data = []
    for i in range(tiles):
        s = generate_scene(i, TOY_SCENES)
        data.append(Sample(s.image, LabelField.from_mask(s.mask).class_index, str(i)))
    cfg = TrainConfig(epochs=epochs, learning_rate=learning_rate, validation_fraction=0.0, seed=seed)
    return train(TOY, data, cfg).log


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tiles", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--lr", type=float, default=0.05)
    args = ap.parse_args()
    log = toy_run(args.tiles, args.epochs, args.lr)
    first, last = log[0].train_loss, log[-1].train_loss
    print(f"initial_loss={first:.6f} final_loss={last:.6f} ratio={last / first:.4f}")

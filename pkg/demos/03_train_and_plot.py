#!/usr/bin/env python3
"""Train a small model on synthetic four-head data, end to end.

Shows the full loop: dataset -> split -> train with both callbacks ->
evaluation table -> checkpoint round trip -> SVG training curves. Runs in
about a minute on one CPU core.
"""

import csv
from pathlib import Path

from mtfer.data import DatasetSplit
from mtfer.heads import HEAD_ORDER
from mtfer.model import build_model, load_checkpoint, save_checkpoint
from mtfer.plots import training_curves_svg
from mtfer.synthetic import small_trunk_config, synthetic_examples
from mtfer.trainer import (
    EarlyStopConfig,
    PlateauConfig,
    TrainConfig,
    evaluate,
    train,
    write_metrics_csv,
)

out_dir = Path(__file__).resolve().parent / "output"
out_dir.mkdir(exist_ok=True)

examples = synthetic_examples(128, seed=0, noise=0.45)
data = DatasetSplit(examples[:112], examples[112:], seed=0)

model = build_model(small_trunk_config(seed=0, dropout=0.2))
cfg = TrainConfig(
    initial_lr=1e-3,
    max_epochs=40,
    plateau=PlateauConfig(patience=5),
    early_stop=EarlyStopConfig(patience=12),
    seed=0,
)
model, history = train(model, data, cfg, log=print)
print(f"\nstopped: {history.stop_reason}; best epoch {history.best_epoch} "
      f"(val emotion accuracy {history.best_metric:.3f})")

result = evaluate(model, data.validation)
print(f"\n{'head':<10}{'accuracy':>10}{'loss':>10}")
for head in HEAD_ORDER:
    print(f"{head:<10}{result['accuracy'][head]:>10.3f}{result['loss'][head]:>10.3f}")

ckpt = out_dir / "demo_model.ckpt"
save_checkpoint(model, ckpt)
reloaded = load_checkpoint(ckpt)
again = evaluate(reloaded, data.validation)
print(f"\ncheckpoint round trip: accuracy drift = "
      f"{abs(again['accuracy']['emotion'] - result['accuracy']['emotion']):.1e}")

metrics = out_dir / "demo_metrics.csv"
write_metrics_csv(history, metrics)
with open(metrics, newline="") as f:
    rows = list(csv.DictReader(f))
(out_dir / "demo_curves.svg").write_text(training_curves_svg(rows))
print(f"wrote {metrics.name} and demo_curves.svg under {out_dir}")

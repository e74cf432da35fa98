#!/usr/bin/env python3
"""Smoke test for the dnc_py extension module.

Builds nothing itself: run `cargo build -p dnc-py --release` (or debug) first.
The script locates the compiled cdylib, stages it as an importable module,
and drives a small train/evaluate/explain cycle.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def stage_module() -> Path:
    candidates = [
        REPO / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libdnc_py.so", "libdnc_py.dylib", "dnc_py.dll")
    ]
    built = [p for p in candidates if p.exists()]
    if not built:
        sys.exit("no compiled dnc_py library found; run `cargo build -p dnc-py` first")
    newest = max(built, key=lambda p: p.stat().st_mtime)
    stage = Path(tempfile.mkdtemp(prefix="dnc_py_"))
    target = stage / ("dnc_py" + (".so" if newest.suffix != ".dll" else ".pyd"))
    shutil.copy2(newest, target)
    return stage


sys.path.insert(0, str(stage_module()))
import dnc_py  # noqa: E402


def check(condition, message):
    if not condition:
        sys.exit(f"FAILED: {message}")
    print(f"ok: {message}")


# Low-level operations.
v = dnc_py.l2_normalize([3.0, 4.0])
check(v == [0.6, 0.8], "l2_normalize scales the 3-4-5 triangle")
check(
    abs(dnc_py.cosine_distance([1.0, 0.0], [1.0, 1.0]) + 1 / math.sqrt(2)) < 1e-9,
    "cosine_distance matches hand arithmetic",
)
q = dnc_py.sinkhorn_soft_assign([[10.0, 0.0], [0.0, 10.0]], epsilon=0.05, iterations=3)
for j in range(2):
    col = q[0][j] + q[1][j]
    check(abs(col - 1.0) < 1e-9, f"assignment column {j} sums to 1")
check(q[0][0] > q[1][0] and q[1][1] > q[0][1], "diagonal scores win their columns")

# Data and training.
data = dnc_py.gen_synthetic(classes=3, subclusters=3, dim=10, per_cluster=40, sigma=0.08, seed=7)
check(len(data) == 360 and data.num_classes == 3, "synthetic dataset has the right shape")
train_set, test_set = data.split(0.25, seed=1)

model = dnc_py.train(
    train_set,
    epochs=15,
    batch_size=32,
    k=3,
    temperature=10.0,
    learning_rate=0.1,
    hidden_dims=[],
    output_dim=10,
    anchor_after_epoch=12,
    seed=1,
)
check(len(model.loss_curve) == 15, "loss curve covers every epoch")
check(model.loss_curve[-1] < model.loss_curve[0], "loss decreased")
check(model.is_anchored, "final regime anchored the sub-centroids")

metrics = model.evaluate(test_set)
check(metrics.top1 > 0.8, f"test top-1 {metrics.top1:.3f} above sanity bound")
check(not metrics.top5_defined and metrics.top5 == 1.0, "top-5 flagged undefined for 3 classes")

predictions = model.predict(test_set.inputs())
agree = sum(p == label for p, label in zip(predictions, test_set.labels())) / len(test_set)
check(abs(agree - metrics.top1) < 1e-12, "predict agrees with evaluate")

fine = model.knn_induction_eval(train_set, test_set)
check(0.0 <= fine <= 1.0, f"fine 1-NN induction accuracy {fine:.3f}")

predicted, entries, text = model.explain(train_set, query_index=0, top_m=3)
check(len(entries) == 3, "similarity report holds top-m entries")
check(abs(sum(e[3] for e in entries) - 1.0) < 1e-9, "normalized similarities sum to 1")
check(f"predicted_class={predicted}" in text, "report text carries the prediction")

rule = model.rule(predicted)
check(rule.startswith("IF (") and rule.endswith(f"THEN (class {predicted})"), "rule renders")

with tempfile.TemporaryDirectory(prefix="dnc_ckpt_") as tmp:
    path = str(Path(tmp) / "model.ckpt")
    model.save(path)
    restored = dnc_py.Model.load(path)
    again = restored.evaluate(test_set)
    check(again.top1 == metrics.top1, "checkpoint round trip preserves accuracy")

# The softmax baseline trains through the same surface.
baseline = dnc_py.train(
    train_set,
    epochs=15,
    batch_size=32,
    classifier="softmax",
    learning_rate=1.0,
    hidden_dims=[],
    output_dim=10,
    seed=1,
)
check(baseline.classifier_kind == "softmax", "baseline classifier kind")
check(baseline.evaluate(test_set).top1 > 0.5, "baseline beats chance")

print("smoke test passed")

"""Smoke test for the pycilkit extension module.

Build and install first, e.g. `maturin build --release` in crates/python and
`pip install` the wheel, then run `python python/smoke_test.py`.
"""

import math
import tempfile
from pathlib import Path

import pycilkit as ck


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    p = ck.softmax([1.0, 2.0, 3.0], 1.0)
    assert close(sum(p), 1.0) and p[2] > p[1] > p[0]
    assert close(ck.entropy([0.5, 0.5]), math.log(2))
    m = ck.membership_probabilities([0.0, 0.0], [[0.0, 0.0], [2.0, 0.0]])
    assert close(m[0], 1 / (1 + math.exp(-4)), 1e-4)

    loss, grad = ck.cross_entropy([[0.0, 0.0]], [0])
    assert close(loss, math.log(2)) and close(sum(grad[0]), 0.0)
    ce, reg, total, _ = ck.total_loss([[1.0, 0.0, -1.0]], [2], [[0.5, 0.1]], 2)
    assert close(total, ce + reg)

    x, y = ck.synthetic(3, 20, 4, 6.0, seed=1)
    assert len(x) == 60 and set(y) == {0, 1, 2}
    centroids, assign, inertia, history = ck.kmeans(x, 3, seed=0)
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))
    kept = ck.select_exemplars(x, y, 0.3, seed=0)
    assert all(len(v) == 6 for v in kept.values())

    model = ck.IncrementalModel(4, 2, seed=0, hidden=8, feature_dim=6)
    model.expand_head(2, 1)
    assert len(model.logits(x[:5])[0]) == 2

    assert close(ck.average_incremental_accuracy([0.0, 93.65, 86.41, 89.75, 89.10, 86.25, 82.90, 79.30, 78.48]), 85.73, 0.05)

    try:
        ck.StreamConfig(epsilonn=0.1)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown config key accepted")

    cfg = ck.StreamConfig(synth_classes=4, epochs=5, finetune_epochs=2, seed=3)
    run = ck.run(cfg)
    assert len(run.accuracy) == 2 and run.table() == ck.run(cfg).table()
    assert all(n == 24 for n in run.memory().values())
    with tempfile.TemporaryDirectory() as d:
        run.write(d)
        run.save_checkpoint(str(Path(d) / "checkpoint.json"))
        assert (Path(d) / "table.csv").read_text() == run.table()
    print(run.table(), end="")
    print("pycilkit smoke test passed")


if __name__ == "__main__":
    main()

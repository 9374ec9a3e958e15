"""Smoke test for the wslln_py extension module.

Build and install with `maturin develop` (from crates/python), or build with
cargo and put the shared library on PYTHONPATH as wslln_py.so, then run
`python python/smoke_test.py`.
"""

import math
import os
import random
import tempfile

import wslln_py as w


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    assert len(w.generate_spans(5)) == 15
    assert len(w.generate_spans(6)) == 21
    assert close(w.temporal_iou((0.0, 10.0), (5.0, 15.0)), 1 / 3)

    preds = {"a": [(0.0, 10.0)], "b": [(0.0, 4.0)], "c": [(0.0, 6.0)]}
    gts = {q: (0.0, 10.0) for q in preds}
    assert close(w.recall_at_k(preds, gts, 1, 0.5), 200 / 3)
    assert close(w.mean_iou(preds, gts), 2 / 3)

    assert close(w.video_loss((0.5, 0.5), True), math.log(2))
    assert close(w.video_loss((0.2, 0.6), True), -math.log(0.75), 1e-7)
    assert w.pseudo_label([[0.0, 0.1], [0.0, 0.7], [0.0, 0.2]]) == 1
    assert close(w.refine_loss([0.3, 0.1], 0), -math.log(0.75), 1e-7)
    s = [[0.1, 0.2], [0.3, 0.4]]
    assert w.total_loss((0.4, 0.6), False, s) == w.video_loss((0.4, 0.6), False)

    rng = random.Random(0)
    features = [[rng.gauss(0, 1) for _ in range(4)] for _ in range(20)]
    query = [rng.gauss(0, 1) for _ in range(3)]
    model = w.Model(4, 3, d=8, h=6, seed=1)
    assert model.dims == (4, 3, 8, 6)
    out = model.forward(features, query)
    assert len(out["s"]) == 15
    assert all(close(sum(row), 1.0, 1e-12) for row in out["sa"])
    assert all(0.0 <= v <= 1.0 for v in out["vq"])
    ranked = model.rank(features, query)
    assert [r[2] for r in ranked] == sorted((r[2] for r in ranked), reverse=True)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.wslc")
        model.save(path)
        assert w.Model.load(path).forward(features, query) == out

        train, test = w.synthesize(tmp, num_train=20, num_test=5, seed=3)
        trained, logs = w.train(train, epochs=2, d=8, h=8, seed=3)
        assert [l["epoch"] for l in logs] == [0, 1]
        report = trained.evaluate(test)
        assert report["num_queries"] == 5
        assert len(report["recalls"]) == 6

    try:
        w.Model(2, 2, d=2, h=2).forward([[0.0, 0.0]] * 5, [0.0, 0.0], mode="bogus")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown mode accepted")

    print("wslln_py smoke test passed")


if __name__ == "__main__":
    main()

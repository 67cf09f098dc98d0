import hashlib
import time

import numpy as np
import pytest

from maskloc import classifier, synth

BENCH_N = 600


class Bench:
    """Default synthetic benchmark with its trained classifier."""

    def __init__(self, spec, splits, model, train_seconds):
        self.spec = spec
        self.splits = splits
        self.model = model
        self.train_seconds = train_seconds

    @property
    def test(self):
        return self.splits["test"]

    def val_accuracy(self):
        x = np.stack([s.image for s in self.splits["val"]])
        y = np.array([s.label for s in self.splits["val"]])
        p, _ = classifier.predict_batch(self.model, x)
        return float(np.mean((p >= 0.5) == y))


def _trained(request, spec, splits, cfg):
    # training is deterministic, so a cached copy is the same model
    key = hashlib.sha256(repr((spec, BENCH_N, cfg)).encode()).hexdigest()[:16]
    path = request.config.cache.mkdir("maskloc") / f"bench-{key}.cpsd"
    if path.exists():
        return classifier.load_weights(path), 0.0
    t = time.perf_counter()
    model = classifier.train([(s.image, s.label) for s in splits["train"]], cfg)
    elapsed = time.perf_counter() - t
    classifier.save_weights(model, path)
    return classifier.load_weights(path), elapsed


@pytest.fixture(scope="session")
def bench(request):
    spec = synth.SceneSpec()
    splits = synth.generate_dataset(spec, BENCH_N)
    model, secs = _trained(request, spec, splits, classifier.TrainConfig())
    return Bench(spec, splits, model, secs)


@pytest.fixture(scope="session")
def bench_seeds(request, bench):
    """Three classifiers differing only in their training seed."""
    models = [bench.model]
    for seed in (1, 2):
        m, _ = _trained(request, bench.spec, bench.splits, classifier.TrainConfig(seed=seed))
        models.append(m)
    return models


CRITERIA = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line and asserts it."""

    def record(n, ok, detail):
        CRITERIA[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskloc import evalkit
from maskloc.evalkit import average_precision, budget_sample, f1_at_iou, iou, map50

from . import oracles


def test_iou_examples():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iou((0, 0, 10, 10), (20, 20, 5, 5)) == 0.0
    assert iou((0, 0, 10, 10), (10, 0, 10, 10)) == 0.0
    assert iou((0, 0, 10, 10), (5, 0, 10, 10)) == pytest.approx(1 / 3, abs=1e-15)
    with pytest.raises(ValueError):
        iou((0, 0, 0, 10), (0, 0, 1, 1))


@settings(max_examples=300)
@given(*[st.tuples(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 40), st.floats(0.1, 40)) for _ in range(2)])
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0 + 1e-12
    assert v == pytest.approx(iou(b, a), abs=1e-12)
    assert v == pytest.approx(oracles.iou(a, b), abs=1e-12)


def test_ap_examples():
    g = [(0, 0, 10, 10)]
    assert average_precision([(0, 0, 10, 10)], [0.7], g) == 1.0
    assert average_precision([(50, 50, 10, 10), (0, 0, 10, 10)], [0.9, 0.8], g) == pytest.approx(0.5, abs=1e-15)
    assert average_precision([], [], g) == 0.0


def test_map_examples():
    gts = [[(0, 0, 10, 10)], [(5, 5, 10, 10), (30, 30, 10, 10)]]
    perfect = [[(b, 0.9) for b in g] for g in gts]
    assert map50(perfect, gts) == 1.0
    assert map50([[], []], gts) == 0.0
    mixed = [[((0, 0, 10, 10), 0.6), ((40, 0, 10, 10), 0.95)], [((5, 5, 10, 10), 0.8), ((31, 30, 10, 10), 0.3)]]
    # ranked FP .95, TP .8, TP .6, TP .3: precision 0, 1/2, 2/3, 3/4 so the envelope is 3/4 throughout
    assert map50(mixed, gts) == pytest.approx(0.75, abs=1e-15)
    swapped = [[((0, 0, 10, 10), 0.6), ((40, 0, 10, 10), 0.1)], mixed[1]]
    # TP .8, TP .6, TP .3, FP .1
    assert map50(swapped, gts) == 1.0
    assert map50({"a": mixed[0], "b": mixed[1]}, {"a": gts[0], "b": gts[1]}) == map50(mixed, gts)
    with pytest.raises(ValueError):
        map50([[]], gts)
    with pytest.raises(ValueError):
        map50({"a": []}, {"b": []})


def _fixture(rng):
    n_img = int(rng.integers(1, 4))
    dets, gts = [], []
    for _ in range(n_img):
        g = [tuple(rng.uniform(0, 20, 2)) + (8.0, 8.0) for _ in range(rng.integers(0, 3))]
        d = []
        for _ in range(rng.integers(0, 4)):
            if g and rng.random() < 0.6:
                x, y, _, _ = g[rng.integers(len(g))]
                box = (x + rng.normal(0, 2), y + rng.normal(0, 2), 8.0, 8.0)
            else:
                box = tuple(rng.uniform(0, 30, 2)) + (8.0, 8.0)
            d.append((box, float(rng.choice([0.5, 0.7]) if rng.random() < 0.3 else rng.random())))
        dets.append(d)
        gts.append(g)
    return dets, gts


def test_map_matches_exhaustive_oracle_100_fixtures():
    rng = np.random.default_rng(12)
    done = 0
    while done < 100:
        dets, gts = _fixture(rng)
        if sum(map(len, dets)) > 6 or sum(map(len, gts)) > 4:
            continue
        assert abs(map50(dets, gts) - oracles.map_exhaustive(dets, gts)) <= 1e-12
        done += 1


def test_matching_never_double_assigns():
    rng = np.random.default_rng(13)
    for _ in range(200):
        gts = [tuple(rng.uniform(0, 10, 2)) + (8.0, 8.0) for _ in range(rng.integers(0, 4))]
        boxes = [tuple(rng.uniform(0, 10, 2)) + (8.0, 8.0) for _ in range(rng.integers(0, 6))]
        m = evalkit.match_detections(boxes, rng.random(len(boxes)), gts, 0.3)
        assert m.tp.sum() <= len(gts) and m.fn >= 0


def test_ap_monotonicity():
    rng = np.random.default_rng(14)
    for _ in range(200):
        gts = [(float(10 * k), 0.0, 8.0, 8.0) for k in range(4)]
        k = int(rng.integers(0, 4))
        boxes = [tuple(g) for g in gts[:k]] + [(200.0 + 20 * i, 0.0, 8.0, 8.0) for i in range(rng.integers(0, 3))]
        scores = list(rng.uniform(0.1, 0.9, len(boxes)))
        base = average_precision(boxes, scores, gts)
        assert average_precision(boxes + [gts[3]], scores + [1.0], gts) >= base - 1e-15
        assert average_precision(boxes + [(500.0, 0.0, 8.0, 8.0)], scores + [0.0], gts) <= base + 1e-15


def test_eleven_point_flag():
    g = [(0, 0, 10, 10)]
    assert average_precision([(0, 0, 10, 10)], [0.7], g, eleven_point=True) == pytest.approx(1.0)


def test_f1_examples():
    g = [(0, 0, 10, 10), (20, 0, 10, 10)]
    assert f1_at_iou(g, [0.9, 0.8], g) == (1.0, 1.0, 1.0)
    p, r, f = f1_at_iou(g[:1], [0.9], g)
    assert (p, r) == (1.0, 0.5) and f == pytest.approx(2 / 3)
    assert f1_at_iou([], [], g) == (1.0, 0.0, 0.0)


def test_metrics_report_and_pr_csv(tmp_path):
    gts = [[(0, 0, 10, 10)], []]
    dets = [[((0, 0, 10, 10), 0.9)], [((5, 5, 10, 10), 0.4)]]
    rep = evalkit.metrics_report(dets, gts)
    assert rep["mAP50"] == 1.0 and rep["precision"] == 0.5 and rep["recall"] == 1.0
    assert rep["counts"] == {"images": 2, "detections": 2, "ground_truths": 1, "tp": 1, "fp": 1, "fn": 0}
    evalkit.write_pr_csv(tmp_path / "pr.csv", dets, gts)
    assert (tmp_path / "pr.csv").read_text().splitlines() == ["rank,precision,recall", "1,1,1", "2,0.5,1"]


def test_budget_examples():
    items = [(f"i{k}", 1.0) for k in range(5)]
    assert budget_sample(items, 0, 0) == []
    assert sorted(budget_sample(items, 100, 0)) == sorted(i for i, _ in items)
    assert len(budget_sample(items, 2.5, 0)) == 2
    with pytest.raises(ValueError):
        budget_sample([("a", 0.0)], 1, 0)


@settings(max_examples=100)
@given(st.integers(0, 30), st.floats(0, 40), st.integers(0, 2**32 - 1))
def test_budget_property(n, budget, seed):
    items = [(k, 1.0) for k in range(n)]
    got = budget_sample(items, budget, seed)
    assert len(got) == min(n, int(np.floor(budget)))
    assert got == budget_sample(items, budget, np.random.default_rng(seed))
    assert len(set(got)) == len(got)


def test_budget_first_overflow_excluded():
    items = [("a", 2.0), ("b", 5.0), ("c", 1.0)]
    rng = np.random.default_rng(0)
    order = [items[i] for i in rng.permutation(3)]
    total, expect = 0.0, []
    for ident, c in order:
        if total + c > 4.0:
            break
        total += c
        expect.append(ident)
    assert budget_sample(items, 4.0, 0) == expect

import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ugda.evaluation import (
    MetricRow,
    conformity,
    dice,
    evaluate,
    evaluate_arrays,
    metric_table,
    read_metrics,
    render_uncertainty,
    write_metrics,
)
from ugda.synthdata import build_corpus, load_split, read_pgm
from ugda.trainer import DomainData, TrainConfig, pretrain_source
from ugda.uesm import LatentConfig

from oracles import REFERENCE_SCORES


def test_dice_examples():
    a = torch.tensor([[1, 1, 0, 0]])
    assert dice(a, a, 1) == 1.0
    assert dice(a, torch.tensor([[0, 0, 1, 1]]), 1) == 0.0
    assert dice(a, torch.tensor([[0, 1, 1, 0]]), 1) == 0.5
    assert dice(torch.zeros(2, 2), torch.zeros(2, 2), 2) == 1.0
    with pytest.raises(ValueError):
        dice(a, a[:, :3], 1)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_dice_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    p, g = rng.integers(0, 3, (6, 7)), rng.integers(0, 3, (6, 7))
    for c in (1, 2):
        d = dice(p, g, c)
        assert d == dice(g, p, c)
        assert 0.0 <= d <= 1.0


def test_conformity_examples():
    assert conformity(0.97954) == pytest.approx(0.95822, abs=1e-5)
    assert conformity(0.79548) == pytest.approx(0.48580, abs=1e-5)
    assert conformity(2 / 3) == pytest.approx(0.0, abs=1e-15)
    assert conformity(1.0) == 1.0
    assert math.isnan(conformity(0.0))


def test_conformity_strictly_increasing():
    d = np.linspace(1e-3, 1.0, 2001)
    c = np.array([conformity(v) for v in d])
    assert np.all(np.diff(c) > 0)


@pytest.mark.parametrize("method", sorted(REFERENCE_SCORES))
def test_conformity_reproduces_reference_scores(method):
    rd, rc, cd, cc, md, mc = REFERENCE_SCORES[method]
    assert 100 * conformity(rd / 100) == pytest.approx(rc, abs=0.01)
    assert 100 * conformity(cd / 100) == pytest.approx(cc, abs=0.01)
    assert (rd + cd) / 2 == pytest.approx(md, abs=0.001)
    assert (rc + cc) / 2 == pytest.approx(mc, abs=0.001)


def test_mean_row_consistency_example():
    assert (95.822 + 82.203) / 2 == pytest.approx(89.013, abs=0.001)
    rows = metric_table({"retinal": 0.9, "choroidal": 0.8})
    assert [r.name for r in rows] == ["retinal", "choroidal", "mean"]
    assert rows[2].dice == pytest.approx(0.85)
    assert rows[2].conformity == pytest.approx((conformity(0.9) + conformity(0.8)) / 2)


def test_evaluate_arrays_averages_per_image():
    gt = torch.tensor([[[1, 1, 2, 2]], [[1, 1, 2, 2]]])[:, 0]
    pred = torch.tensor([[[1, 1, 2, 2]], [[1, 0, 2, 2]]])[:, 0]
    rows = evaluate_arrays(pred, gt)
    # image 1 is perfect, image 2 has retinal dice 2*1/(1+2)
    assert rows[0].dice == pytest.approx((1 + 2 / 3) / 2)
    assert rows[1].dice == 1.0


def test_ground_truth_against_itself():
    gt = torch.randint(0, 3, (4, 16, 16))
    for row in evaluate_arrays(gt, gt):
        assert row.dice == 1.0 and row.conformity == 1.0


def test_metrics_csv_round_trip(tmp_path):
    rows = metric_table({"retinal": 0.95, "choroidal": 0.5})
    rows.append(MetricRow("broken", 0.0, conformity(0.0)))
    path = tmp_path / "m.csv"
    write_metrics(rows, path)
    text = path.read_text()
    assert text.splitlines()[0] == "class,dice,conformity"
    assert "broken,0.000000,nan" in text
    back = read_metrics(path)
    assert [r.name for r in back] == [r.name for r in rows]
    assert back[0].dice == pytest.approx(0.95)


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return build_corpus(4, 4, root, seed=1)


def test_evaluate_runs_on_corpus(tiny_corpus, tmp_path):
    cfg = TrainConfig(phase1_iters=2, seed=2)
    _, images, labels = load_split(tiny_corpus, "source", "train")
    ck = pretrain_source(DomainData(["a"] * len(images), images, labels), cfg)
    rows = evaluate(tiny_corpus, "train", ck, cfg)
    assert [r.name for r in rows] == ["retinal", "choroidal", "mean"]
    assert all(0 <= r.dice <= 1 for r in rows)
    write_metrics(rows, tmp_path / "a.csv")
    write_metrics(evaluate(tiny_corpus, "train", ck, cfg), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_evaluate_missing_files(tiny_corpus):
    from ugda.synthdata import load_manifest

    victim = tiny_corpus.entries[0]
    path = tiny_corpus.root / victim.image
    data = path.read_bytes()
    path.unlink()
    try:
        with pytest.raises(FileNotFoundError, match=victim.id):
            load_manifest(tiny_corpus.root)
    finally:
        path.write_bytes(data)


@pytest.fixture
def image():
    return torch.rand(1, 1, 64, 64)


def test_render_dimensions_and_sidecar(tmp_path, model, image):
    out = tmp_path / "u.pgm"
    meta = render_uncertainty(image, model, LatentConfig(), out, seed=4)
    arr = read_pgm(out)
    assert arr.shape == (64, 64) and arr.dtype == np.uint8
    side = json.loads(out.with_suffix(".json").read_text())
    assert side == meta
    assert 0 <= side["min"] <= side["mean"] <= side["max"]
    assert arr.max() == 255 and arr.min() == 0


def test_render_sigma_zero_is_black(tmp_path, model, image):
    out = tmp_path / "u.pgm"
    meta = render_uncertainty(image, model, LatentConfig(), out, sigma_scale=0.0)
    assert meta["max"] == 0
    assert read_pgm(out).max() == 0


def test_render_deterministic_bytes(tmp_path, model, image):
    a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
    render_uncertainty(image, model, LatentConfig(), a, seed=8)
    render_uncertainty(image, model, LatentConfig(), b, seed=8)
    assert a.read_bytes() == b.read_bytes()


def test_render_unwritable_path_names_it(model, image, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError) as info:
        render_uncertainty(image, model, LatentConfig(), blocker / "u.pgm")
    assert str(blocker) in str(info.value)

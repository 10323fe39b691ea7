import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ugda.core import argmax_labels
from ugda.selftrain import (
    CurriculumSchedule,
    PseudoSample,
    curriculum_fraction,
    dump_ranking,
    plan_epochs,
    score_target_set,
    select_subset,
)
from ugda.uesm import LatentConfig, mc_infer, split_seeds


def fake(scores):
    return sorted(
        (PseudoSample(f"s{i}", i, torch.zeros(1, 2, 2, dtype=torch.long), s) for i, s in enumerate(scores)),
        key=lambda p: p.score,
    )


def test_sort_oracle_three_images(monkeypatch, model):
    import ugda.selftrain as st_mod
    from ugda.uesm import MCResult

    values = iter([0.3, 0.1, 0.2])

    def stub(x, cfg, model, seed, sigma_scale=1.0):
        u = torch.full((1, 8, 8), next(values))
        m = torch.full((1, 3, 8, 8), 1 / 3)
        return MCResult(m[None], m, u)

    monkeypatch.setattr(st_mod, "mc_infer", stub)
    ranked = score_target_set(["a", "b", "c"], torch.rand(3, 1, 8, 8), model, LatentConfig(), seed=0)
    assert [p.id for p in ranked] == ["b", "c", "a"]
    assert [p.score for p in ranked] == pytest.approx([0.1, 0.2, 0.3])


def test_scores_pair_with_labels_and_are_deterministic(model):
    images = torch.rand(3, 1, 64, 64)
    ids = ["x", "y", "z"]
    cfg = LatentConfig()
    ranked = score_target_set(ids, images, model, cfg, seed=11)
    again = score_target_set(ids, images, model, cfg, seed=11)
    assert [(p.id, p.score) for p in ranked] == [(p.id, p.score) for p in again]
    seeds = split_seeds(11, 3)
    for p in ranked:
        assert p.score >= 0
        res = mc_infer(images[p.index : p.index + 1], cfg, model, seeds[p.index])
        assert p.score == pytest.approx(res.uncertainty.mean().item(), rel=1e-6)
        assert torch.equal(p.pseudo_label, argmax_labels(res.mean))
        assert p.pseudo_label.shape == (1, 64, 64)
    assert all(a.score <= b.score for a, b in zip(ranked, ranked[1:]))


def test_sigma_scale_zero_keeps_input_order(model):
    ids = [f"t{i}" for i in range(4)]
    ranked = score_target_set(ids, torch.rand(4, 1, 64, 64), model, LatentConfig(), seed=0, sigma_scale=0.0)
    assert [p.score for p in ranked] == [0.0] * 4
    assert [p.id for p in ranked] == ids


def test_empty_target_rejected(model):
    with pytest.raises(ValueError):
        score_target_set([], torch.zeros(0, 1, 64, 64), model, LatentConfig(), seed=0)


@pytest.mark.parametrize("reduction", ["max", "p95"])
def test_alternative_reductions(model, reduction):
    ranked = score_target_set(["a", "b"], torch.rand(2, 1, 64, 64), model, LatentConfig(), 1, reduction=reduction)
    assert all(p.score >= 0 for p in ranked)


def test_fraction_examples():
    s = CurriculumSchedule()
    assert curriculum_fraction(0, s, 5) == pytest.approx(0.2)
    assert curriculum_fraction(4, s, 5) == pytest.approx(0.8)
    assert curriculum_fraction(1, s, 4) == pytest.approx(0.4)
    assert curriculum_fraction(0, s, 1) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        curriculum_fraction(5, s, 5)
    with pytest.raises(ValueError):
        curriculum_fraction(-1, s, 5)
    with pytest.raises(ValueError):
        curriculum_fraction(0, s)


@settings(max_examples=50, deadline=None)
@given(
    f0=st.floats(0.01, 1.0),
    span=st.floats(0.0, 1.0),
    total=st.integers(1, 40),
)
def test_fraction_nondecreasing(f0, span, total):
    s = CurriculumSchedule(f0, min(1.0, f0 + span))
    fs = [curriculum_fraction(e, s, total) for e in range(total)]
    assert all(a <= b + 1e-12 for a, b in zip(fs, fs[1:]))
    assert all(0 < f <= 1 for f in fs)


def test_schedule_validation():
    for bad in [(0.0, 0.5), (0.6, 0.5), (0.2, 1.1)]:
        with pytest.raises(ValueError):
            CurriculumSchedule(*bad)


def test_select_examples():
    ranked = fake([0.1 * i for i in range(10)])
    assert select_subset(ranked, 1.0) == ranked
    assert [p.id for p in select_subset(ranked, 0.25)] == ["s0", "s1", "s2"]
    assert len(select_subset(ranked, 0.3)) == 3
    assert len(select_subset(ranked, 0.01)) == 1
    for bad in (0.0, -0.5):
        with pytest.raises(ValueError):
            select_subset(ranked, bad)


@settings(max_examples=60, deadline=None)
@given(
    scores=st.lists(st.floats(0, 1), min_size=1, max_size=30),
    f1=st.floats(0.001, 1.0),
    f2=st.floats(0.001, 1.0),
)
def test_select_monotone_and_sorted(scores, f1, f2):
    ranked = fake(scores)
    lo, hi = sorted((f1, f2))
    a, b = select_subset(ranked, lo), select_subset(ranked, hi)
    assert {p.id for p in a} <= {p.id for p in b}
    assert len(b) == math.ceil(round(hi * len(ranked), 9))
    rest = ranked[len(b) :]
    if rest:
        assert max(p.score for p in b) <= min(p.score for p in rest)


def test_plan_epochs_covers_budget():
    s = CurriculumSchedule()
    e = plan_epochs(160, 2000, s)
    sizes = [len(select_subset(range(160), curriculum_fraction(k, s, e))) for k in range(e)]
    assert sum(sizes) >= 2000
    if e > 1:
        shorter = [len(select_subset(range(160), curriculum_fraction(k, s, e - 1))) for k in range(e - 1)]
        assert sum(shorter) < 2000
    assert plan_epochs(160, 2000, CurriculumSchedule(total_epochs=7)) == 7


def test_dump_ranking(tmp_path):
    ranked = fake([0.5, 0.25, 0.75])
    path = tmp_path / "rank.csv"
    dump_ranking(path, ranked, 2)
    lines = path.read_text().splitlines()
    assert lines[0] == "id,score,selected"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["s1", "s0", "s2"]
    assert [ln.split(",")[2] for ln in lines[1:]] == ["1", "1", "0"]

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ugda.core import (
    DomainTag,
    ImageBatch,
    argmax_labels,
    minmax_normalize,
    one_hot,
    softmax_channelwise,
)


def test_softmax_zero_logits_uniform():
    p = softmax_channelwise(torch.zeros(2, 3, 8, 8))
    assert torch.allclose(p, torch.full_like(p, 1 / 3))


def test_softmax_hand_value():
    logits = torch.tensor([0.0, math.log(3.0)]).view(1, 2, 1, 1)
    p = softmax_channelwise(logits).flatten()
    assert p.tolist() == pytest.approx([0.25, 0.75], abs=1e-7)


def test_softmax_shift_invariant():
    x = torch.randn(1, 4, 8, 8)
    assert torch.allclose(softmax_channelwise(x), softmax_channelwise(x + 5.0), atol=1e-6)


def test_softmax_rejects_nonfinite():
    x = torch.zeros(1, 2, 8, 8)
    x[0, 1, 3, 3] = float("nan")
    with pytest.raises(ValueError, match="non-finite"):
        softmax_channelwise(x)


@settings(max_examples=30, deadline=None)
@given(
    b=st.integers(1, 3),
    c=st.integers(1, 5),
    h=st.integers(1, 9),
    w=st.integers(1, 9),
    scale=st.floats(0.1, 50.0),
    seed=st.integers(0, 10_000),
)
def test_softmax_normalised_and_argmax_preserving(b, c, h, w, scale, seed):
    x = torch.randn(b, c, h, w, generator=torch.Generator().manual_seed(seed)) * scale
    p = softmax_channelwise(x)
    assert p.shape == x.shape
    assert torch.all((p >= 0) & (p <= 1))
    assert torch.allclose(p.sum(dim=1), torch.ones(b, h, w), atol=1e-5)
    assert torch.equal(argmax_labels(p), argmax_labels(x))


def test_one_hot_examples():
    assert one_hot(torch.tensor([[[0]]]), 2).flatten().tolist() == [1.0, 0.0]
    assert one_hot(torch.tensor([[[2]]]), 3).flatten().tolist() == [0.0, 0.0, 1.0]


def test_one_hot_rejects_out_of_range():
    with pytest.raises(ValueError):
        one_hot(torch.tensor([[[3]]]), 3)


@settings(max_examples=30, deadline=None)
@given(c=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_argmax_one_hot_round_trip(c, seed):
    labels = torch.randint(0, c, (2, 7, 5), generator=torch.Generator().manual_seed(seed))
    oh = one_hot(labels, c)
    assert torch.all(oh.sum(dim=1) == 1)
    assert torch.equal(argmax_labels(oh), labels)


def test_argmax_examples_and_ties():
    assert argmax_labels(torch.tensor([0.2, 0.5, 0.3]).view(1, 3, 1, 1)).item() == 1
    assert argmax_labels(torch.tensor([0.5, 0.5]).view(1, 2, 1, 1)).item() == 0


def test_minmax_examples():
    assert torch.equal(minmax_normalize(torch.full((1, 4, 4), 3.0)), torch.zeros(1, 4, 4))
    u = torch.tensor([[[0.0, 5.0, 10.0]]])
    assert minmax_normalize(u).flatten().tolist() == pytest.approx([0.0, 0.05, 0.1])


def test_minmax_is_per_image():
    u = torch.stack([torch.linspace(0, 1, 16).view(4, 4), torch.linspace(0, 100, 16).view(4, 4)])
    out = minmax_normalize(u)
    assert torch.allclose(out[0], out[1])
    assert out.amin(dim=(1, 2)).tolist() == [0.0, 0.0]
    assert out.amax(dim=(1, 2)).tolist() == pytest.approx([0.1, 0.1])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e3))
def test_minmax_range_and_idempotence(seed, scale):
    u = torch.rand(2, 6, 6, generator=torch.Generator().manual_seed(seed), dtype=torch.float64) * scale
    once = minmax_normalize(u)
    assert once.amin(dim=(1, 2)).tolist() == [0.0, 0.0]
    assert once.amax(dim=(1, 2)).numpy() == pytest.approx(np.array([0.1, 0.1]))
    assert torch.allclose(minmax_normalize(once), once, atol=1e-6)
    assert once.shape == u.shape


def test_image_batch_validation():
    ImageBatch(torch.zeros(1, 1, 8, 16), DomainTag.SOURCE)
    assert ImageBatch(torch.zeros(1, 1, 8, 8), "target").domain is DomainTag.TARGET
    with pytest.raises(ValueError):
        ImageBatch(torch.zeros(1, 1, 12, 8), DomainTag.SOURCE)
    with pytest.raises(ValueError):
        ImageBatch(torch.full((1, 1, 8, 8), float("inf")), DomainTag.SOURCE)
    with pytest.raises(ValueError):
        ImageBatch(torch.zeros(1, 8, 8), DomainTag.SOURCE)

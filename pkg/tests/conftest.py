import numpy as np
import pytest
import torch

from ugda.model import ModelConfig, UDAModel
from ugda.synthdata import DOMAIN_STYLES, PhantomSpec, render_sample
from ugda.trainer import DomainData


@pytest.fixture
def model():
    torch.manual_seed(0)
    return UDAModel(ModelConfig())


def zero_parameters(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


def tiny_domain(domain, n, seed=0):
    """``n`` rendered phantoms of one domain, kept in memory."""
    stream = 0 if domain == "source" else 1
    pairs = [render_sample(seed, stream, i, PhantomSpec(), DOMAIN_STYLES[domain]) for i in range(n)]
    images = torch.from_numpy(np.concatenate([p[0] for p in pairs])).float()
    labels = torch.from_numpy(np.concatenate([p[1] for p in pairs])).long()
    return DomainData([f"{domain[:3]}_{i:04d}" for i in range(n)], images, labels)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)

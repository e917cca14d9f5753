import numpy as np
import pytest
import torch

from kcapture import CaptureSpec, LayerCapture, MetricDecl


class TwoLayerHost(torch.nn.Module):
    """Tiny MLP host; hidden1/hidden2 are the capture targets."""

    def __init__(self, in_dim=4, hidden=8, classes=3, seed=0):
        super().__init__()
        torch.manual_seed(seed)
        self.hidden1 = torch.nn.Linear(in_dim, hidden)
        self.act1 = torch.nn.Tanh()
        self.hidden2 = torch.nn.Linear(hidden, hidden)
        self.act2 = torch.nn.Tanh()
        self.head = torch.nn.Linear(hidden, classes)

    def forward(self, x):
        h1 = self.act1(self.hidden1(x))
        h2 = self.act2(self.hidden2(h1))
        return self.head(h2)


@pytest.fixture
def host_model():
    return TwoLayerHost()


@pytest.fixture
def host_batches():
    gen = torch.Generator().manual_seed(7)
    batches = []
    for _ in range(3):
        x = torch.randn(10, 4, generator=gen)
        y = torch.randint(0, 3, (10,), generator=gen)
        batches.append((x, y))
    return batches


@pytest.fixture
def host_spec():
    return CaptureSpec(
        layers=(
            LayerCapture("act1", pooling="flatten", metric=MetricDecl("lp", 2.0)),
            LayerCapture("act2", pooling="flatten", metric=MetricDecl("lp", 2.0)),
        )
    )


def ce_per_example(outputs, targets):
    return torch.nn.functional.cross_entropy(outputs, targets, reduction="none")

import numpy as np
import pytest

from kcont.datamodel import ActivationDataset, LayerBlock, MetricSpec, ModelMeta


def build_dataset(
    n,
    dims=(4,),
    seed=0,
    metrics=None,
    losses=None,
    labels=None,
    meta=None,
):
    """Random but collision-free dataset for estimator tests."""
    rng = np.random.default_rng(seed)
    if metrics is None:
        metrics = [MetricSpec.lp(2.0)] * len(dims)
    blocks = []
    for k, (dim, metric) in enumerate(zip(dims, metrics), start=1):
        vectors = rng.normal(size=(n, dim)).astype(np.float32)
        blocks.append(LayerBlock(index=k, dim=dim, vectors=vectors, metric=metric))
    if losses is None:
        losses = rng.uniform(0.0, 2.0, size=n)
    return ActivationDataset(
        layers=tuple(blocks),
        losses=np.asarray(losses, dtype=np.float32),
        labels=None if labels is None else np.asarray(labels, dtype=np.int64),
        meta=meta or ModelMeta("test-model", "other", 1234, "fixture"),
    )


@pytest.fixture
def worked_dataset():
    """losses {0,1,2} over the 1-d l1 layer {0,1,3}; exact volatility 13/18."""
    block = LayerBlock(
        index=1,
        dim=1,
        vectors=np.array([[0.0], [1.0], [3.0]], dtype=np.float32),
        metric=MetricSpec.lp(1.0),
    )
    return ActivationDataset(
        layers=(block,),
        losses=np.array([0.0, 1.0, 2.0], dtype=np.float32),
        meta=ModelMeta("worked", "other", 1),
    )

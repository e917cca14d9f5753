"""Adapter acceptance: dump interop with the analysis toolkit and
numerical agreement of the penalty with its estimator."""

import numpy as np
import pytest
import torch

import kcont
from kcont.volatility import subset_volatility
from kcapture import CaptureSpec, LayerCapture, MetricDecl, capture, kcreg_penalty
from conftest import TwoLayerHost, ce_per_example


def _report(name, passed, detail=""):
    print(f"[ACCEPTANCE] {name}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip())
    assert passed, f"{name}: {detail}"


def test_interop_capture_to_primary(tmp_path):
    model = TwoLayerHost(seed=3)
    gen = torch.Generator().manual_seed(5)
    batches = [
        (torch.randn(5, 4, generator=gen), torch.randint(0, 3, (5,), generator=gen))
        for _ in range(2)
    ]
    spec = CaptureSpec(layers=(LayerCapture("act1"), LayerCapture("act2")))
    path = capture(model, batches, spec, ce_per_example, tmp_path / "host.kcd",
                   model_id="interop-host")
    ds = kcont.load_dump(path)
    ok = ds.n == 10 and ds.num_layers == 2
    est = kcont.est_k_vol(ds, 1, 6, seed=4)
    cert = None
    import math

    import kcont.certification as cert_mod

    b = cert_mod.max_pairwise_distance(ds, 2)
    cert = kcont.certify(ds, 2, 2.0 * b * math.sqrt(0.5 * math.log(20.0)), 5.0,
                         k_boot=20, seed=1)
    ok = ok and est.value >= 0 and 0.0 <= cert.certified_prob <= 1.0
    _report("interop: capture output accepted by the primary toolkit", ok,
            f"n={ds.n}, L={ds.num_layers}, est={est.value:.4f}")


def test_penalty_agreement_50_cases():
    # identical (batch, indices) fed to the torch penalty and the primary
    # estimator; float32 capture values, float64 comparison path
    worst = 0.0
    for case in range(50):
        rng = np.random.default_rng(case)
        n = int(rng.integers(6, 64))
        dim = int(rng.integers(1, 8))
        m = int(rng.integers(2, min(n, 32) + 1))
        kind = ("lp", "lp", "lp", "cosine", "discrete")[case % 5]
        if kind == "lp":
            param = float(rng.choice([1.0, 2.0, 3.0, np.inf]))
        elif kind == "discrete":
            param = float(rng.uniform(0.5, 5.0))
        else:
            param = 0.0

        vectors = rng.normal(size=(n, dim)).astype(np.float32)
        losses = rng.uniform(0.0, 2.0, n).astype(np.float32)
        indices = [int(i) for i in rng.choice(n, size=m, replace=False)]

        from kcont.datamodel import ActivationDataset, LayerBlock, MetricSpec, ModelMeta

        metric = MetricSpec(kind, param) if kind != "cosine" else MetricSpec.cosine()
        ds = ActivationDataset(
            layers=(LayerBlock(1, dim, vectors, metric),),
            losses=losses,
            meta=ModelMeta("agree"),
        )
        primary_value, included, skipped = subset_volatility(ds, 1, indices)

        decl = MetricDecl(kind, param if kind != "cosine" else 2.0)
        torch_value = kcreg_penalty(
            torch.from_numpy(losses.astype(np.float64)),
            torch.from_numpy(vectors.astype(np.float64)),
            indices,
            decl,
            normalize="mean",
        )
        rel = abs(float(torch_value) - primary_value) / max(abs(primary_value), 1e-30)
        worst = max(worst, rel)
    _report(
        "penalty agreement with the primary estimator (50 cases)",
        worst <= 1e-5,
        f"max rel diff={worst:.2e}",
    )


def test_differentiability_acceptance():
    torch.manual_seed(9)
    acts = torch.randn(10, 4, dtype=torch.float32, requires_grad=True)
    losses = (torch.rand(10, dtype=torch.float32) + 0.05).requires_grad_(True)
    value = kcreg_penalty(losses, acts, list(range(10)))
    value.backward()
    h = 1e-6
    acts64 = acts.detach().to(torch.float64)
    losses64 = losses.detach().to(torch.float64)

    def f(l, a):
        return float(kcreg_penalty(l, a, list(range(10))))

    worst = 0.0
    for i in range(10):
        up = losses64.clone(); up[i] += h
        down = losses64.clone(); down[i] -= h
        fd = (f(up, acts64) - f(down, acts64)) / (2 * h)
        got = float(losses.grad[i])
        worst = max(worst, abs(got - fd) / max(abs(fd), abs(got), 1e-6))
    _report("penalty gradient matches finite differences at float32", worst < 1e-3,
            f"max rel diff={worst:.2e}")

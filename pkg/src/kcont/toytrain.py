"""Small fully-connected trainer with volatility regularization and FGSM.

The network's post-activation layers, each under the Euclidean metric, are
the decomposition whose volatility the penalty controls.  Each training
batch samples one layer through a Beta-distributed depth draw, estimates
that layer's volatility on a subset of the batch, and adds it to the
cross-entropy objective.  Everything is float64 numpy with exact
backpropagation of the full augmented objective, including the flow
through the pairwise distance denominators.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .datamodel import (
    ActivationDataset,
    KcontError,
    LayerBlock,
    MetricSpec,
    ModelMeta,
    NoAdmissiblePairsError,
    ValidationError,
)
from .rng import SplitMix64, derive_seed, gaussians

_ACT_KINDS = ("relu", "tanh", "identity")
_ACT_TAG = {name: i for i, name in enumerate(_ACT_KINDS)}
_WEIGHTS_MAGIC = b"KCW1"

# Stream tags for seed derivation inside train()
_TAG_INIT = 11
_TAG_SHUFFLE = 12
_TAG_BATCH = 13

_BETA_TABLE_SIZE = 4096


@dataclass
class ToyNet:
    """Fully-connected network; weights[l] maps widths[l] -> widths[l+1]."""

    widths: tuple
    activations: tuple
    weights: list
    biases: list

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "ToyNet":
        return ToyNet(
            widths=self.widths,
            activations=self.activations,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def param_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_net(
    widths: Sequence[int], activations: Optional[Sequence[str]] = None, seed: int = 0
) -> ToyNet:
    """He/Xavier-initialized network; hidden layers default to ReLU."""
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise ValidationError("need at least input and output widths")
    if any(w < 1 for w in widths):
        raise ValidationError("all widths must be >= 1")
    n_layers = len(widths) - 1
    if activations is None:
        activations = ["relu"] * (n_layers - 1) + ["identity"]
    activations = tuple(activations)
    if len(activations) != n_layers:
        raise ValidationError(f"need {n_layers} activations, got {len(activations)}")
    for a in activations:
        if a not in _ACT_KINDS:
            raise ValidationError(f"unknown activation {a!r}")

    rng = SplitMix64(derive_seed(seed, _TAG_INIT))
    weights, biases = [], []
    for l in range(n_layers):
        fan_in = widths[l]
        scale = math.sqrt(2.0 / fan_in) if activations[l] == "relu" else math.sqrt(1.0 / fan_in)
        weights.append(gaussians(rng, (fan_in, widths[l + 1])) * scale)
        biases.append(np.zeros(widths[l + 1], dtype=np.float64))
    return ToyNet(widths=widths, activations=activations, weights=weights, biases=biases)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def forward(net: ToyNet, x: np.ndarray) -> tuple[list, np.ndarray]:
    """Returns (per-layer post-activations, logits); logits are the last entry."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != net.widths[0]:
        raise ValidationError(f"input must be (N, {net.widths[0]}), got {a.shape}")
    acts = []
    for w, b, kind in zip(net.weights, net.biases, net.activations):
        a = _act(a @ w + b, kind)
        acts.append(a)
    return acts, acts[-1]


def softmax_cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-example cross-entropy and softmax probabilities (stable)."""
    z = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(z)
    denom = expz.sum(axis=1)
    probs = expz / denom[:, None]
    losses = np.log(denom) - z[np.arange(z.shape[0]), y]
    return losses, probs


@lru_cache(maxsize=32)
def _beta_cdf_table(alpha: float, beta: float) -> tuple:
    edges = np.linspace(0.0, 1.0, _BETA_TABLE_SIZE + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    pdf = mids ** (alpha - 1.0) * (1.0 - mids) ** (beta - 1.0)
    cdf = np.concatenate([[0.0], np.cumsum(pdf)])
    cdf /= cdf[-1]
    return edges, cdf


def beta_inverse_cdf(alpha: float, beta: float, u: float) -> float:
    """Inverse CDF of Beta(alpha, beta) from a 4096-cell tabulation.

    Accurate to the table resolution, which is plenty for selecting a layer
    index, and fully deterministic across platforms.
    """
    if alpha <= 0 or beta <= 0:
        raise ValidationError("Beta shape parameters must be positive")
    if not 0.0 <= u < 1.0:
        raise ValidationError(f"u must be in [0, 1), got {u}")
    edges, cdf = _beta_cdf_table(float(alpha), float(beta))
    pos = int(np.searchsorted(cdf, u, side="right")) - 1
    pos = min(max(pos, 0), _BETA_TABLE_SIZE - 1)
    span = cdf[pos + 1] - cdf[pos]
    frac = 0.0 if span <= 0.0 else (u - cdf[pos]) / span
    return float(edges[pos] + frac * (edges[pos + 1] - edges[pos]))


def select_layer(x: float, n_layers: int) -> int:
    """Depth draw x in [0, 1] -> layer index max(floor(x * n_layers), 1)."""
    return min(max(int(math.floor(x * n_layers)), 1), n_layers)


@dataclass(frozen=True)
class KCRegConfig:
    """Volatility-penalty settings.

    normalize: "pair_count_squared" divides the raw pair sum by m^2 (the
    procedure as printed); "mean" divides by the included-pair count so the
    penalty equals the volatility estimate itself.
    """

    alpha: float = 2.0
    beta: float = 1.0
    lam: float = 1e-2
    m: int = 32
    normalize: str = "pair_count_squared"
    stop_denominator_grad: bool = False
    zero_tol: float = 1e-12

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValidationError("Beta shape parameters must be positive")
        if self.lam < 0:
            raise ValidationError("lambda must be nonnegative")
        if self.m < 2:
            raise ValidationError("m must be >= 2")
        if self.normalize not in ("pair_count_squared", "mean"):
            raise ValidationError(f"unknown normalize mode {self.normalize!r}")


@dataclass(frozen=True)
class KCRegSample:
    layer: int
    sigma: float  # mean over included pairs; NaN if the subset degenerated
    included_pairs: int
    skipped_pairs: int
    depth_draw: float


def kcreg_loss(
    net: ToyNet, x: np.ndarray, y: np.ndarray, cfg: KCRegConfig, seed: int
) -> tuple[float, list, KCRegSample]:
    """Augmented objective, its exact gradients, and the sampled layer info.

    objective = mean cross-entropy + lam * penalty, where the penalty is the
    pairwise loss-ratio sum over an m-subset of the batch at a Beta-sampled
    layer.  Gradients flow through both the loss differences and (unless
    disabled) the distance denominators.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    if n < cfg.m:
        raise ValidationError(f"batch size {n} is smaller than the subset size {cfg.m}")

    rng = SplitMix64(seed)
    depth_draw = beta_inverse_cdf(cfg.alpha, cfg.beta, rng.next_float())
    k = select_layer(depth_draw, net.num_layers)
    subset = rng.sample_without_replacement(n, cfg.m)

    acts, logits = forward(net, x)
    losses, probs = softmax_cross_entropy(logits, y)

    sub = np.asarray(subset, dtype=np.intp)
    a_k = acts[k - 1][sub]
    diff = a_k[:, None, :] - a_k[None, :, :]
    dmat = np.sqrt(np.sum(diff * diff, axis=2))
    admissible = dmat >= cfg.zero_tol
    np.fill_diagonal(admissible, False)
    included = int(admissible.sum())
    skipped = cfg.m * (cfg.m - 1) - included

    ell = losses[sub]
    ldiff = ell[:, None] - ell[None, :]

    if included == 0:
        if cfg.lam > 0:
            raise NoAdmissiblePairsError(
                f"layer {k}: all {skipped} sampled pairs collide; penalty undefined"
            )
        sigma_mean = math.nan
        raw_sum = 0.0
        coef = 0.0
    else:
        safe_d = np.where(admissible, dmat, 1.0)
        ratios = np.where(admissible, np.abs(ldiff) / safe_d, 0.0)
        raw_sum = float(ratios.sum())
        sigma_mean = raw_sum / included
        if cfg.normalize == "pair_count_squared":
            coef = cfg.lam / (cfg.m * cfg.m)
        else:
            coef = cfg.lam / included

    objective = float(losses.mean())
    if cfg.lam > 0 and included > 0:
        objective += coef * raw_sum

    # d(objective)/d(loss_i): 1/N for the mean term, plus the penalty's
    # signed inverse-distance row sums for subset members (sign(0) := 0).
    # The base term uses the same arithmetic as plain_loss so that lam = 0
    # reproduces the plain trainer bit-for-bit.
    d_base = (probs - _one_hot(y, net.widths[-1])) / n
    d_logits = d_base
    grad_ak = None
    if cfg.lam > 0 and included > 0:
        inv_d = np.where(admissible, 1.0 / safe_d, 0.0)
        signs = np.sign(ldiff) * admissible
        extra = np.zeros(n, dtype=np.float64)
        extra[sub] = 2.0 * coef * np.sum(signs * inv_d, axis=1)
        d_logits = d_base + extra[:, None] * (probs - _one_hot(y, net.widths[-1]))
        if not cfg.stop_denominator_grad:
            t = np.where(admissible, np.abs(ldiff) / safe_d**3, 0.0)
            row = t.sum(axis=1)
            grad_ak = -2.0 * coef * (row[:, None] * a_k - t @ a_k)
    grads = _backward(net, x, acts, d_logits, inject_layer=k, inject=grad_ak, subset=sub)
    info = KCRegSample(
        layer=k,
        sigma=sigma_mean,
        included_pairs=included,
        skipped_pairs=skipped,
        depth_draw=depth_draw,
    )
    return objective, grads, info


def _one_hot(y: np.ndarray, classes: int) -> np.ndarray:
    out = np.zeros((y.shape[0], classes), dtype=np.float64)
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def _backward(
    net: ToyNet,
    x: np.ndarray,
    acts: list,
    d_last: np.ndarray,
    inject_layer: int = 0,
    inject: Optional[np.ndarray] = None,
    subset: Optional[np.ndarray] = None,
) -> list:
    """Reverse pass; returns [(dW, db), ...] matching net.weights.

    inject adds an extra gradient to the post-activation of inject_layer
    (rows given by subset), which is how the penalty's distance term
    enters.
    """
    n_layers = net.num_layers
    d_a = d_last.copy()
    if inject is not None and inject_layer == n_layers:
        d_a[subset] += inject
    grads: list = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        a_prev = acts[l - 1] if l > 0 else x
        z = a_prev @ net.weights[l] + net.biases[l]
        d_z = d_a * _act_grad(z, acts[l], net.activations[l])
        grads[l] = (a_prev.T @ d_z, d_z.sum(axis=0))
        if l > 0:
            d_a = d_z @ net.weights[l].T
            if inject is not None and inject_layer == l:
                d_a[subset] += inject
    return grads


def plain_loss(net: ToyNet, x: np.ndarray, y: np.ndarray) -> tuple[float, list]:
    """Mean cross-entropy and its gradients (no penalty)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    acts, logits = forward(net, x)
    losses, probs = softmax_cross_entropy(logits, y)
    d_logits = (probs - _one_hot(y, net.widths[-1])) / x.shape[0]
    return float(losses.mean()), _backward(net, x, acts, d_logits)


def input_gradient(net: ToyNet, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the per-example cross-entropy with respect to each input."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    acts, logits = forward(net, x)
    _, probs = softmax_cross_entropy(logits, y)
    d_a = probs - _one_hot(y, net.widths[-1])
    for l in range(net.num_layers - 1, -1, -1):
        a_prev = acts[l - 1] if l > 0 else x
        z = a_prev @ net.weights[l] + net.biases[l]
        d_z = d_a * _act_grad(z, acts[l], net.activations[l])
        d_a = d_z @ net.weights[l].T
    return d_a


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings; lr is a toy-scale default, the rest are standard."""

    optimizer: str = "adam"
    lr: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    batch_size: int = 32
    weight_decay: float = 1e-9
    lr_schedule: str = "linear"  # "linear" decays to 0 over the run

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.clip_norm <= 0:
            raise ValidationError("lr, batch_size, clip_norm must be positive")
        if self.lr_schedule not in ("linear", "constant"):
            raise ValidationError(f"unknown lr schedule {self.lr_schedule!r}")


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)  # (epoch, loss, accuracy)
    reg_samples: list = field(default_factory=list)  # (epoch, batch, layer, sigma)


def _global_clip(grads: list, max_norm: float) -> list:
    total = 0.0
    for dw, db in grads:
        total += float(np.sum(dw * dw)) + float(np.sum(db * db))
    norm = math.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return [(dw * scale, db * scale) for dw, db in grads]


def train(
    net: ToyNet,
    x: np.ndarray,
    y: np.ndarray,
    opt: TrainConfig,
    reg: Optional[KCRegConfig],
    epochs: int,
    seed: int,
) -> TrainHistory:
    """Minibatch training, in place; deterministic for a given seed.

    With reg None or lam == 0 the run is the plain cross-entropy trainer:
    no layer sampling happens and no penalty arithmetic touches the
    gradients, so both spellings produce bit-identical weights.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    if epochs < 1:
        raise ValidationError("epochs must be >= 1")
    regularize = reg is not None and reg.lam > 0
    if regularize and n < reg.m:
        raise ValidationError(f"training set of {n} is smaller than the subset size {reg.m}")

    history = TrainHistory()
    m_state = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
    v_state = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
    step = 0
    batches_per_epoch = max(1, n // opt.batch_size)
    total_steps = epochs * batches_per_epoch

    for epoch in range(epochs):
        order = list(range(n))
        SplitMix64(derive_seed(seed, _TAG_SHUFFLE, epoch)).shuffle(order)
        for b in range(batches_per_epoch):
            lo = b * opt.batch_size
            hi = n if b == batches_per_epoch - 1 else lo + opt.batch_size
            idx = np.asarray(order[lo:hi], dtype=np.intp)
            xb, yb = x[idx], y[idx]
            if regularize:
                batch_seed = derive_seed(seed, _TAG_BATCH, epoch, b)
                _, grads, info = kcreg_loss(net, xb, yb, reg, batch_seed)
                history.reg_samples.append((epoch, b, info.layer, info.sigma))
            else:
                _, grads = plain_loss(net, xb, yb)

            grads = _global_clip(grads, opt.clip_norm)
            step += 1
            lr = opt.lr
            if opt.lr_schedule == "linear":
                lr = opt.lr * (1.0 - (step - 1) / total_steps)
            for l, (dw, db) in enumerate(grads):
                if opt.weight_decay > 0:
                    dw = dw + opt.weight_decay * net.weights[l]
                if opt.optimizer == "sgd":
                    net.weights[l] -= lr * dw
                    net.biases[l] -= lr * db
                else:
                    mw, mb = m_state[l]
                    vw, vb = v_state[l]
                    mw *= opt.adam_beta1
                    mw += (1 - opt.adam_beta1) * dw
                    mb *= opt.adam_beta1
                    mb += (1 - opt.adam_beta1) * db
                    vw *= opt.adam_beta2
                    vw += (1 - opt.adam_beta2) * dw * dw
                    vb *= opt.adam_beta2
                    vb += (1 - opt.adam_beta2) * db * db
                    bc1 = 1 - opt.adam_beta1**step
                    bc2 = 1 - opt.adam_beta2**step
                    net.weights[l] -= lr * (mw / bc1) / (np.sqrt(vw / bc2) + opt.adam_eps)
                    net.biases[l] -= lr * (mb / bc1) / (np.sqrt(vb / bc2) + opt.adam_eps)

        losses, _ = softmax_cross_entropy(forward(net, x)[1], y)
        acc = float(np.mean(predict(net, x) == y))
        history.epochs.append((epoch, float(losses.mean()), acc))
    return history


def predict(net: ToyNet, x: np.ndarray) -> np.ndarray:
    return np.argmax(forward(net, x)[1], axis=1)


def fgsm(
    net: ToyNet, x: np.ndarray, y: np.ndarray, eps_attack: float, variant: str = "linf"
) -> np.ndarray:
    """One-step sign attack; the l2 variant projects onto the eps ball."""
    if eps_attack < 0:
        raise ValidationError("eps_attack must be nonnegative")
    if variant not in ("linf", "l2"):
        raise ValidationError(f"unknown fgsm variant {variant!r}")
    x = np.asarray(x, dtype=np.float64)
    pert = eps_attack * np.sign(input_gradient(net, x, y))
    if variant == "l2":
        norms = np.sqrt(np.sum(pert * pert, axis=1, keepdims=True))
        scale = np.where(norms > eps_attack, eps_attack / np.where(norms > 0, norms, 1.0), 1.0)
        pert = pert * scale
    return x + pert


@dataclass(frozen=True)
class RobustnessPoint:
    eps: float
    success_rate: float


def evaluate_robustness(
    net: ToyNet,
    x: np.ndarray,
    y: np.ndarray,
    eps_grid: Sequence[float],
    variant: str = "linf",
) -> list[RobustnessPoint]:
    """Attack success rate over correctly classified examples per budget.

    For the l2-projected variant the attacker's reachable set grows with
    the budget, so success accumulates over the grid and the curve is
    nondecreasing by construction; the raw linf curve is reported as-is.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    correct = predict(net, x) == y
    if not correct.any():
        raise ValidationError("no correctly classified examples to attack")
    xc, yc = x[correct], y[correct]
    flipped_any = np.zeros(xc.shape[0], dtype=bool)
    out = []
    for eps in sorted(float(e) for e in eps_grid):
        adv = fgsm(net, xc, yc, eps, variant)
        flips = predict(net, adv) != yc
        if variant == "l2":
            flipped_any |= flips
            rate = float(flipped_any.mean())
        else:
            rate = float(flips.mean())
        out.append(RobustnessPoint(eps=eps, success_rate=rate))
    return out


@dataclass(frozen=True)
class LipschitzReport:
    """Empirical two-sided diagnostics; no inequality is asserted.

    Ratios are over admissible pairs only (nonzero denominators):
    output distance / input distance, layer distance / input distance,
    and loss difference / layer distance.
    """

    layer: int
    pairs: int
    output_over_input_max: float
    output_over_input_mean: float
    layer_over_input_max: float
    layer_over_input_mean: float
    loss_over_layer_max: float
    loss_over_layer_mean: float


def empirical_lipschitz_ratios(
    net: ToyNet, x: np.ndarray, y: np.ndarray, layer: int, zero_tol: float = 1e-12
) -> LipschitzReport:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if not 1 <= layer <= net.num_layers:
        raise ValidationError(f"layer {layer} out of range 1..{net.num_layers}")
    acts, logits = forward(net, x)
    losses, _ = softmax_cross_entropy(logits, y)

    def pdist(a: np.ndarray) -> np.ndarray:
        d = a[:, None, :] - a[None, :, :]
        return np.sqrt(np.sum(d * d, axis=2))

    d_in = pdist(x)
    d_out = pdist(logits)
    d_k = pdist(acts[layer - 1])
    ldiff = np.abs(losses[:, None] - losses[None, :])

    iu = np.triu_indices(x.shape[0], k=1)
    in_ok = d_in[iu] >= zero_tol
    k_ok = d_k[iu] >= zero_tol

    def stats(num, den, ok):
        r = num[iu][ok] / den[iu][ok]
        if r.size == 0:
            return math.nan, math.nan
        return float(r.max()), float(r.mean())

    oi_max, oi_mean = stats(d_out, d_in, in_ok)
    ki_max, ki_mean = stats(d_k, d_in, in_ok)
    lk_max, lk_mean = stats(ldiff, d_k, k_ok)
    return LipschitzReport(
        layer=layer,
        pairs=int(in_ok.sum()),
        output_over_input_max=oi_max,
        output_over_input_mean=oi_mean,
        layer_over_input_max=ki_max,
        layer_over_input_mean=ki_mean,
        loss_over_layer_max=lk_max,
        loss_over_layer_mean=lk_mean,
    )


# ---------------------------------------------------------------------------
# Built-in datasets
# ---------------------------------------------------------------------------

def two_moons(n: int, noise: float = 0.25, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Interleaved half-circles with Gaussian noise; labels 0/1."""
    if n < 2:
        raise ValidationError("need n >= 2")
    n_up = n // 2
    n_dn = n - n_up
    t_up = np.linspace(0.0, math.pi, n_up)
    t_dn = np.linspace(0.0, math.pi, n_dn)
    xs = np.concatenate([np.cos(t_up), 1.0 - np.cos(t_dn)])
    ys = np.concatenate([np.sin(t_up), 0.5 - np.sin(t_dn)])
    pts = np.stack([xs, ys], axis=1)
    labels = np.concatenate([np.zeros(n_up, dtype=np.int64), np.ones(n_dn, dtype=np.int64)])
    rng = SplitMix64(derive_seed(seed, 21))
    pts += noise * gaussians(rng, pts.shape)
    return pts, labels


def gaussian_blobs(
    n: int,
    centers: Sequence[Sequence[float]] = ((-2.0, 0.0), (2.0, 0.0)),
    std: float = 1.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian clusters, one class per center."""
    if n < len(centers):
        raise ValidationError("need at least one point per center")
    centers_arr = np.asarray(centers, dtype=np.float64)
    c = centers_arr.shape[0]
    counts = [n // c + (1 if i < n % c else 0) for i in range(c)]
    rng = SplitMix64(derive_seed(seed, 22))
    xs, labels = [], []
    for i, cnt in enumerate(counts):
        xs.append(centers_arr[i] + std * gaussians(rng, (cnt, centers_arr.shape[1])))
        labels.append(np.full(cnt, i, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(labels)


def export_activations(
    net: ToyNet,
    x: np.ndarray,
    y: np.ndarray,
    loss_kind: str = "ce",
    model_id: str = "toynet",
) -> ActivationDataset:
    """Trace the network into an ActivationDataset (Euclidean metrics).

    loss_kind "ce" stores per-example cross-entropy; "zero_one" stores the
    misclassification indicator, the loss the certification procedure
    reasons about.
    """
    if loss_kind not in ("ce", "zero_one"):
        raise ValidationError(f"unknown loss kind {loss_kind!r}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    acts, logits = forward(net, x)
    if loss_kind == "ce":
        losses, _ = softmax_cross_entropy(logits, y)
    else:
        losses = (np.argmax(logits, axis=1) != y).astype(np.float64)
    blocks = tuple(
        LayerBlock(
            index=k,
            dim=acts[k - 1].shape[1],
            vectors=acts[k - 1].astype(np.float32),
            metric=MetricSpec.lp(2.0),
        )
        for k in range(1, net.num_layers + 1)
    )
    widths_str = "-".join(str(w) for w in net.widths)
    meta = ModelMeta(
        model_id=model_id,
        family="other",
        param_count=net.param_count(),
        notes=f"widths={widths_str} activations={','.join(net.activations)} loss={loss_kind}",
    )
    return ActivationDataset(
        layers=blocks, losses=losses.astype(np.float32), labels=y, meta=meta
    )


def save_weights(net: ToyNet, path: Union[str, Path]) -> None:
    """Version-tagged little-endian weight file."""
    parts = [_WEIGHTS_MAGIC, struct.pack("<II", 1, net.num_layers)]
    parts.append(struct.pack(f"<{len(net.widths)}I", *net.widths))
    parts.append(bytes(_ACT_TAG[a] for a in net.activations))
    for w, b in zip(net.weights, net.biases):
        parts.append(w.astype("<f8").tobytes())
        parts.append(b.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path: Union[str, Path]) -> ToyNet:
    data = Path(path).read_bytes()
    if data[:4] != _WEIGHTS_MAGIC:
        raise KcontError("not a toy-net weights file")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != 1:
        raise KcontError(f"unsupported weights version {version}")
    pos = 12
    widths = struct.unpack_from(f"<{n_layers + 1}I", data, pos)
    pos += 4 * (n_layers + 1)
    acts = tuple(_ACT_KINDS[t] for t in data[pos : pos + n_layers])
    pos += n_layers
    weights, biases = [], []
    for l in range(n_layers):
        wn = widths[l] * widths[l + 1]
        w = np.frombuffer(data, dtype="<f8", count=wn, offset=pos).reshape(widths[l], widths[l + 1])
        pos += 8 * wn
        b = np.frombuffer(data, dtype="<f8", count=widths[l + 1], offset=pos)
        pos += 8 * widths[l + 1]
        weights.append(w.copy())
        biases.append(b.copy())
    if pos != len(data):
        raise KcontError("weights file has trailing bytes")
    return ToyNet(widths=tuple(widths), activations=acts, weights=weights, biases=biases)

"""Command-line surface: reproducible pipelines over activation dumps.

Every command takes flags, an optional key=value config file (flags
override the file), and a single --seed from which all randomness is
derived through documented SplitMix64 streams.  Outputs are CSV with
fixed column orders and are byte-identical across runs and across
KC_THREADS settings.

Exit codes: 0 success, 1 validation error (bad flags, malformed inputs),
2 runtime or numerical error.  Failures emit one machine-readable line on
stderr of the form:  KCONT-ERROR code=<kind> message="...".
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis, certification, metrics, toytrain, volatility
from .datamodel import (
    ActivationDataset,
    DimensionMismatchError,
    DumpError,
    KcontError,
    ValidationError,
    load_dump,
    write_dump,
)
from .rng import derive_seed

# Seed-stream tags (command level); modules derive their own sub-streams.
_TAG_TRAIN_DATA = 1
_TAG_TEST_DATA = 2
_TAG_NET_INIT = 3
_TAG_TRAIN = 4


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    if value is None:
        return ""
    return str(value)


def _write_csv(path: Optional[str], header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    text = buf.getvalue()
    if path:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text


def _parse_grid(raw: str) -> list[float]:
    try:
        values = [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated float list: {raw!r}") from None
    if not values:
        raise UsageError("grid must contain at least one value")
    return values


def _load_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"config line {lineno} is not key=value: {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    """Fill in settings from --config for flags not given on the line."""
    if not getattr(args, "config", None):
        return
    conf = _load_config(args.config)
    for action in parser._actions:
        dest = action.dest
        if dest in ("help", "config") or dest not in conf:
            continue
        raw = conf.pop(dest)
        if getattr(args, dest, None) is not None:
            continue  # command line wins
        if action.type is not None:
            try:
                value = action.type(raw)
            except (TypeError, ValueError):
                raise UsageError(f"config key {dest}: cannot parse {raw!r}") from None
        elif isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes")
        else:
            value = raw
        setattr(args, dest, value)
    if conf:
        raise UsageError(f"config keys not recognized by this command: {sorted(conf)}")


def _resolve_defaults(args: argparse.Namespace) -> None:
    for key, value in args.defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    for key in args.required:
        if getattr(args, key, None) is None:
            raise UsageError(f"--{key.replace('_', '-')} is required (flag or config)")


def _load(path: str) -> ActivationDataset:
    return load_dump(path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_estimate(args) -> int:
    dataset = _load(args.dump)
    if args.layer is None or args.layer == "all":
        layers = list(range(1, dataset.num_layers + 1))
    else:
        try:
            layers = [int(tok) for tok in str(args.layer).split(",")]
        except ValueError:
            raise UsageError(f"--layer must be integers or 'all', got {args.layer!r}") from None
    estimates = []
    for k in layers:
        if not 1 <= k <= dataset.num_layers:
            raise UsageError(
                f"layer {k} out of range; valid range is 1..{dataset.num_layers}"
            )
        if args.exact or args.m is None:
            estimates.append(volatility.expected_volatility_exact(dataset, k))
        else:
            estimates.append(volatility.est_k_vol(dataset, k, args.m, args.seed))
    header = ["layer", "value", "mode", "M", "seed", "included_pairs", "skipped_pairs"]
    rows = [
        (e.layer, e.value, e.mode, e.m, e.seed, e.included_pairs, e.skipped_pairs)
        for e in estimates
    ]
    sys.stdout.write(_write_csv(args.out, header, rows))
    return 0


def cmd_profile(args) -> int:
    dataset = _load(args.dump)
    m = None if args.exact else args.m
    profile = volatility.layer_profile(dataset, m, args.seed)
    header = [
        "layer", "relative_depth", "epsilon", "mode", "M", "seed",
        "included_pairs", "skipped_pairs",
    ]
    rows = [
        (
            e.layer, e.relative_depth, e.estimate.value, e.estimate.mode,
            e.estimate.m, e.estimate.seed, e.estimate.included_pairs,
            e.estimate.skipped_pairs,
        )
        for e in profile.entries
    ]
    sys.stdout.write(_write_csv(args.out, header, rows))
    return 0


_CERT_HEADER = [
    "layer", "delta", "eta", "confidence", "k_boot", "seed", "B_hat",
    "eps_upper", "certified_prob", "vacuous",
]


def _cert_row(c: certification.Certificate):
    return (
        c.layer, c.delta, c.eta, c.confidence, c.k_boot, c.seed, c.b_hat,
        c.eps_upper, c.certified_prob, c.vacuous,
    )


def cmd_certify(args) -> int:
    dataset = _load(args.dump)
    if not 1 <= args.layer <= dataset.num_layers:
        raise UsageError(f"layer {args.layer} out of range; valid range is 1..{dataset.num_layers}")
    deltas = _parse_grid(args.delta_grid)
    etas = _parse_grid(args.eta_grid)
    certs = certification.certify_grid(
        dataset, args.layer, deltas, etas,
        confidence=args.confidence, k_boot=args.k_boot, seed=args.seed,
    )
    sys.stdout.write(_write_csv(args.out, _CERT_HEADER, [_cert_row(c) for c in certs]))
    return 0


def cmd_regress(args) -> int:
    path = Path(args.features)
    if not path.exists():
        raise UsageError(f"features file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UsageError("features file is empty") from None
        data_rows = [row for row in reader if row]
    if args.target not in header:
        raise UsageError(f"target column {args.target!r} not found; columns are {header}")
    t_idx = header.index(args.target)
    feature_names = [h for i, h in enumerate(header) if i != t_idx]
    if not feature_names:
        raise UsageError("no feature columns besides the target")
    try:
        matrix = np.asarray([[float(v) for v in row] for row in data_rows], dtype=np.float64)
    except ValueError as e:
        raise UsageError(f"non-numeric cell in features file: {e}") from None
    if matrix.ndim != 2 or matrix.shape[1] != len(header):
        raise UsageError("ragged features file")
    y = matrix[:, t_idx]
    x = np.delete(matrix, t_idx, axis=1)

    report = analysis.regression_report(
        x, y, alpha=args.alpha, n_perm=args.n_perm, seed=args.seed,
        feature_names=feature_names,
    )
    header_out = ["feature", "coefficient", "permutation_delta_r2"]
    rows = list(zip(report.feature_names, report.coefficients, report.permutation_delta_r2))
    rows.append(("__intercept__", report.intercept, ""))
    rows.append(("__r2__", report.r2, ""))
    sys.stdout.write(_write_csv(args.out, header_out, rows))
    sys.stdout.write(
        f"r2={_fmt(report.r2)} alpha={_fmt(args.alpha)} n_permutations={report.n_permutations} "
        f"seed={report.seed}\n"
    )
    return 0


def cmd_export_distances(args) -> int:
    dataset = _load(args.dump)
    if not 1 <= args.layer <= dataset.num_layers:
        raise UsageError(f"layer {args.layer} out of range; valid range is 1..{dataset.num_layers}")
    dm = metrics.pairwise(dataset.layer(args.layer))
    header = [""] + [str(j) for j in range(dm.n)]
    rows = [[str(i)] + [_fmt(float(v)) for v in dm.entries[i]] for i in range(dm.n)]
    sys.stdout.write(_write_csv(args.out, header, rows))
    return 0


def _demo_widths(raw: str) -> tuple:
    try:
        widths = tuple(int(tok) for tok in raw.split("-"))
    except ValueError:
        raise UsageError(f"--widths must look like 2-32-32-2, got {raw!r}") from None
    if len(widths) < 2:
        raise UsageError("--widths needs at least input and output sizes")
    return widths


def _demo_one_net(tag, net, args, x_train, y_train, x_test, y_test, reg_cfg, outdir):
    opt = toytrain.TrainConfig(lr=args.lr, batch_size=args.batch_size)
    history = toytrain.train(
        net, x_train, y_train, opt, reg_cfg, args.epochs, derive_seed(args.seed, _TAG_TRAIN)
    )
    toytrain.save_weights(net, outdir / f"weights_{tag}.kcw")
    _write_csv(
        str(outdir / f"history_{tag}.csv"),
        ["epoch", "loss", "accuracy"],
        history.epochs,
    )
    if history.reg_samples:
        _write_csv(
            str(outdir / f"regsamples_{tag}.csv"),
            ["epoch", "batch", "layer", "sigma"],
            history.reg_samples,
        )

    dataset = toytrain.export_activations(net, x_test, y_test, loss_kind="ce", model_id=f"toynet-{tag}")
    write_dump(
        dataset,
        outdir / f"test_activations_{tag}.kcd",
        manifest={
            "source_model": f"toynet-{tag}",
            "loss_function": "softmax_cross_entropy",
            "generator": "kcont train-demo",
        },
    )

    profile = volatility.layer_profile(dataset, None, args.seed)
    _write_csv(
        str(outdir / f"profile_{tag}.csv"),
        ["layer", "relative_depth", "epsilon", "mode", "M", "seed", "included_pairs", "skipped_pairs"],
        [
            (
                e.layer, e.relative_depth, e.estimate.value, e.estimate.mode,
                e.estimate.m, e.estimate.seed, e.estimate.included_pairs,
                e.estimate.skipped_pairs,
            )
            for e in profile.entries
        ],
    )

    curve = toytrain.evaluate_robustness(
        net, x_test, y_test, _parse_grid(args.eps_grid), variant=args.fgsm_variant
    )
    _write_csv(
        str(outdir / f"robustness_{tag}.csv"),
        ["eps", "success_rate"],
        [(p.eps, p.success_rate) for p in curve],
    )

    cert_ds = (
        dataset
        if args.cert_loss == "ce"
        else toytrain.export_activations(net, x_test, y_test, loss_kind="zero_one", model_id=f"toynet-{tag}")
    )
    layer_j = args.cert_layer or max(1, (net.num_layers + 1) // 2)
    b_hat = certification.max_pairwise_distance(cert_ds, layer_j)
    n = cert_ds.n
    threshold = b_hat * math.sqrt(0.5 * math.log(2.0 * n))
    if args.delta_grid:
        deltas = _parse_grid(args.delta_grid)
    else:
        deltas = [round(c * threshold, 12) for c in (0.9, 1.2, 1.6, 2.0)]
    etas = _parse_grid(args.eta_grid) if args.eta_grid else [0.25, 0.5, 1.0]
    certs = certification.certify_grid(
        cert_ds, layer_j, deltas, etas,
        confidence=args.confidence, k_boot=args.k_boot, seed=args.seed,
    )
    _write_csv(str(outdir / f"certificates_{tag}.csv"), _CERT_HEADER, [_cert_row(c) for c in certs])

    middle = max(1, (net.num_layers + 1) // 2)
    mid_eps = profile.entries[middle - 1].estimate.value
    final_acc = history.epochs[-1][2]
    return mid_eps, final_acc


def cmd_train_demo(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    widths = _demo_widths(args.widths)

    x_train, y_train = toytrain.two_moons(
        args.train_n, args.noise, derive_seed(args.seed, _TAG_TRAIN_DATA)
    )
    x_test, y_test = toytrain.two_moons(
        args.test_n, args.noise, derive_seed(args.seed, _TAG_TEST_DATA)
    )
    base = toytrain.init_net(widths, seed=derive_seed(args.seed, _TAG_NET_INIT))

    reg_cfg = toytrain.KCRegConfig(
        alpha=args.alpha, beta=args.beta, lam=getattr(args, "lambda"), m=args.m
    )

    control = base.copy()
    mid_c, acc_c = _demo_one_net(
        "control", control, args, x_train, y_train, x_test, y_test, None, outdir
    )
    lines = [f"control: middle_layer_volatility={_fmt(mid_c)} accuracy={_fmt(acc_c)}"]
    if not args.control_only:
        reg_net = base.copy()
        mid_r, acc_r = _demo_one_net(
            "regularized", reg_net, args, x_train, y_train, x_test, y_test, reg_cfg, outdir
        )
        lines.append(
            f"regularized: middle_layer_volatility={_fmt(mid_r)} accuracy={_fmt(acc_r)}"
        )
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; explicit flags override it")
    p.add_argument("--seed", type=int, help="top-level seed (default 0)")


def build_parser() -> _Parser:
    root = _Parser(
        prog="kcont",
        description=(
            "Measure, certify, and regularize the loss volatility of learned "
            "representations.  Reads KCD1 activation dumps; all outputs are "
            "deterministic CSV.  KC_THREADS caps worker threads without "
            "changing any result."
        ),
    )
    sub = root.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="volatility estimates for chosen layers")
    _add_common(p)
    p.add_argument("--dump", help="KCD1 activation dump")
    p.add_argument("--layer", help="layer index, comma list, or 'all' (default all)")
    p.add_argument("--m", dest="m", type=int, help="Monte-Carlo subset size; omit for exact")
    p.add_argument("--exact", action="store_true", default=None, help="force the exact oracle")
    p.add_argument("--out", help="CSV output path (also printed)")
    p.set_defaults(
        func=cmd_estimate, subparser=p, required=["dump"],
        defaults={"seed": 0, "exact": False},
    )

    p = sub.add_parser("profile", help="per-layer volatility profile")
    _add_common(p)
    p.add_argument("--dump")
    p.add_argument("--m", dest="m", type=int, help="Monte-Carlo subset size")
    p.add_argument("--exact", action="store_true", default=None)
    p.add_argument("--out")
    p.set_defaults(
        func=cmd_profile, subparser=p, required=["dump"],
        defaults={"seed": 0, "exact": False},
    )

    p = sub.add_parser("certify", help="certificate table over a delta x eta grid")
    _add_common(p)
    p.add_argument("--dump")
    p.add_argument("--layer", type=int)
    p.add_argument("--delta-grid", help="comma-separated radii")
    p.add_argument("--eta-grid", help="comma-separated loss thresholds")
    p.add_argument("--confidence", type=float, help="bootstrap confidence (default 0.95)")
    p.add_argument("--k-boot", type=int, help="bootstrap resamples (default 100)")
    p.add_argument("--out")
    p.set_defaults(
        func=cmd_certify, subparser=p,
        required=["dump", "layer", "delta_grid", "eta_grid"],
        defaults={"seed": 0, "confidence": 0.95, "k_boot": 100},
    )

    p = sub.add_parser("regress", help="ridge regression + permutation importance")
    _add_common(p)
    p.add_argument("--features", help="CSV with a header row")
    p.add_argument("--target", help="target column name (default 'target')")
    p.add_argument("--alpha", type=float, help="ridge penalty (default 1.0)")
    p.add_argument("--n-perm", type=int, help="permutations per feature (default 100)")
    p.add_argument("--out")
    p.set_defaults(
        func=cmd_regress, subparser=p, required=["features"],
        defaults={"seed": 0, "target": "target", "alpha": 1.0, "n_perm": 100},
    )

    p = sub.add_parser("export-distances", help="distance matrix CSV for one layer")
    _add_common(p)
    p.add_argument("--dump")
    p.add_argument("--layer", type=int)
    p.add_argument("--out")
    p.set_defaults(
        func=cmd_export_distances, subparser=p, required=["dump", "layer"],
        defaults={"seed": 0},
    )

    p = sub.add_parser(
        "train-demo",
        help="two-moons demo: control vs volatility-regularized training",
        description=(
            "Trains a control net and a regularized net from the same "
            "initialization and data, then emits weights, test activations, "
            "volatility profiles, FGSM curves, and certificate tables for "
            "both.  Optimizer defaults are Adam(0.9, 0.999, 1e-8), gradient "
            "clipping at norm 1.0, batch size 32, linear LR decay; the "
            "default learning rate 1e-2 is a toy-scale choice."
        ),
    )
    _add_common(p)
    p.add_argument("--outdir")
    p.add_argument("--widths", help="layer widths like 2-32-32-2")
    p.add_argument("--train-n", type=int, help="training points (default 500)")
    p.add_argument("--test-n", type=int, help="test points (default 250)")
    p.add_argument("--noise", type=float, help="two-moons noise (default 0.25)")
    p.add_argument("--epochs", type=int, help="default 150")
    p.add_argument("--lambda", dest="lambda", type=float, help="penalty weight (default 1e-2)")
    p.add_argument("--alpha", type=float, help="Beta shape alpha (default 2.0)")
    p.add_argument("--beta", type=float, help="Beta shape beta (default 1.0)")
    p.add_argument("--m", type=int, help="penalty subset size (default 32)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-2)")
    p.add_argument("--batch-size", type=int, help="default 32")
    p.add_argument("--eps-grid", help="FGSM budgets (default 0,0.05,0.1,0.2,0.3)")
    p.add_argument("--fgsm-variant", choices=["linf", "l2"], help="default l2")
    p.add_argument("--cert-loss", choices=["zero_one", "ce"], help="default zero_one")
    p.add_argument("--cert-layer", type=int, help="layer to certify (default middle)")
    p.add_argument("--delta-grid", help="absolute radii; default scales off the data")
    p.add_argument("--eta-grid", help="default 0.25,0.5,1.0")
    p.add_argument("--confidence", type=float, help="default 0.95")
    p.add_argument("--k-boot", type=int, help="default 50")
    p.add_argument("--control-only", action="store_true", default=None)
    p.set_defaults(
        func=cmd_train_demo, subparser=p, required=["outdir"],
        defaults={
            "seed": 0, "widths": "2-32-32-2", "train_n": 500, "test_n": 250,
            "noise": 0.25, "epochs": 150, "lambda": 1e-2, "alpha": 2.0,
            "beta": 1.0, "m": 32, "lr": 1e-2, "batch_size": 32,
            "eps_grid": "0,0.05,0.1,0.2,0.3", "fgsm_variant": "l2",
            "cert_loss": "zero_one", "cert_layer": 0, "confidence": 0.95,
            "k_boot": 50, "control_only": False,
        },
    )
    return root


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config(args.subparser, args)
        _resolve_defaults(args)
        return args.func(args)
    except (UsageError, ValidationError, DumpError, DimensionMismatchError) as e:
        sys.stderr.write(f'KCONT-ERROR code=validation message="{e}"\n')
        return 1
    except KcontError as e:
        sys.stderr.write(f'KCONT-ERROR code=runtime message="{e}"\n')
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        sys.stderr.write(f'KCONT-ERROR code=runtime message="{type(e).__name__}: {e}"\n')
        return 2


if __name__ == "__main__":
    sys.exit(main())

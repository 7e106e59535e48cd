"""CLI harness tests; commands run in-process via main(argv)."""

import json

import numpy as np
import pytest

from dynguide.cli import main
from dynguide.datasets.gmm import GmmSpec
from dynguide.trajstore import read_arrays, write_arrays


def run_cli(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


def test_invalid_config_field_exits_2_with_named_diagnostic(capsys):
    code, _, err = run_cli(["train", "--set", "dataset.kind=waffles"], capsys)
    assert code == 2
    assert err.startswith("error: dataset.kind:")


def test_missing_shapes_path_names_the_field(capsys):
    code, _, err = run_cli(["train", "--set", "dataset.kind=single"], capsys)
    assert code == 2
    assert err.startswith("error: dataset.path:")


def test_unknown_override_key_exits_2(capsys):
    code, _, err = run_cli(["reproduce", "fig3", "--set", "model.widgets=3"], capsys)
    assert code == 2
    assert err.startswith("error: model.widgets:")


def test_plot_unknown_kind_and_missing_csv(tmp_path, capsys):
    code, _, err = run_cli(["plot", "--kind", "pie", "--csv", "x", "--out", "y"],
                           capsys)
    assert code == 2 and err.startswith("error: plot.kind:")
    code, _, err = run_cli(["plot", "--kind", "loss_curve", "--csv",
                            str(tmp_path / "none.csv"), "--out", "y"], capsys)
    assert code == 2 and err.startswith("error: plot.csv:")


def test_plot_writes_svg(tmp_path, capsys):
    csv = tmp_path / "c.csv"
    csv.write_text("step,loss\n1,1.0\n2,0.5\n")
    out = tmp_path / "c.svg"
    code, _, _ = run_cli(["plot", "--kind", "loss_curve", "--csv", str(csv),
                          "--out", str(out)], capsys)
    assert code == 0
    assert out.read_text().startswith("<svg ")


def test_eval_counts_mode_centers_as_clean(tmp_path, capsys):
    spec = GmmSpec().scaled()
    store = tmp_path / "pts.dga"
    write_arrays(store, {"x0": spec.centers.copy()})
    out_json = tmp_path / "report.json"
    code, out, _ = run_cli(["eval", "--samples", str(store), "--kind", "gmm",
                            "--out", str(out_json)], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload["hallucinations"] == 0
    assert payload["rate"] == 0.0
    assert json.loads(out_json.read_text()) == payload


def test_eval_counts_midpoints_as_hallucinations(tmp_path, capsys):
    spec = GmmSpec().scaled()
    mids = (spec.centers[:-1] + spec.centers[1:]) / 2.0
    store = tmp_path / "mids.dga"
    write_arrays(store, {"x0": mids})
    code, out, _ = run_cli(["eval", "--samples", str(store), "--kind", "gmm"], capsys)
    assert code == 0
    assert json.loads(out)["hallucinations"] > 0


def test_eval_rejects_store_without_x0(tmp_path, capsys):
    store = tmp_path / "bad.dga"
    write_arrays(store, {"y": np.zeros(3)})
    code, _, err = run_cli(["eval", "--samples", str(store), "--kind", "gmm"], capsys)
    assert code == 2 and err.startswith("error: eval.samples:")


def test_sample_requires_classifier_for_guidance(tmp_path, capsys):
    code, _, err = run_cli(["sample", "--denoiser", "x.ckpt", "--mode", "dynamic",
                            "--out", str(tmp_path / "o.dga")], capsys)
    assert code == 2 and err.startswith("error: sample.classifier:")


def test_sample_bad_checkpoint_path(tmp_path, capsys):
    code, _, err = run_cli(["sample", "--denoiser", str(tmp_path / "no.ckpt"),
                            "--out", str(tmp_path / "o.dga")], capsys)
    assert code == 2 and err.startswith("error: sample.denoiser:")


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """One tiny gmm train via the CLI, shared by the sample/eval tests."""
    out_dir = tmp_path_factory.mktemp("tinyrun")
    argv = ["train",
            "--set", "dataset.train_size=400",
            "--set", "model.denoiser_steps=40",
            "--set", "model.snapshots=[40]",
            "--set", "model.classifier_steps=40",
            "--set", f"run.out_dir={out_dir}"]
    code = main(argv)
    assert code == 0
    return out_dir


def test_train_writes_checkpoints_curves_manifest(tiny_run):
    assert (tiny_run / "checkpoints" / "denoiser_40.ckpt").exists()
    assert (tiny_run / "checkpoints" / "classifier.ckpt").exists()
    loss = (tiny_run / "reports" / "denoiser_loss.csv").read_text().splitlines()
    assert loss[0] == "step,loss"
    assert len(loss) > 2
    man = json.loads((tiny_run / "manifest.json").read_text())
    assert "checkpoints/denoiser_40.ckpt" in man["files"]
    assert man["config_hash"]


def test_train_same_config_same_hash(tiny_run, tmp_path, capsys):
    code, _, _ = run_cli(["train",
                          "--set", "dataset.train_size=400",
                          "--set", "model.denoiser_steps=40",
                          "--set", "model.snapshots=[40]",
                          "--set", "model.classifier_steps=40",
                          "--set", f"run.out_dir={tmp_path}"], capsys)
    assert code == 0
    a = json.loads((tiny_run / "manifest.json").read_text())
    b = json.loads((tmp_path / "manifest.json").read_text())
    assert a["config_hash"] == b["config_hash"]
    # and the artifacts themselves are byte-identical
    fa = (tiny_run / "checkpoints" / "denoiser_40.ckpt").read_bytes()
    fb = (tmp_path / "checkpoints" / "denoiser_40.ckpt").read_bytes()
    assert fa == fb


def test_sample_n0_gives_empty_store(tiny_run, tmp_path, capsys):
    out = tmp_path / "empty.dga"
    code, _, _ = run_cli(["sample",
                          "--denoiser", str(tiny_run / "checkpoints" / "denoiser_40.ckpt"),
                          "--n", "0", "--out", str(out)], capsys)
    assert code == 0
    arrays = read_arrays(out)
    assert arrays["x0"].shape[0] == 0


def test_sample_same_seed_identical_bytes(tiny_run, tmp_path, capsys):
    ck = str(tiny_run / "checkpoints" / "denoiser_40.ckpt")
    a, b = tmp_path / "a.dga", tmp_path / "b.dga"
    for out in (a, b):
        code, _, _ = run_cli(["sample", "--denoiser", ck, "--n", "32",
                              "--index", "7", "--out", str(out)], capsys)
        assert code == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.dga"
    run_cli(["sample", "--denoiser", ck, "--n", "32", "--index", "8",
             "--out", str(c)], capsys)
    assert c.read_bytes() != a.read_bytes()


def test_sample_guided_roundtrip(tiny_run, tmp_path, capsys):
    code, _, _ = run_cli(["sample",
                          "--denoiser", str(tiny_run / "checkpoints" / "denoiser_40.ckpt"),
                          "--classifier", str(tiny_run / "checkpoints" / "classifier.ckpt"),
                          "--mode", "dynamic", "--scale", "2.0", "--n", "8",
                          "--set", "sampler.kind=ddim",
                          "--out", str(tmp_path / "g.dga")], capsys)
    assert code == 0
    x0 = read_arrays(tmp_path / "g.dga")["x0"]
    assert x0.shape == (8, 2)
    assert np.all(np.isfinite(x0))

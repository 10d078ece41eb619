import numpy as np
import pytest

from metricverify import io
from metricverify.backbone import Backbone
from metricverify.cli import main
from metricverify.evaluation import EvalReport
from metricverify.verifier import VerifierModel

TINY = """\
data.ids=12
data.per_id=8
data.dim=8
data.holdout=3
data.eval_pairs=60
backbone.hidden_widths=12
backbone.bottleneck=4
verifier.kernel_count=4
verifier.hidden_width=8
verifier.depth=3
train.steps=40
train.batch_size=8
"""


@pytest.fixture
def work(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY)
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "ds.csv")]) == 0
    return tmp_path, ["--config", str(cfg)]


def test_gen_data_header(tmp_path):
    out = tmp_path / "ds.csv"
    argv = ["gen-data", "--ids", "50", "--per-id", "20", "--dim", "32", "--sigma", "0.3",
            "--seed", "7", "--out", str(out)]
    assert main(argv) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "D=32"
    assert len(lines) == 1 + 50 * 20
    ds = io.read_embeddings(out)
    assert len(ds) == 50 and ds.dim == 32


def test_eval_cosine_report(work):
    tmp, cfg = work
    pairs = tmp / "p.csv"
    assert main(["make-pairs", *cfg, "--data", str(tmp / "ds.csv"), "--n-pairs", "40",
                 "--out", str(pairs)]) == 0
    report = tmp / "cos.txt"
    assert main(["eval-cosine", "--pairs", str(pairs), "--mode", "max-accuracy", "--out", str(report)]) == 0
    rep = EvalReport.from_text(report.read_text())
    assert 0 <= rep.error_rate <= 1
    assert len(rep.thresholds) == 10
    assert rep.mode == "max_accuracy"


def test_eval_cosine_stdout(work, capsys):
    tmp, cfg = work
    pairs = tmp / "p.csv"
    main(["make-pairs", *cfg, "--data", str(tmp / "ds.csv"), "--n-pairs", "40", "--out", str(pairs)])
    assert main(["eval-cosine", "--pairs", str(pairs), "--mode", "eer"]) == 0
    out = capsys.readouterr().out
    assert "error_rate=" in out and "thresholds=" in out and "mode=eer" in out


def test_staged_workflow(work):
    tmp, cfg = work
    p = lambda name: str(tmp / name)
    assert main(["train-backbone", *cfg, "--data", p("ds.csv"), "--out", p("bb.ckpt")]) == 0
    assert isinstance(io.load_checkpoint(p("bb.ckpt")), Backbone)
    assert main(["extract", "--backbone", p("bb.ckpt"), "--data", p("ds.csv"), "--out", p("f.csv")]) == 0
    assert io.read_embeddings(p("f.csv")).dim == 8
    assert main(["train-verifier", *cfg, "--features", p("f.csv"), "--out", p("v.ckpt")]) == 0
    assert isinstance(io.load_checkpoint(p("v.ckpt")), VerifierModel)
    assert main(["make-pairs", *cfg, "--data", p("f.csv"), "--n-pairs", "40", "--out", p("fp.csv")]) == 0
    assert main(["eval-verifier", "--model", p("v.ckpt"), "--pairs", p("fp.csv"),
                 "--out", p("v.txt")]) == 0
    assert main(["eval-cosine", "--pairs", p("fp.csv"), "--out", p("c.txt")]) == 0
    assert main(["report", "--reports", p("c.txt"), p("v.txt"), "--audit", "--out", p("r.txt")]) == 0
    text = (tmp / "r.txt").read_text()
    assert "cosine_10fold" in text and "Relative error reduction" in text and "ERRATUM?" in text


def test_train_joint(work):
    tmp, cfg = work
    argv = ["train-joint", *cfg, "--data", str(tmp / "ds.csv"), "--out-backbone", str(tmp / "b.ckpt"),
            "--out-verifier", str(tmp / "v.ckpt")]
    assert main(argv) == 0
    assert isinstance(io.load_checkpoint(tmp / "b.ckpt"), Backbone)
    assert io.load_checkpoint(tmp / "v.ckpt").config.input_dim == 8


def test_sweep(work):
    tmp, cfg = work
    feats, pairs, out = tmp / "ds.csv", tmp / "p.csv", tmp / "sweep.txt"
    main(["make-pairs", *cfg, "--data", str(feats), "--n-pairs", "40", "--out", str(pairs)])
    argv = ["sweep", *cfg, "--axis", "kernels", "--features", str(feats), "--pairs", str(pairs),
            "--steps", "10", "--out", str(out)]
    assert main(argv) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 4 and lines[1].split()[-1] == "--"


def test_pipeline_deterministic(work, capsys):
    _, cfg = work
    assert main(["pipeline", *cfg]) == 0
    first = capsys.readouterr().out
    assert main(["pipeline", *cfg]) == 0
    assert capsys.readouterr().out == first
    assert "[cosine]" in first and "[verifier]" in first


def test_report_audit_only(capsys):
    assert main(["report"]) == 0
    flagged = [line for line in capsys.readouterr().out.splitlines() if "ERRATUM?" in line]
    assert len(flagged) == 2


def test_set_override(work):
    tmp, cfg = work
    out = tmp / "small.csv"
    assert main(["gen-data", *cfg, "--set", "data.dim=3", "--out", str(out)]) == 0
    assert out.read_text().startswith("D=3\n")


def test_divergence_saves_last_good(work, capsys):
    tmp, cfg = work
    out = tmp / "bb.ckpt"
    with pytest.warns(RuntimeWarning):
        code = main(["train-backbone", *cfg, "--data", str(tmp / "ds.csv"), "--lr", "1e200",
                     "--out", str(out)])
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) >= 1 and err[-1].startswith("metricverify train-backbone: error:")
    saved = io.load_checkpoint(out)
    assert all(np.all(np.isfinite(a)) for a in saved.parameter_arrays())


@pytest.mark.parametrize(
    "argv",
    [["eval-cosine", "--pairs", "missing.csv"], ["gen-data", "--set", "train.nope=1", "--out", "x.csv"]],
)
def test_errors_exit_one(tmp_path, monkeypatch, capsys, argv):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "error:" in err[0]


def test_wrong_checkpoint_kind(work, capsys):
    tmp, cfg = work
    main(["train-backbone", *cfg, "--steps", "1", "--data", str(tmp / "ds.csv"), "--out", str(tmp / "b.ckpt")])
    assert main(["eval-verifier", "--model", str(tmp / "b.ckpt"), "--pairs", str(tmp / "ds.csv")]) == 1


@pytest.mark.parametrize("argv", [["bogus"], ["gen-data", "--out", "x", "--nope"], []])
def test_usage_errors_exit_two(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2

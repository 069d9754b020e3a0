import json

import pytest

from lobfill.cli import main


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A tiny end-to-end pipeline: stream -> dataset -> model."""
    d = tmp_path_factory.mktemp("cli")
    msgs = d / "day0.csv"
    book = d / "day0_book.csv"
    assert (
        run(
            "synth",
            "--seed", "5",
            "--horizon", "150",
            "--market-rate", "2.0",
            "--out", str(msgs),
            "--book-out", str(book),
        )
        == 0
    )
    ds = d / "ds.csv"
    assert (
        run(
            "build-dataset",
            "--messages", str(msgs),
            "--mode", "pegged",
            "--n-per-day", "40",
            "--window", "4",
            "--seed", "1",
            "--out", str(ds),
        )
        == 0
    )
    model = d / "model.json"
    assert (
        run(
            "fit",
            "--dataset", str(ds),
            "--encoder", "mlp",
            "--epochs", "3",
            "--latent", "4",
            "--hidden", "8",
            "--out", str(model),
        )
        == 0
    )
    return d


def test_synth_is_reproducible(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert run("synth", "--seed", "9", "--horizon", "30", "--out", str(out)) == 0
    assert a.read_bytes() == b.read_bytes()
    manifest = json.loads((tmp_path / "a.csv.run.json").read_text())
    assert manifest["outputs"][str(a)] == json.loads(
        (tmp_path / "b.csv.run.json").read_text()
    )["outputs"][str(b)]
    assert set(manifest) == {"command", "config_hash", "inputs", "outputs", "version"}


def test_replay_check_passes_and_detects_tampering(workdir, tmp_path):
    msgs, book = workdir / "day0.csv", workdir / "day0_book.csv"
    assert run("replay-check", "--messages", str(msgs), "--book", str(book)) == 0
    lines = book.read_text().splitlines(keepends=True)
    cells = lines[-1].split(",")
    cells[1] = str(int(cells[1]) + 1)  # corrupt one volume
    bad = tmp_path / "bad_book.csv"
    bad.write_text("".join(lines[:-1]) + ",".join(cells))
    assert run("replay-check", "--messages", str(msgs), "--book", str(bad)) == 2


def test_km_and_fill_stats(workdir, capsys):
    ds = workdir / "ds.csv"
    out = workdir / "km.json"
    assert run("km", "--dataset", str(ds), "--out", str(out)) == 0
    km = json.loads(out.read_text())
    assert km["n"] == 40
    surv = km["survival"]
    assert all(0 <= s <= 1 for s in surv)
    assert surv == sorted(surv, reverse=True)

    assert run("fill-stats", "--dataset", str(ds)) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["n"] == 40
    assert 0 <= payload["fill_probability"] <= 1
    assert payload["mode"] == "pegged"


def test_evaluate_and_explain(workdir):
    ds, model = workdir / "ds.csv", workdir / "model.json"
    report_path = workdir / "report.json"
    assert (
        run("evaluate", "--model", str(model), "--dataset", str(ds),
            "--out", str(report_path))
        == 0
    )
    report = json.loads(report_path.read_text())
    assert report["subset"] == "test"
    assert "neg_rcll" in report and "c_td" in report

    explain_path = workdir / "explain.json"
    assert (
        run("explain", "--model", str(model), "--dataset", str(ds),
            "--index", "2", "--permutations", "10", "--out", str(explain_path))
        == 0
    )
    payload = json.loads(explain_path.read_text())
    assert len(payload["shapley"]) == 24
    assert abs(payload["efficiency_gap"]) < 1e-5


def test_sweep_kernel_writes_report(workdir):
    ds = workdir / "ds.csv"
    out = workdir / "sweep.json"
    assert (
        run("sweep-kernel", "--dataset", str(ds), "--sizes", "1,2",
            "--epochs", "1", "--latent", "4", "--hidden", "8",
            "--out", str(out))
        == 0
    )
    report = json.loads(out.read_text())
    assert set(report) == {"1", "2"}


def test_benchmark_writes_report(workdir):
    ds = workdir / "ds.csv"
    out = workdir / "bench.json"
    assert (
        run("benchmark", "--dataset", str(ds), "--encoders", "mlp,cnn",
            "--seeds", "0", "--epochs", "1", "--latent", "4", "--hidden", "8",
            "--out", str(out))
        == 0
    )
    report = json.loads(out.read_text())
    assert set(report) == {"mlp", "cnn"}
    assert all("mean_neg_rcll" in r for r in report.values())


def test_usage_errors_exit_1(capsys):
    assert run("no-such-command") == 1
    assert run("synth") == 1  # missing --out
    assert run("fit", "--dataset", "x", "--out", "y", "--split", "0.5,0.5") == 1
    assert "usage error" in capsys.readouterr().err


def test_missing_file_exits_2(tmp_path, capsys):
    assert run("km", "--dataset", str(tmp_path / "nope.csv")) == 2
    assert "data error" in capsys.readouterr().err


def test_help_lists_all_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        run("--help")
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for cmd in (
        "synth", "replay-check", "build-dataset", "km", "fill-stats",
        "fit", "evaluate", "benchmark", "explain", "sweep-kernel",
    ):
        assert cmd in text

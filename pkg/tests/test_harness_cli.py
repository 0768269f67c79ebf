import hashlib
import json
import statistics
import subprocess
import sys
import xml.etree.ElementTree as ET

import pytest

from varganlab import cli, harness
from varganlab.train import ConfigError, RunHistory, TrainConfig

TINY = ["--width", "0.015625", "--train_size", "240", "--eval_size", "300", "--epochs", "2",
        "--latent_dim", "8", "--dataset", "ring8"]


def tiny_config(**kw):
    base = dict(width=1 / 64, train_size=240, eval_size=300, epochs=2, latent_dim=8, dataset="ring8")
    return TrainConfig(**{**base, **kw})


def test_plan_seeds_and_validation(tmp_path):
    plan = harness.ExperimentPlan(tiny_config(seed=10), repeats=3, out_dir=tmp_path)
    assert [plan.repeat_config(i).seed for i in range(3)] == [10, 11, 12]
    assert harness.ExperimentPlan(tiny_config(), out_dir=tmp_path).repeats == 5
    with pytest.raises(ConfigError):
        harness.ExperimentPlan(tiny_config(), repeats=0)


def test_default_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv(harness.RUNS_ENV, str(tmp_path))
    assert harness.ExperimentPlan(tiny_config()).out_dir == tmp_path / "vargan"
    monkeypatch.delenv(harness.RUNS_ENV)
    assert str(harness.default_root()) == "runs"


def test_config_hash_is_git_blob_sha():
    cfg = tiny_config()
    body = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    out = subprocess.run(["git", "hash-object", "--stdin"], input=body, capture_output=True)
    expected = out.stdout.decode().strip() if out.returncode == 0 else \
        hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()
    assert harness.config_hash(cfg) == expected


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    table = harness.run_experiment(harness.ExperimentPlan(tiny_config(), repeats=2, out_dir=out))
    return out, table


def test_run_experiment_artifacts(experiment):
    out, table = experiment
    for i in range(2):
        run = out / f"run_{i}"
        assert {p.name for p in run.iterdir()} == {"history.csv", "manifest.json", "checkpoint.json"}
        m = json.loads((run / "manifest.json").read_text())
        assert m["seed"] == i and m["status"] == "completed"
        assert m["config"]["seed"] == i and m["totals"]["generator_updates"] == 4
        assert m["config_hash"] == harness.config_hash(TrainConfig.from_dict(m["config"]))
    for svg in (out / "plots").glob("*.svg"):
        ET.fromstring(svg.read_bytes())
    manifest = json.loads((out / "manifest.json").read_text())
    on_disk = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert set(manifest["files"]) == on_disk
    summary = json.loads((out / "summary.json").read_text())
    assert summary == json.loads(table.to_json()) | {"rows": {
        k: {m: s for m, s in r.items() if m != "wall_seconds"} for k, r in table.rows.items()}}
    assert "wall_seconds" in (out / "summary.txt").read_text()


def test_rerun_is_byte_identical(experiment, tmp_path):
    out, _ = experiment
    harness.run_experiment(harness.ExperimentPlan(tiny_config(), repeats=2, out_dir=tmp_path))
    for rel in ("run_0/history.csv", "run_1/history.csv", "summary.json"):
        assert (out / rel).read_bytes() == (tmp_path / rel).read_bytes()


def test_summary_mean_std_matches_recomputation(experiment):
    out, table = experiment
    finals = [RunHistory.from_csv(out / f"run_{i}" / "history.csv").final for i in range(2)]
    for metric in ("modes_covered", "kl", "high_quality_fraction"):
        vals = [f[metric] for f in finals]
        assert table.rows["vargan"][metric]["mean"] == pytest.approx(statistics.mean(vals), abs=1e-12)
        assert table.rows["vargan"][metric]["std"] == pytest.approx(statistics.stdev(vals), abs=1e-12)


def write_fake_run(path, variant, modes, kl=0.1):
    path.mkdir(parents=True)
    cfg = tiny_config(variant=variant)
    (path / "manifest.json").write_text(json.dumps({
        "status": "completed", "variant": variant, "config": cfg.to_dict(),
        "totals": {"wall_seconds": 1.0}}))
    h = RunHistory()
    h.append({"step": 1, "epoch": 1, "modes_covered": modes, "kl": kl, "high_quality_fraction": 0.5})
    h.to_csv(path / "history.csv")
    return path


def test_summarize_examples(tmp_path):
    runs = [write_fake_run(tmp_path / "a", "vargan", 24), write_fake_run(tmp_path / "b", "vargan", 26),
            write_fake_run(tmp_path / "c", "pacgan", 20)]
    table = harness.summarize(runs)
    assert list(table.rows) == ["pacgan", "vargan"]
    assert table.rows["vargan"]["modes_covered"]["mean"] == 25.0
    assert f"{table.rows['vargan']['modes_covered']['std']:.2f}" == "1.41"
    assert "25.00 ± 1.41" in table.render()
    assert table.rows["pacgan"]["single_run"] and table.rows["pacgan"]["modes_covered"]["std"] == 0
    assert "single run" in table.render()
    # aggregation ignores repeat order
    assert harness.summarize(runs[::-1]).to_json() == table.to_json()


def test_single_repeat_summary_equals_final_record(tmp_path):
    run = write_fake_run(tmp_path / "a", "vargan", 17, kl=0.321)
    row = harness.summarize([run]).rows["vargan"]
    assert row["modes_covered"] == {"mean": 17.0, "std": 0.0}
    assert row["kl"]["mean"] == 0.321


def test_summarize_rejects_incomplete(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError):
        harness.summarize([tmp_path / "empty"])
    with pytest.raises(FileNotFoundError):
        harness.run_dirs_under(tmp_path / "empty")


def test_aborted_repeat_fails_experiment(tmp_path, monkeypatch):
    from varganlab import zoo
    monkeypatch.setattr(zoo, "varnet_loss", lambda *a, **k: float("inf"))
    with pytest.raises(harness.RunFailed):
        harness.run_experiment(harness.ExperimentPlan(tiny_config(), repeats=1, out_dir=tmp_path))
    m = json.loads((tmp_path / "run_0" / "manifest.json").read_text())
    assert m["status"] == "aborted" and "v_loss" in m["error"]


# -- command line --------------------------------------------------------------


def test_parse_overrides():
    got = cli.parse_overrides(["--epochs", "3", "--saturating=false", "--packing", "none",
                               "--C", "0.5", "--mcr-variant", "linear"])
    assert got == {"epochs": 3, "saturating": False, "packing": None, "C": 0.5,
                   "mcr_variant": "linear"}
    for bad in (["--epohcs", "3"], ["--epochs", "x"], ["--epochs"], ["stray"]):
        with pytest.raises(ConfigError):
            cli.parse_overrides(bad)


def test_cli_train_and_summarize(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(harness.RUNS_ENV, str(tmp_path))
    assert cli.main(["train", *TINY, "--variant", "pacgan", "--repeats", "2"]) == 0
    exp = tmp_path / "pacgan_ring8"
    assert (exp / "run_1" / "history.csv").exists() and (exp / "summary.txt").exists()
    capsys.readouterr()
    assert cli.main(["summarize", str(exp), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["rows"]["pacgan"]["runs"] == 2
    assert cli.main(["plot", str(exp / "run_0"), "--out", str(tmp_path / "p")]) == 0
    assert {p.name for p in (tmp_path / "p").iterdir()} == {"run_0_convergence.svg", "run_0_scatter.svg"}


def test_cli_config_file(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(tiny_config(variant="vanilla").to_dict()))
    assert cli.main(["train", "--config", str(cfg), "--epochs", "1", "--out", str(tmp_path / "o"),
                     "--no-plots"]) == 0
    m = json.loads((tmp_path / "o" / "run_0" / "manifest.json").read_text())
    assert m["config"]["epochs"] == 1 and m["variant"] == "vanilla"
    assert not (tmp_path / "o" / "plots").exists()


def test_cli_sweep(tmp_path, capsys):
    code = cli.main(["sweep", *TINY, "--grid", "variant=vanilla,minibatch", "--grid", "C=1.0",
                     "--out", str(tmp_path), "--no-plots"])
    assert code == 0
    rows = json.loads((tmp_path / "summary.json").read_text())["rows"]
    assert set(rows) == {"minibatch,1.0", "vanilla,1.0"}


@pytest.mark.parametrize("argv", [
    ["train", "--epochs", "0"],
    ["train", "--bogus", "1"],
    ["train", "--config", "/nonexistent.json"],
    ["train", "--repeats", "0"],
    ["sweep", "--grid", "variant"],
    ["grad-check", "--only", "nope"],
])
def test_cli_config_errors_exit_1(argv, capsys):
    assert cli.main(argv) == 1
    assert "config error" in capsys.readouterr().err


def test_cli_bad_json_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    assert cli.main(["train", "--config", str(p)]) == 1


def test_cli_runtime_abort_exit_2(tmp_path, monkeypatch):
    from varganlab import zoo
    monkeypatch.setattr(zoo, "discriminator_loss", lambda *a: float("nan"))
    assert cli.main(["train", *TINY, "--out", str(tmp_path)]) == 2
    assert cli.main(["summarize", str(tmp_path / "missing")]) == 2


def test_cli_enumerate_designs(tmp_path, capsys):
    assert cli.main(["enumerate-designs", "--side", "9", "--out", str(tmp_path / "d.csv")]) == 0
    out = capsys.readouterr().out
    assert "designs 32768" in out and "HP 22717" in out and "LP 10051" in out
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert len(lines) == 32769 and lines[0] == "code,category,pattern"
    assert cli.main(["enumerate-designs", "--side", "9", "--connectivity", "4"]) == 0
    assert "HP 10051" in capsys.readouterr().out


def test_cli_grad_check_subset(capsys):
    assert cli.main(["grad-check", "--instances", "2", "--only", "linear_stack,d_loss_pacgan"]) == 0
    out = capsys.readouterr().out
    assert out.count("ok") == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "varganlab", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("train", "sweep", "summarize", "plot", "enumerate-designs", "grad-check"):
        assert sub in out.stdout

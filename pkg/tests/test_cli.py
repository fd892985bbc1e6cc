import csv
import json

import numpy as np
import pytest
import zoo

from mmattack.cli import ExperimentConfig, load_config, main
from mmattack.cli.config import ConfigError, parse_assignments
from mmattack.cli.main import EXIT_ALL_FAILED, EXIT_OK, EXIT_TRAIN, EXIT_USAGE, resolve_settings
from mmattack.encoders.checkpoint import load_checkpoint
from mmattack.encoders.model import ALIGNED, FUSED

TINY = [
    "--set", "corpus.n_pairs=40",
    "--set", "corpus.n_eval=4",
    "--set", "train.epochs=1",
    "--set", "train.batch_size=16",
    "--set", "model.dim=16",
    "--set", "model.stem_dim=24",
    "--set", "model.mlp_dim=32",
    "--set", "model.proj_dim=16",
]
FAST_EVAL = ["--set", "corpus.n_eval=6", "--set", "image_attack.iters=3"]


def rows(run):
    with open(run / "metrics.csv", newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    """Checkpoints from one-epoch training runs (below floors, so exit 2)."""
    base = tmp_path_factory.mktemp("tiny")
    out = {}
    for kind in (FUSED, ALIGNED):
        d = base / kind
        assert main(["train", "--out", str(d), "--set", f"model.kind={kind}", *TINY]) == EXIT_TRAIN
        out[kind] = d / "model.mmal"
    return out


# --- config -----------------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig().override({"seed": "7", "image_attack.optimizer": "MIM", "eval.alphas": "1,2"})
    path = tmp_path / "c.txt"
    path.write_text(cfg.dumps())
    assert load_config(path) == cfg
    assert cfg.co_attack.image_budget.optimizer == "MIM" and cfg.alphas == (1.0, 2.0)
    assert cfg.train_config.seed == 7


def test_config_errors():
    with pytest.raises(ConfigError):
        ExperimentConfig().override({"no.such": "1"})
    with pytest.raises(ConfigError):
        ExperimentConfig().override({"seed": "x"})
    with pytest.raises(ConfigError):
        parse_assignments(["just words"], "test")
    assert parse_assignments(["# note", "", "seed = 3"], "test") == {"seed": "3"}


def test_resolve_settings():
    assert len(resolve_settings(["grid"], FUSED)) == 12
    assert len(resolve_settings(["grid", "grid"], ALIGNED)) == 6
    assert [s.name for s in resolve_settings(["CoAttack", "Bi@Uni_cls"], FUSED)] == ["CoAttack", "Bi@Uni_cls"]


# --- exit codes ---------------------------------------------------------------


def test_usage_errors(tmp_path, capsys):
    assert main(["fly"]) == EXIT_USAGE
    assert main(["matrix", "--out", str(tmp_path), "--checkpoint", str(tmp_path / "none.mmal")]) == EXIT_USAGE
    assert main(["train", "--set", "bogus=1"]) == EXIT_USAGE
    assert main(["train", "--workers", "0"]) == EXIT_USAGE
    bad = tmp_path / "bad.mmal"
    bad.write_bytes(b"not a checkpoint")
    assert main(["matrix", "--out", str(tmp_path), "--checkpoint", str(bad)]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.txt")]) == EXIT_USAGE


# --- train --------------------------------------------------------------------


def test_train_creates_dirs_and_is_byte_identical(tiny, tmp_path):
    again = tmp_path / "deep" / "er"
    assert main(["train", "--out", str(again), "--set", "model.kind=fused", *TINY]) == EXIT_TRAIN
    assert (again / "model.mmal").read_bytes() == tiny[FUSED].read_bytes()
    assert (again / "train.log").read_bytes() == (tiny[FUSED].parent / "train.log").read_bytes()
    assert (again / "train.log").read_text().splitlines()[-1].startswith("below floors")
    _, meta = load_checkpoint(tiny[FUSED])
    assert meta["passed"] is False


def test_train_passes_at_default_scale(tmp_path):
    """The full aligned recipe reaches the floors and matches the cached model exactly."""
    out = tmp_path / "aligned"
    assert main(["train", "--out", str(out), "--set", "model.kind=aligned"]) == EXIT_OK
    model, meta = load_checkpoint(out / "model.mmal")
    ref, _ = zoo.trained(ALIGNED, 0)
    assert meta["passed"] is True
    assert all(np.array_equal(model.params[k], ref.params[k]) for k in ref.params)


# --- attack / matrix ---------------------------------------------------------


def test_aligned_checkpoint_feeds_attack(tiny, tmp_path):
    out = tmp_path / "atk"
    code = main(["attack", "--out", str(out), "--checkpoint", str(tiny[ALIGNED]), "--setting", "CoAttack", *TINY])
    assert code == EXIT_OK
    images = np.load(out / "adversarial" / "CoAttack" / "images.npy")
    texts = json.loads((out / "adversarial" / "CoAttack" / "texts.json").read_text())
    assert images.shape == (4, 3, 24, 24) and len(texts) == 4
    assert "model.kind=aligned" in (out / "config.txt").read_text()


def test_fused_matrix_has_twelve_cells(tmp_path):
    out = tmp_path / "m"
    ckpt = str(zoo.checkpoint_path(FUSED, 0))
    zoo.trained(FUSED, 0)
    assert main(["matrix", "--out", str(out), "--checkpoint", ckpt, *FAST_EVAL]) == EXIT_OK
    got = rows(out)
    assert len({r["setting"] for r in got}) == 12
    assert len(got) == 12 * 3 and not any(r["error"] for r in got)
    schema = json.loads((out / "schema.json").read_text())
    assert set(schema["metrics.csv"]) == set(got[0])
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["eval.settings"] == "grid" and summary["seeds"] == [0]


def test_multi_on_aligned_gives_error_rows(tiny, tmp_path):
    out = tmp_path / "m"
    code = main([
        "matrix", "--out", str(out), "--checkpoint", str(tiny[ALIGNED]),
        "--set", "eval.settings=Bi@Multi_full,Bi@Uni_cls", *TINY,
    ])
    assert code == EXIT_OK
    bad = [r for r in rows(out) if r["setting"] == "Bi@Multi_full"]
    assert len(bad) == 2 and all(r["error"] and r["asr"] == "" for r in bad)
    out2 = tmp_path / "all_bad"
    code = main(["matrix", "--out", str(out2), "--checkpoint", str(tiny[ALIGNED]), "--set", "eval.settings=Bi@Multi_cls", *TINY])
    assert code == EXIT_ALL_FAILED


def test_matrix_rerun_and_workers_are_identical(tiny, tmp_path):
    args = ["--checkpoint", str(tiny[FUSED]), "--set", "eval.settings=baselines", *TINY]
    a, c = tmp_path / "a", tmp_path / "c"
    assert main(["matrix", "--out", str(a), *args]) == EXIT_OK
    first = {p.name: p.read_bytes() for p in a.iterdir()}
    assert main(["matrix", "--out", str(a), *args]) == EXIT_OK
    assert {p.name: p.read_bytes() for p in a.iterdir()} == first
    assert main(["matrix", "--out", str(c), "--workers", "3", *args]) == EXIT_OK
    for name in first:
        if name in ("summary.json", "config.txt"):
            continue  # these echo the output directory
        assert (c / name).read_bytes() == first[name]
    sa, sc = (json.loads((d / "summary.json").read_text()) for d in (a, c))
    sa["config"].pop("out"), sc["config"].pop("out")
    assert sa == sc


def test_report_echo_reproduces_the_run(tiny, tmp_path):
    first = tmp_path / "first"
    assert main(["matrix", "--out", str(first), "--checkpoint", str(tiny[FUSED]), "--set", "eval.settings=CoAttack", *TINY]) == EXIT_OK
    second = tmp_path / "second"
    code = main(["matrix", "--config", str(first / "config.txt"), "--out", str(second), "--checkpoint", str(tiny[FUSED])])
    assert code == EXIT_OK
    assert (first / "metrics.csv").read_bytes() == (second / "metrics.csv").read_bytes()


# --- angles -----------------------------------------------------------------


@pytest.mark.parametrize("kind,series", [
    (FUSED, {"Vanilla.multimodal", "CoAttack.multimodal", "Vanilla.unimodal", "CoAttack.unimodal"}),
    (ALIGNED, {"Vanilla.unimodal", "CoAttack.unimodal"}),
])
def test_angle_histograms(tiny, tmp_path, kind, series):
    out = tmp_path / kind
    assert main(["angles", "--out", str(out), "--checkpoint", str(tiny[kind]), *TINY]) == EXIT_OK
    schema = json.loads((out / "schema.json").read_text())
    assert set(schema["histograms"].values()) == series
    for fname in schema["histograms"]:
        with open(out / fname, newline="") as fh:
            hist = list(csv.DictReader(fh))
        assert len(hist) == 18 and float(hist[-1]["bin_hi"]) == pytest.approx(np.pi)


def test_angles_with_zero_samples(tiny, tmp_path):
    out = tmp_path / "z"
    assert main(["angles", "--out", str(out), "--checkpoint", str(tiny[FUSED]), *TINY, "--set", "corpus.n_eval=0"]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["angles"] and all(v["n"] == 0 for v in summary["angles"].values())
    schema = json.loads((out / "schema.json").read_text())
    for fname in schema["histograms"]:
        with open(out / fname, newline="") as fh:
            assert sum(int(r["count"]) for r in csv.DictReader(fh)) == 0


# --- sweep / report -----------------------------------------------------------


def test_default_sweep_has_six_alphas(tiny, tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", "--out", str(out), "--checkpoint", str(tiny[ALIGNED]), *TINY]) == EXIT_OK
    assert len({r["setting"] for r in rows(out)}) == 6
    plateau = json.loads((out / "summary.json").read_text())["plateau"]
    assert set(plateau) == {"TR", "IR"}
    assert all(v is None or 0.0 <= v <= 1.0 for v in plateau.values())


def test_single_alpha_sweep_matches_matrix_cell(tiny, tmp_path):
    common = ["--checkpoint", str(tiny[FUSED]), *TINY, "--set", "co_attack.alpha1=2"]
    assert main(["sweep", "--out", str(tmp_path / "s"), "--alphas", "2,2.0", *common]) == EXIT_OK
    assert main(["matrix", "--out", str(tmp_path / "m"), "--set", "eval.settings=CoAttack", *common]) == EXIT_OK
    sweep, cell = rows(tmp_path / "s"), rows(tmp_path / "m")
    assert {r["setting"] for r in sweep} == {"CoAttack[alpha=2]"}
    assert [(r["task"], r["asr"]) for r in sweep] == [(r["task"], r["asr"]) for r in cell]


def test_report_merges_runs(tiny, tmp_path):
    for seed in ("0", "1"):
        args = ["--out", str(tmp_path / seed), "--seed", seed, "--checkpoint", str(tiny[FUSED]), *TINY]
        assert main(["matrix", *args, "--set", "eval.settings=CoAttack"]) == EXIT_OK
    merged = tmp_path / "merged"
    assert main(["report", str(tmp_path / "0"), str(tmp_path / "1"), "--out", str(merged)]) == EXIT_OK
    assert [r["seed"] for r in rows(merged)] == ["0"] * 3 + ["1"] * 3
    assert json.loads((merged / "summary.json").read_text())["seeds"] == [0, 1]
    assert main(["report", str(tmp_path / "missing"), "--out", str(merged)]) == EXIT_USAGE

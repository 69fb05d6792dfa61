from pathlib import Path

import numpy as np
import pytest

from fedrec import cli
from fedrec.attack import AttackKind
from fedrec.defense import DefenseKind
from fedrec.optim import OptimizerKind

SMALL = """
[experiment]
profile = desk

[dataset]
source = synthetic
users = 24
items = 40
latent_dim = 2
density = 0.3
popularity = 6.0
data_seed = 5

[model]
dim = 4

[loss]
negatives_per_positive = 4

[optim]
eta = 0.02

[federation]
rounds = 6
byzantine_fraction = 0.25
attack = gradient_ascent
defense = gradient_krum
krum_f = 4
krum_keep = 5
seed = 2

[output]
dump_vectors = true
"""


def write_config(tmp_path, text=SMALL, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_config_defaults_follow_profile(tmp_path):
    path = write_config(tmp_path, "[experiment]\nprofile = full\n"
                                  "[dataset]\nusers = 10\n")
    cfg = cli.load_config(path)
    assert cfg.dim == 64
    assert cfg.fed.client_ratio == 0.01
    assert cfg.optim.eta == 1e-3
    assert cfg.optim.beta1 == 0.9 and cfg.optim.beta2 == 0.999
    assert cfg.loss.gamma == 1.0 and cfg.loss.lam == 1e-4
    desk = cli.load_config(write_config(
        tmp_path, "[experiment]\nprofile = desk\n", "desk.ini"))
    assert desk.dim == 16 and desk.fed.client_ratio == 0.5


def test_load_config_full(tmp_path):
    cfg = cli.load_config(write_config(tmp_path))
    assert cfg.users == 24 and cfg.items == 40
    assert cfg.fed.attack.kind is AttackKind.GRADIENT_ASCENT
    assert cfg.fed.defense.kind is DefenseKind.GRADIENT_KRUM
    assert cfg.fed.defense.f == 4 and cfg.fed.defense.keep == 5
    assert cfg.fed.optimizer is OptimizerKind.ADAM
    assert cfg.dump_vectors is True


def test_load_config_errors(tmp_path):
    with pytest.raises(ValueError, match="not found"):
        cli.load_config(tmp_path / "missing.ini")
    bad = write_config(tmp_path, "[federation]\nattack = nuke\n", "bad.ini")
    with pytest.raises(ValueError, match="invalid attack"):
        cli.load_config(bad)
    bad2 = write_config(tmp_path, "[federation]\nrounds = soon\n", "bad2.ini")
    with pytest.raises(ValueError, match="invalid value"):
        cli.load_config(bad2)
    bad3 = write_config(tmp_path, "[dataset]\nsource = file\n", "bad3.ini")
    with pytest.raises(ValueError, match="path"):
        cli.load_config(bad3)


def test_run_writes_all_artifacts(tmp_path):
    cfg_path = write_config(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["run", str(cfg_path), "--out", str(out), "--quiet"]) == 0
    metrics = (out / "metrics.csv").read_text().strip().splitlines()
    assert metrics[0] == "round,k,precision,recall"
    assert len(metrics) - 1 == 6 * 5  # rounds x K
    roundlog = (out / "roundlog.csv").read_text().strip().splitlines()
    assert len(roundlog) - 1 == 6
    resilience = (out / "resilience.csv").read_text().strip().splitlines()
    assert len(resilience) - 1 == 6
    assert (out / "summary.txt").exists()
    dumps = sorted((out / "vectors").iterdir())
    assert len(dumps) == 12  # params + gradients per round
    first = dumps[0].read_text().splitlines()
    assert first[0].startswith("client_id,byzantine,x0,")


def test_run_reruns_byte_identical(tmp_path):
    cfg_path = write_config(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(cfg_path), "--out", str(out1), "--quiet"]) == 0
    assert cli.main(["run", str(cfg_path), "--out", str(out2), "--quiet"]) == 0
    files1 = sorted(p.relative_to(out1) for p in out1.rglob("*") if p.is_file())
    files2 = sorted(p.relative_to(out2) for p in out2.rglob("*") if p.is_file())
    assert files1 == files2
    for rel in files1:
        assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes()


def test_run_supports_matrix_factorization_model(tmp_path):
    cfg_path = write_config(
        tmp_path,
        SMALL.replace("[model]\ndim = 4", "[model]\nkind = fmf\ndim = 4")
             .replace("rounds = 6", "rounds = 3")
             .replace("attack = gradient_ascent", "attack = none")
             .replace("defense = gradient_krum", "defense = none"),
        "fmf.ini")
    out = tmp_path / "fmf_out"
    assert cli.main(["run", str(cfg_path), "--out", str(out), "--quiet"]) == 0
    metrics = (out / "metrics.csv").read_text().strip().splitlines()
    assert len(metrics) - 1 == 3 * 5


def test_run_rejects_bad_config(tmp_path, capsys):
    bad = write_config(tmp_path, "[federation]\ndefense = firewall\n",
                       "bad.ini")
    assert cli.main(["run", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err


def test_compare_identical_runs_zero_improvement(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    cli.main(["run", str(cfg_path), "--out", str(out1), "--quiet"])
    cli.main(["run", str(cfg_path), "--out", str(out2), "--quiet"])
    assert cli.main(["compare", str(out1), str(out2)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert "P@1" in lines[0]
    assert all("+0.0%" in line for line in lines[1:])


def test_compare_missing_metrics_names_directory(tmp_path, capsys):
    missing = tmp_path / "nothing_here"
    missing.mkdir()
    assert cli.main(["compare", str(missing)]) == 2
    assert "nothing_here" in capsys.readouterr().err


def test_grid_builds_matrix(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "1")
    cfg_path = write_config(tmp_path, SMALL.replace("rounds = 6",
                                                    "rounds = 2"))
    out = tmp_path / "grid"
    code = cli.main(["grid", str(cfg_path), "--byzantine", "0.2,0.4",
                     "--defense", "gradient_krum,param_krum",
                     "--out", str(out)])
    assert code == 0
    dirs = sorted(p.name for p in out.iterdir())
    assert dirs == ["byz20_gradient_krum", "byz20_param_krum",
                    "byz40_gradient_krum", "byz40_param_krum"]
    for d in out.iterdir():
        assert (d / "metrics.csv").exists()


def test_grid_full_defense_matrix_shape(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    cfg_path = write_config(tmp_path, SMALL.replace("rounds = 6",
                                                    "rounds = 1"))
    out = tmp_path / "grid12"
    code = cli.main(["grid", str(cfg_path), "--byzantine", "0.2,0.3,0.4",
                     "--defense", "all", "--out", str(out)])
    assert code == 0
    assert len(list(out.iterdir())) == 12


FIG_SPLIT_CONFIG = """
[experiment]
profile = desk

[dataset]
source = synthetic
users = 90
items = 60
latent_dim = 2
density = 0.3
popularity = 8.0
data_seed = 13

[model]
dim = 4

[loss]
negatives_per_positive = 8

[optim]
eta = 0.02

[federation]
rounds = 4
byzantine_fraction = 0.3556
attack = camouflage
defense = none
seed = 21

[output]
dump_vectors = true
"""


def test_dumped_vectors_show_parameter_camouflage(tmp_path):
    # 58 benign vs 32 byzantine clients: in the dumped CSVs the group
    # centroids are far closer in parameter space than in gradient space
    cfg_path = write_config(tmp_path, FIG_SPLIT_CONFIG, "fig.ini")
    out = tmp_path / "fig"
    assert cli.main(["run", str(cfg_path), "--out", str(out), "--quiet"]) == 0

    def centroid_gap(path):
        rows = path.read_text().strip().splitlines()[1:]
        groups = {0: [], 1: []}
        for row in rows:
            cells = row.split(",")
            groups[int(cells[1])].append([float(x) for x in cells[2:]])
        assert groups[0] and groups[1]
        return float(np.linalg.norm(np.mean(groups[1], axis=0)
                                    - np.mean(groups[0], axis=0)))

    cfg = cli.load_config(cfg_path)
    assert cfg.fed.num_byzantine == 32
    for rnd in (2, 3, 4):
        theta_gap = centroid_gap(out / "vectors" / f"round{rnd:04d}_params.csv")
        grad_gap = centroid_gap(out / "vectors"
                                / f"round{rnd:04d}_gradients.csv")
        assert theta_gap / grad_gap < 1.0


def test_run_exit_codes_on_violations(tmp_path, monkeypatch):
    # an impossible tolerance turns benign float noise into violations,
    # driving the failure exit path and its override flag
    monkeypatch.setattr("fedrec.resilience.CHAIN_TOL", 0.0)
    cfg_path = write_config(tmp_path, SMALL.replace("rounds = 6",
                                                    "rounds = 2"))
    out = tmp_path / "viol"
    assert cli.main(["run", str(cfg_path), "--out", str(out),
                     "--quiet"]) == 3
    assert cli.main(["run", str(cfg_path), "--out", str(out), "--quiet",
                     "--allow-violations"]) == 0


def test_bench_runs(capsys):
    assert cli.main(["bench", "--items", "40", "--dim", "4", "--positives",
                     "6", "--negatives", "4", "--clients", "8",
                     "--repeats", "1"]) == 0
    out = capsys.readouterr().out
    assert "pair_loss_grad" in out and "pairwise_sq_dists" in out

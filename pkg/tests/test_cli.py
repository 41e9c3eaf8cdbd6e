import filecmp
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from designgap.cli import run
from designgap.config import (ConfigError, GapSettings, RunConfig, dump_config, parse_config,
                              with_seed)
from designgap.evaluation import read_histogram
from designgap.model import ModelConfig

FAST = """\
[market]
n_consumers = 400

[model]
epochs = 3
encoder_hidden = 16
decoder_hidden = 16
embedder_hidden = 16

[gaps]
n_candidates = 30
n_probe = 20
n_importance = 8

[experiment]
n_probes = 20
feasibility_samples = 8
"""


@pytest.fixture
def fast_ini(tmp_path):
    path = tmp_path / "fast.ini"
    path.write_text(FAST)
    return path


def gap_flags(out):
    vals = dict(line.split(" = ") for line in (out / "gaps.txt").read_text().splitlines())
    return ["--holdout-ids", vals["test_gap_ids"], "--val-gap-ids", vals["val_gap_ids"]]


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = RunConfig()
        assert parse_config(dump_config(cfg, 0)) == cfg

    def test_seed_is_global(self):
        cfg = with_seed(RunConfig(), 7)
        assert cfg.market.seed == 7 and cfg.model.seed == 7
        assert dump_config(cfg, 7).startswith("# seed = 7\n")

    @given(st.integers(1, 8), st.lists(st.integers(1, 64), max_size=3), st.floats(0, 5),
           st.booleans(), st.one_of(st.none(), st.floats(0, 1)))
    def test_round_trip(self, K, hidden, kl, freeze, g2):
        cfg = RunConfig(model=ModelConfig(latent_dim=K, encoder_hidden=tuple(hidden),
                                          kl_weight=kl, freeze_decoder=freeze),
                        gaps=GapSettings(gamma2=g2, gamma1=math.inf))
        assert parse_config(dump_config(cfg, 0)) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            parse_config("[model]\nlearning_rate = 0.1\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="optimizer"):
            parse_config("[optimizer]\nlr = 0.1\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config("[model]\nepochs = many\n")
        with pytest.raises(ConfigError):
            parse_config("[market]\ntaste_scale = 0\n")


class TestCli:
    def test_pipeline(self, tmp_path, fast_ini, capsys):
        m = tmp_path / "m"
        assert run(["gen", "--config", str(fast_ini), "--out-dir", str(m)]) == 0
        assert (m / "manifest.ini").exists() and (m / "config.ini").exists()
        split = ["--manifest", str(m / "manifest.ini")] + gap_flags(m)
        t = tmp_path / "t"
        assert run(["train", "--config", str(fast_ini), "--out-dir", str(t)] + split) == 0
        log = (t / "training_log.csv").read_text().splitlines()
        assert log[0].startswith("epoch,loss") and len(log) == 4
        ck = ["--checkpoint", str(t / "checkpoint.bin")]
        e = tmp_path / "e"
        assert run(["eval", "--config", str(fast_ini), "--out-dir", str(e)] + split + ck) == 0
        assert "top1_existing" in (e / "report_choice.csv").read_text()
        g = tmp_path / "g"
        assert run(["gaps", "--config", str(fast_ini), "--out-dir", str(g)] + split + ck) == 0
        head = (g / "candidates.csv").read_text().splitlines()
        assert len(head) == 31
        assert "candidates:" in capsys.readouterr().out

    def test_gaps_explicit_thresholds(self, tmp_path, fast_ini):
        m, t = tmp_path / "m", tmp_path / "t"
        run(["gen", "--config", str(fast_ini), "--out-dir", str(m)])
        split = ["--manifest", str(m / "manifest.ini")] + gap_flags(m)
        run(["train", "--config", str(fast_ini), "--out-dir", str(t)] + split)
        g = tmp_path / "g"
        code = run(["gaps", "--config", str(fast_ini), "--out-dir", str(g), "--checkpoint",
                    str(t / "checkpoint.bin"), "--gamma1=-inf", "--gamma2", "0",
                    "--gamma-s", "0"] + split)
        assert code == 0
        assert "rejected_feasibility" in (g / "candidates.csv").read_text()
        assert "accepted" not in (g / "candidates.csv").read_text().split("\n", 1)[1]

    def test_missing_manifest(self, capsys):
        assert run(["train"]) == 1
        err = capsys.readouterr().err
        assert "usage:" in err and "--manifest" in err

    def test_unknown_config_key(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[model]\nwarp = 9\n")
        assert run(["gen", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) == 1
        assert "warp" in capsys.readouterr().err

    def test_unknown_holdout(self, tmp_path, fast_ini, capsys):
        m = tmp_path / "m"
        run(["gen", "--config", str(fast_ini), "--out-dir", str(m)])
        code = run(["train", "--manifest", str(m / "manifest.ini"), "--holdout-ids", "999",
                    "--out-dir", str(tmp_path / "t")])
        assert code == 1

    def test_catalog_mismatch(self, tmp_path, fast_ini):
        m, t = tmp_path / "m", tmp_path / "t"
        run(["gen", "--config", str(fast_ini), "--out-dir", str(m)])
        run(["train", "--config", str(fast_ini), "--out-dir", str(t), "--manifest",
             str(m / "manifest.ini")] + gap_flags(m))
        code = run(["eval", "--manifest", str(m / "manifest.ini"), "--checkpoint",
                    str(t / "checkpoint.bin")])
        assert code == 1

    def test_divergence_exits_2(self, tmp_path, fast_ini, capsys):
        m = tmp_path / "m"
        run(["gen", "--config", str(fast_ini), "--out-dir", str(m)])
        div = tmp_path / "div.ini"
        div.write_text(FAST.replace("epochs = 3", "epochs = 2\nlr_encoder = 1e300\n"
                                    "lr_decoder = 1e300\nlr_embedder = 1e300"))
        with np.errstate(all="ignore"):
            code = run(["train", "--config", str(div), "--out-dir", str(tmp_path / "t"),
                        "--manifest", str(m / "manifest.ini")] + gap_flags(m))
        assert code == 2
        assert "non-finite" in capsys.readouterr().err

    def test_gradcheck(self, capsys):
        assert run(["gradcheck", "--n-configs", "3"]) == 0
        assert "gradcheck passed" in capsys.readouterr().out

    def test_experiment_three_seeds(self, tmp_path, fast_ini):
        out = tmp_path / "x"
        assert run(["experiment", "--config", str(fast_ini), "--seeds", "3",
                    "--out-dir", str(out)]) == 0
        rows = (out / "report_choice.csv").read_text().splitlines()
        assert rows[0] == "stage,metric,mean,std,seed_0,seed_1,seed_2"
        top1 = [r for r in rows if r.startswith("choice,top1_existing,")][0].split(",")
        assert top1[3] != ""
        assert "msqe_accepted" in (out / "report_gap.csv").read_text()
        for s in range(3):
            hist = read_histogram(out / f"seed_{s}" / "rho2_histogram.csv")
            for g in ("induced_gaps", "sampled"):
                assert hist[g].sum() == 0 or abs(hist[g].sum() - 1) <= 1e-9
        assert "# bundle_version = 1" in (out / "config.ini").read_text()

    def test_below_floor_flag(self, tmp_path, fast_ini):
        cfg = tmp_path / "floor.ini"
        cfg.write_text(FAST.replace("[experiment]", "[experiment]\nchoice_floor = 1.0"))
        out = tmp_path / "x"
        assert run(["experiment", "--config", str(cfg), "--out-dir", str(out)]) == 0
        assert "flag: choice model below floor" in (out / "summary.txt").read_text()

    def test_experiment_deterministic(self, tmp_path, fast_ini):
        for d in ("a", "b"):
            assert run(["experiment", "--config", str(fast_ini), "--seed", "4",
                        "--out-dir", str(tmp_path / d)]) == 0
        cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
        assert not cmp.subdirs["seed_4"].diff_files

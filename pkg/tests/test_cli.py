import json

import numpy as np
import pytest

from nn_mmimo.channel import PropagationParams, noise_power, path_loss_linear
from nn_mmimo.cli import EXIT_CONFIG, EXIT_OK, cli_main


def write_config(tmp_path, **overrides):
    doc = {
        "schemes": ["proposed"],
        "rate_allocation": [[1, 1], [1, 1]],
        "m_grid": [8],
        "trials": 32,
        "drops": 1,
        "seed": 3,
        "power_caps_w": 0.316,
        "distances_m": [500.0, 900.0],
        "batch_size": 16,
    }
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


class TestExitCodes:
    def test_missing_config(self, capsys):
        assert cli_main(["design"]) == EXIT_CONFIG
        assert "config" in capsys.readouterr().err

    def test_nonexistent_config_path(self, capsys):
        assert cli_main(["design", "--config", "/no/such/file.json"]) == EXIT_CONFIG

    def test_unknown_flag(self, capsys):
        assert cli_main(["design", "--frobnicate"]) == EXIT_CONFIG
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert cli_main(["explode"]) == EXIT_CONFIG

    def test_verify_passes(self, capsys):
        assert cli_main(["verify", "--max-bits", "4", "--max-users", "2"]) == EXIT_OK
        assert "passed" in capsys.readouterr().out


class TestDesignCommand:
    def test_matches_hand_evaluation(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        assert cli_main(["design", "--config", cfg_path]) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)

        # independent recomputation of the closed form
        params = PropagationParams()
        beta = np.array(
            [path_loss_linear(500.0, params), path_loss_linear(900.0, params)]
        )
        caps = 0.316 * beta
        order = np.argsort(caps)
        caps = caps[order]
        energies = np.array([0.5, 2.0])  # two 4-QAM sub-constellations
        d_star = float(np.min(caps / np.sqrt(energies)))
        p_star = 1.0 / (np.sqrt(energies) * d_star)

        assert doc["d_star"] == pytest.approx(d_star, rel=1e-12)
        assert doc["p_star"] == pytest.approx(p_star.tolist(), rel=1e-12)
        assert doc["pi_star"] == [0, 1]
        assert doc["noise_power_w"] == pytest.approx(noise_power(params), rel=1e-12)
        assert doc["user_order_by_effective_cap"] == order.tolist()

    def test_requires_distances(self, tmp_path):
        cfg_path = write_config(tmp_path, distances_m=None)
        assert cli_main(["design", "--config", cfg_path]) == EXIT_CONFIG


class TestSweepCommand:
    def test_writes_outputs(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, distances_m=None)
        out_dir = tmp_path / "out"
        code = cli_main(["sweep", "--config", cfg_path, "--out", str(out_dir)])
        assert code == EXIT_OK
        assert (out_dir / "ber.csv").exists()
        assert (out_dir / "summary.json").exists()
        summary = json.loads((out_dir / "summary.json").read_text())
        assert summary["config"]["seed"] == 3

    def test_seed_override(self, tmp_path):
        cfg_path = write_config(tmp_path, distances_m=None)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert cli_main(["sweep", "--config", cfg_path, "--out", str(out_a)]) == EXIT_OK
        assert (
            cli_main(
                ["sweep", "--config", cfg_path, "--seed", "99", "--out", str(out_b)]
            )
            == EXIT_OK
        )
        assert (out_a / "ber.csv").read_bytes() != (out_b / "ber.csv").read_bytes()


class TestKlCommand:
    def test_prints_breakdown(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        assert cli_main(["kl", "--config", cfg_path, "--pair", "3", "12"]) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert doc["pair"] == [3, 12]
        assert doc["kl_single_antenna"] >= 0
        assert doc["kl_single_antenna"] == pytest.approx(
            doc["f1"] + doc["f2"], abs=1e-10
        )

    def test_out_of_range_pair(self, tmp_path):
        cfg_path = write_config(tmp_path)
        assert cli_main(["kl", "--config", cfg_path, "--pair", "0", "999"]) == EXIT_CONFIG


class TestThreadsEnvFallback:
    def test_env_used_when_flag_absent(self, tmp_path, monkeypatch):
        cfg_path = write_config(tmp_path, distances_m=None)
        monkeypatch.setenv("NN_MMIMO_THREADS", "2")
        out_dir = tmp_path / "envout"
        assert cli_main(["sweep", "--config", cfg_path, "--out", str(out_dir)]) == EXIT_OK

    def test_bad_env_value_is_config_error(self, tmp_path, monkeypatch):
        cfg_path = write_config(tmp_path, distances_m=None)
        monkeypatch.setenv("NN_MMIMO_THREADS", "many")
        assert cli_main(["sweep", "--config", cfg_path]) == EXIT_CONFIG

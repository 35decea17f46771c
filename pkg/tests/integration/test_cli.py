"""
Tests of the command-line verbs through main().
"""

import os

import pytest
import yaml

from main import main

pytestmark = pytest.mark.integration

TINY_FLAGS = [
    "--epochs", "1", "--batch-size", "16", "--n-samples", "120", "--n-classes", "4", "--feature-dim", "6",
    "--latent-dim", "4", "--descriptor-dim", "6", "--backbone-hidden", "8", "--vae-hidden", "8",
    "--ndcg-k", "5", "--n-queries", "10", "--seed", "3",
]


class TestCommandLine:
    """Test suite for the CLI verbs."""

    def test_generate_train_evaluate(self, tmp_path, capsys):
        """Test data generation, training and checkpoint evaluation in one directory."""
        out = str(tmp_path / "run")
        assert main(["generate-data", *TINY_FLAGS, "--output-dir", out]) == 0
        assert sorted(f for f in os.listdir(out) if f.endswith(".npz")) == ["test.npz", "train.npz", "val.npz"]

        assert main(["train", *TINY_FLAGS, "--output-dir", out]) == 0
        assert os.path.isfile(os.path.join(out, "metrics.csv"))

        assert main(["evaluate", "--checkpoint", os.path.join(out, "checkpoint.npz"),
                     "--queries", os.path.join(out, "train.npz"), "--archive", os.path.join(out, "test.npz"),
                     "--k", "5", "--n-queries", "10"]) == 0
        assert "NDCG@5:" in capsys.readouterr().out

    def test_sweep_and_plot_data(self, tmp_path):
        """Test a lambda sweep followed by plot data emission."""
        out = str(tmp_path / "sweep")
        assert main(["sweep", *TINY_FLAGS, "--output-dir", out, "--axis", "lambda", "--values", "0", "20"]) == 0
        assert os.path.isfile(os.path.join(out, "sweep_results.csv"))
        assert main(["emit-plot-data", out, "--out-dir", str(tmp_path / "plots")]) == 0
        assert os.path.isfile(tmp_path / "plots" / "detection_grid.csv")

    def test_count_params(self, capsys):
        """Test the parameter report includes the hybrid overhead and the backbone share."""
        assert main(["count-params", *TINY_FLAGS]) == 0
        output = capsys.readouterr().out
        assert "hybrid overhead over disc_only" in output
        assert "backbone share of hybrid" in output

    def test_yaml_config_with_flag_override(self, tmp_path):
        """Test flags take precedence over the YAML file."""
        config_path = tmp_path / "config.yaml"
        config_path.write_text(yaml.safe_dump({"epochs": 50, "slnir": 0.25}), encoding="utf-8")
        out = str(tmp_path / "run")
        assert main(["train", "--config", str(config_path), *TINY_FLAGS, "--slnir", "0.2",
                     "--output-dir", out]) == 0
        with open(os.path.join(out, "config.yaml"), encoding="utf-8") as f:
            stored = yaml.safe_load(f)
        assert stored["epochs"] == 1
        assert stored["slnir"] == 0.2

    def test_invalid_config_exit_status(self, tmp_path):
        """Test a rejected configuration exits with status 1 and writes nothing."""
        out = tmp_path / "run"
        assert main(["train", *TINY_FLAGS, "--slnir", "0.25", "--output-dir", str(out)]) == 1
        assert not out.exists()

    def test_missing_checkpoint_exit_status(self, tmp_path):
        """Test evaluating a missing checkpoint exits with status 1."""
        missing = str(tmp_path / "absent.npz")
        assert main(["evaluate", "--checkpoint", missing, "--queries", missing, "--archive", missing]) == 1

    def test_plot_data_without_runs(self, tmp_path):
        """Test emit-plot-data on an empty directory exits with status 1."""
        assert main(["emit-plot-data", str(tmp_path)]) == 1

import subprocess
import sys

import pytest

from lira.cli import main

SYNTH = "400,8,4,0.25"


def run(tmp_path, *args):
    return main(["--out-dir", str(tmp_path), *args])


def stage_args(cmd, tmp_path, **extra):
    args = [cmd, "--out-dir", str(tmp_path), "--synthetic", SYNTH, "--k", "10",
            "--seed", "0"]
    for key, value in extra.items():
        args += [f"--{key.replace('_', '-')}", str(value)]
    return args


@pytest.fixture()
def pipeline_dir(tmp_path):
    """Out-dir with build + train + redundancy already run on a tiny corpus."""
    assert main(stage_args("build", tmp_path, n_partitions=4)) == 0
    assert main(stage_args("train", tmp_path, epochs=4, batch_size=128,
                           lr=0.003)) == 0
    assert main(stage_args("redundancy", tmp_path, eta=3.0)) == 0
    return tmp_path


class TestStageOrdering:
    def test_redundancy_without_build(self, tmp_path, capsys):
        code = main(stage_args("redundancy", tmp_path))
        assert code == 1
        assert "run 'lira build' first" in capsys.readouterr().err

    def test_redundancy_without_train(self, tmp_path, capsys):
        assert main(stage_args("build", tmp_path, n_partitions=4)) == 0
        code = main(stage_args("redundancy", tmp_path))
        assert code == 1
        assert "run 'lira train' first" in capsys.readouterr().err

    def test_train_without_build(self, tmp_path, capsys):
        code = main(stage_args("train", tmp_path))
        assert code == 1
        assert "run 'lira build' first" in capsys.readouterr().err


class TestPipeline:
    def test_full_pipeline_emits_artifacts(self, pipeline_dir, capsys):
        assert main(stage_args("groundtruth", pipeline_dir,
                               synthetic_queries=50)) == 0
        assert main(stage_args("query", pipeline_dir, synthetic_queries=50,
                               limit=2)) == 0
        out = capsys.readouterr().out
        assert "recall@10=" in out and "cmp=" in out
        assert main(stage_args("bench", pipeline_dir, synthetic_queries=50,
                               target_recall=0.9)) == 0
        assert main(stage_args("analyze", pipeline_dir, synthetic_queries=50,
                               reports="probing-waste,long-tail,replica",
                               b_list="4,2")) == 0
        for name in ("index.lira", "model.lirm", "index-redundant.lira",
                     "convergence.csv", "sweep.csv", "per_query.csv",
                     "per_query_sample.csv", "probing_waste.csv",
                     "probing_waste_cdf.csv", "long_tail.csv",
                     "replica_recall.csv", "replica_hit_rate.csv",
                     "dataset.fvecs", "queries.fvecs"):
            assert (pipeline_dir / name).exists(), name

    def test_groundtruth_cache_hit_on_second_run(self, tmp_path, capsys):
        assert main(stage_args("groundtruth", tmp_path, synthetic_queries=20)) == 0
        assert "computed" in capsys.readouterr().out
        assert main(stage_args("groundtruth", tmp_path, synthetic_queries=20)) == 0
        assert "cache hit" in capsys.readouterr().out

    def test_query_defaults_to_sigma_half(self, pipeline_dir, capsys):
        assert main(stage_args("query", pipeline_dir, synthetic_queries=20)) == 0
        assert "lira_sigma(0.5)" in capsys.readouterr().out

    def test_query_ivf_method(self, pipeline_dir, capsys):
        assert main(stage_args("query", pipeline_dir, synthetic_queries=20,
                               method="ivf", nprobe=2)) == 0
        assert "ivf(2)" in capsys.readouterr().out

    def test_query_fuzzy_method(self, pipeline_dir, capsys):
        assert main(stage_args("query", pipeline_dir, synthetic_queries=20,
                               method="fuzzy", nprobe=2)) == 0
        assert "ivf(2)" in capsys.readouterr().out


class TestIdempotence:
    def test_build_twice_byte_identical(self, tmp_path):
        assert main(stage_args("build", tmp_path, n_partitions=4)) == 0
        first = (tmp_path / "index.lira").read_bytes()
        assert main(stage_args("build", tmp_path, n_partitions=4)) == 0
        assert (tmp_path / "index.lira").read_bytes() == first

    def test_train_twice_byte_identical(self, tmp_path):
        assert main(stage_args("build", tmp_path, n_partitions=4)) == 0
        assert main(stage_args("train", tmp_path, epochs=2, batch_size=128)) == 0
        first = (tmp_path / "model.lirm").read_bytes()
        assert main(stage_args("train", tmp_path, epochs=2, batch_size=128)) == 0
        assert (tmp_path / "model.lirm").read_bytes() == first

    def test_convergence_csv_reproducible(self, tmp_path):
        assert main(stage_args("build", tmp_path, n_partitions=4)) == 0
        assert main(stage_args("train", tmp_path, epochs=2, batch_size=128)) == 0
        first = (tmp_path / "convergence.csv").read_bytes()
        assert main(stage_args("train", tmp_path, epochs=2, batch_size=128)) == 0
        assert (tmp_path / "convergence.csv").read_bytes() == first


class TestArgumentHandling:
    def test_help_exits_zero_and_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit) as exit_info:
            main(["--help"])
        assert exit_info.value.code == 0
        out = capsys.readouterr().out
        for sub in ("groundtruth", "build", "train", "redundancy", "query",
                    "bench", "analyze"):
            assert sub in out

    def test_subcommand_help_carries_defaults(self, capsys):
        with pytest.raises(SystemExit) as exit_info:
            main(["build", "--help"])
        assert exit_info.value.code == 0
        out = capsys.readouterr().out
        assert "default 64" in out and "default 25" in out

    def test_data_and_synthetic_are_exclusive(self, tmp_path, capsys):
        code = main(stage_args("build", tmp_path, data="nowhere.fvecs"))
        assert code == 1
        assert "exactly one" in capsys.readouterr().err

    def test_bad_synthetic_spec(self, tmp_path, capsys):
        code = main(["build", "--out-dir", str(tmp_path), "--synthetic", "1,2"])
        assert code == 1
        assert "N,D,CLUSTERS,SPREAD" in capsys.readouterr().err

    def test_env_var_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("LIRA_OUT_DIR", str(tmp_path / "from_env"))
        assert main(["build", "--synthetic", SYNTH, "--k", "10",
                     "--n-partitions", "4"]) == 0
        assert (tmp_path / "from_env" / "index.lira").exists()

    def test_threads_flag_runs(self, tmp_path):
        assert main(stage_args("build", tmp_path, n_partitions=4,
                               threads=1)) == 0


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "lira.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "groundtruth" in proc.stdout

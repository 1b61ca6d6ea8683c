import filecmp
import json
import shutil
from pathlib import Path

import pytest

from cen.cli import main
from cen.evolution import gen_dir

from conftest import small_config_dict, write_config


def run_cli(*args) -> int:
    return main(list(args))


class TestSynth:
    def test_writes_csvs_and_sidecar(self, tmp_path, config_path, capsys):
        out = tmp_path / "data"
        assert run_cli("synth", "--config", str(config_path), "--out", str(out)) == 0
        assert (out / "train.csv").exists()
        assert (out / "test.csv").exists()
        sidecar = json.loads((out / "dataset.json").read_text())
        assert set(sidecar) == {"l1", "lk", "d", "seed", "sigma", "identities"}
        assert (out / "config.json").exists()

    def test_same_config_twice_identical_files(self, tmp_path, config_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli("synth", "--config", str(config_path), "--out", str(a)) == 0
        assert run_cli("synth", "--config", str(config_path), "--out", str(b)) == 0
        for name in ("train.csv", "test.csv", "dataset.json", "config.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_seed_override_changes_only_dataset(self, tmp_path, config_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli("synth", "--config", str(config_path), "--out", str(a))
        run_cli(
            "synth", "--config", str(config_path), "--out", str(b),
            "--override", "data.seed=7",
        )
        assert (a / "train.csv").read_bytes() != (b / "train.csv").read_bytes()
        ca = json.loads((a / "config.json").read_text())
        cb = json.loads((b / "config.json").read_text())
        assert ca["run"] == cb["run"]
        assert ca["data"]["seed"] == 0 and cb["data"]["seed"] == 7

    def test_missing_key_names_it(self, tmp_path, capsys):
        doc = small_config_dict()
        del doc["data"]["noise_sigma"]
        cfg = write_config(tmp_path, doc, "bad.json")
        assert run_cli("synth", "--config", str(cfg), "--out", str(tmp_path / "o")) == 1
        assert "noise_sigma" in capsys.readouterr().err

    def test_refuses_existing_output_without_force(self, tmp_path, config_path, capsys):
        out = tmp_path / "data"
        assert run_cli("synth", "--config", str(config_path), "--out", str(out)) == 0
        assert run_cli("synth", "--config", str(config_path), "--out", str(out)) == 1
        assert "--force" in capsys.readouterr().err
        assert run_cli("synth", "--config", str(config_path), "--out", str(out), "--force") == 0


class TestEvolve:
    def test_single_generation_log(self, tmp_path, config_path):
        out = tmp_path / "run"
        code = run_cli(
            "evolve", "--config", str(config_path), "--out", str(out),
            "--override", "run.generations=1",
        )
        assert code == 0
        lines = (out / "run_log.csv").read_text().splitlines()
        assert len(lines) == 2 and lines[1].startswith("1,")

    def test_resume_completes_interrupted_run(self, tmp_path, config_path):
        full = tmp_path / "full"
        assert run_cli("evolve", "--config", str(config_path), "--out", str(full)) == 0

        part = tmp_path / "part"
        part.mkdir()
        shutil.copy(full / "config.json", part / "config.json")
        shutil.copytree(gen_dir(full, 1), gen_dir(part, 1))
        log = (full / "run_log.csv").read_text().splitlines()
        (part / "run_log.csv").write_text("\n".join(log[:2]) + "\n")

        assert run_cli("evolve", "--config", str(config_path), "--out", str(part), "--resume") == 0
        cmp = filecmp.dircmp(full, part)

        def assert_same(c):
            assert not c.diff_files and not c.left_only and not c.right_only
            for sub in c.subdirs.values():
                assert_same(sub)

        assert_same(cmp)

    def test_resume_with_changed_config_rejected(self, tmp_path, config_path):
        out = tmp_path / "run"
        assert run_cli("evolve", "--config", str(config_path), "--out", str(out)) == 0
        code = run_cli(
            "evolve", "--config", str(config_path), "--out", str(out),
            "--resume", "--override", "run.tau=3.0",
        )
        assert code == 1

    def test_rerun_from_config_copy_reproduces_run(self, tmp_path, config_path):
        first = tmp_path / "first"
        assert run_cli(
            "evolve", "--config", str(config_path), "--out", str(first),
            "--override", "run.tau=3.0",
        ) == 0
        second = tmp_path / "second"
        assert run_cli("evolve", "--config", str(first / "config.json"), "--out", str(second)) == 0
        cmp = filecmp.dircmp(first, second)

        def assert_same(c):
            assert not c.diff_files and not c.left_only and not c.right_only
            for sub in c.subdirs.values():
                assert_same(sub)

        assert_same(cmp)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergent_config_exits_2(self, tmp_path, config_path, capsys):
        out = tmp_path / "run"
        code = run_cli(
            "evolve", "--config", str(config_path), "--out", str(out),
            "--override", "run.lr=1000000.0",
        )
        assert code == 2
        err = capsys.readouterr().err
        assert "divergence" in err and "epoch" in err


class TestTrain:
    def test_trains_one_generation_regardless_of_config(self, tmp_path, config_path):
        out = tmp_path / "run"
        assert run_cli("train", "--config", str(config_path), "--out", str(out)) == 0
        lines = (out / "run_log.csv").read_text().splitlines()
        assert len(lines) == 2
        assert json.loads((out / "config.json").read_text())["run"]["generations"] == 1


class TestEvalAndDump:
    @pytest.fixture
    def finished_run(self, tmp_path, config_path):
        out = tmp_path / "run"
        assert run_cli("evolve", "--config", str(config_path), "--out", str(out)) == 0
        return out

    def test_eval_matches_run_log(self, tmp_path, config_path, finished_run, capsys):
        assert run_cli("eval", "--config", str(config_path), "--out", str(finished_run)) == 0
        blocks = capsys.readouterr().out.strip().split("\n\n")
        log_lines = (finished_run / "run_log.csv").read_text().splitlines()[1:]
        assert len(blocks) == len(log_lines)
        for block, row in zip(blocks, log_lines):
            kv = dict(line.split("=", 1) for line in block.splitlines())
            cells = row.split(",")
            assert int(kv["generation"]) == int(cells[0])
            assert float(kv["mae"]) == float(cells[2])
            assert float(kv["ca3"]) == float(cells[3])
            assert float(kv["ca5"]) == float(cells[4])
            assert float(kv["ca7"]) == float(cells[5])

    def test_eval_missing_run_dir_exits_3(self, tmp_path, config_path):
        assert run_cli("eval", "--config", str(config_path), "--out", str(tmp_path / "nope")) == 3

    def test_dump_dist_writes_per_generation_csvs(self, config_path, finished_run):
        assert run_cli("dump-dist", "--config", str(config_path), "--out", str(finished_run)) == 0
        doc = json.loads((finished_run / "config.json").read_text())
        k = doc["data"]["lk"] - doc["data"]["l1"] + 1
        for t in range(1, doc["run"]["generations"] + 1):
            path = gen_dir(finished_run, t) / "dist.csv"
            lines = path.read_text().splitlines()
            assert lines[0].split(",")[:5] == ["sample_id", "true_age", "y_ldl", "y_reg", "y_fused"]
            assert len(lines[0].split(",")) == 5 + k
            assert len(lines) == 1 + doc["data"]["n_test"]


class TestAblate:
    def test_grid_of_one_equals_plain_evolve(self, tmp_path):
        doc = small_config_dict()
        doc["ablate"] = {"grid": {"run.tau": [2.0]}}
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "ablation"
        assert run_cli("ablate", "--config", str(cfg), "--out", str(out)) == 0

        plain_doc = small_config_dict()
        plain_cfg = write_config(tmp_path, plain_doc, "plain.json")
        plain_out = tmp_path / "plain"
        assert run_cli("evolve", "--config", str(plain_cfg), "--out", str(plain_out)) == 0
        assert (out / "grid_000" / "run_log.csv").read_bytes() == (
            plain_out / "run_log.csv"
        ).read_bytes()

    def test_tau_grid_emits_one_row_each(self, tmp_path):
        doc = small_config_dict()
        doc["run"]["epochs"] = 1
        doc["ablate"] = {"grid": {"run.tau": [1.0, 2.0, 3.0, 4.0]}}
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "ablation"
        assert run_cli("ablate", "--config", str(cfg), "--out", str(out)) == 0
        lines = (out / "summary.csv").read_text().splitlines()
        assert lines[0] == "run,run.tau,t,train_loss,test_mae,ca3,ca5,ca7,mean_slack"
        assert len(lines) == 5

    def test_summary_rows_equal_last_log_rows(self, tmp_path):
        doc = small_config_dict()
        doc["run"]["epochs"] = 1
        doc["ablate"] = {"grid": {"run.alpha": [0.25, 0.75]}}
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "ablation"
        assert run_cli("ablate", "--config", str(cfg), "--out", str(out)) == 0
        summary = (out / "summary.csv").read_text().splitlines()[1:]
        for i, row in enumerate(summary):
            run_dir = out / f"grid_{i:03d}"
            last = (run_dir / "run_log.csv").read_text().splitlines()[-1]
            assert row.endswith(last)
            assert row.startswith(f"grid_{i:03d},")


class TestUsageErrors:
    def test_unknown_command_is_config_error(self, capsys):
        assert run_cli("frobnicate", "--config", "x", "--out", "y") == 1

    def test_missing_config_file(self, tmp_path, capsys):
        assert run_cli("evolve", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")) == 1

    def test_unknown_section_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {**small_config_dict(), "bogus": {}})
        assert run_cli("evolve", "--config", str(cfg), "--out", str(tmp_path / "o")) == 1
        assert "bogus" in capsys.readouterr().err

    def test_csv_source_with_missing_file_exits_3(self, tmp_path):
        doc = small_config_dict()
        doc["data"].update({"source": "csv", "train_csv": str(tmp_path / "a.csv"), "test_csv": str(tmp_path / "b.csv")})
        cfg = write_config(tmp_path, doc)
        assert run_cli("evolve", "--config", str(cfg), "--out", str(tmp_path / "o")) == 3

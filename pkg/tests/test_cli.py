import json

import numpy as np
import pytest

from distillsearch import corpus, distill, nn
from distillsearch.archspace import ArchConfig
from distillsearch.cli import main

TINY_TEACHER = ArchConfig(layers=1, hidden=16, heads=2, ffn=32, vocab=300,
                          max_seq_len=32, num_classes=2)


@pytest.fixture
def small_corpus_dir(tmp_path):
    """Artifact dir pre-seeded with a small corpus so commands run fast."""
    spec = corpus.SyntheticTaskSpec(vocab_size=300, n_labeled=300, n_unlabeled=300,
                                    n_val=120, n_test=120, rng_seed=0)
    corpus.save_corpus(corpus.generate(spec), tmp_path)
    return tmp_path


def run(out, *argv):
    return main(["--out", str(out), *argv])


class TestEstimate:
    def test_reference_megabytes(self, tmp_path, capsys):
        assert run(tmp_path, "estimate", "reference") == 0
        est = json.loads(capsys.readouterr().out)
        assert abs(est["megabytes"] - 476) / 476 < 0.03

    def test_off_grid_config_exit_2(self, tmp_path):
        cfg = ArchConfig(layers=1, hidden=24, heads=1, ffn=32, vocab=1000)
        path = tmp_path / "bad.json"
        path.write_text(cfg.to_json())
        assert run(tmp_path, "estimate", str(path), "--space", "table1") == 2

    def test_seq_len_changes_gflops_not_megabytes(self, tmp_path, capsys):
        cfg = ArchConfig(layers=2, hidden=64, heads=2, ffn=128, vocab=1000)
        path = tmp_path / "cfg.json"
        path.write_text(cfg.to_json())
        run(tmp_path, "estimate", str(path), "--seq-len", "100")
        a = json.loads(capsys.readouterr().out)
        run(tmp_path, "estimate", str(path), "--seq-len", "400")
        b = json.loads(capsys.readouterr().out)
        assert a["megabytes"] == b["megabytes"]
        assert a["gflops"] < b["gflops"]

    def test_missing_config_exit_3(self, tmp_path):
        assert run(tmp_path, "estimate", str(tmp_path / "nope.json")) == 3


class TestSearch:
    def test_writes_artifacts_and_hits_band(self, tmp_path):
        assert run(tmp_path, "--seed", "0", "search", "--target-mb", "3") == 0
        result = json.loads((tmp_path / "ga_result.json").read_text())
        assert 2.8 <= result["size_mb"] <= 3.2
        assert result["seed"] == 0
        arch = json.loads((tmp_path / "arch.json").read_text())
        assert set(arch) == {"layers", "hidden", "heads", "ffn", "vocab",
                             "max_seq_len", "num_classes"}

    def test_nonpositive_target_exit_2(self, tmp_path):
        assert run(tmp_path, "search", "--target-mb", "0") == 2


class TestPipelineCommands:
    def test_distill_without_capture_exit_3(self, small_corpus_dir):
        assert run(small_corpus_dir, "distill") == 3

    def test_capture_without_teacher_exit_3(self, small_corpus_dir):
        assert run(small_corpus_dir, "capture") == 3

    def test_teach_capture_distill_chain(self, small_corpus_dir):
        out = small_corpus_dir
        cfg_path = out / "teacher_cfg.json"
        cfg_path.write_text(TINY_TEACHER.to_json())
        assert run(out, "--seed", "1", "teach", "--config", str(cfg_path),
                   "--epochs", "2") == 0
        assert (out / "teacher.ckpt").exists()
        assert run(out, "--seed", "1", "capture") == 0
        assert (out / "logits.ldst").exists()
        student = out / "student_cfg.json"
        student.write_text(ArchConfig(layers=1, hidden=16, heads=2, ffn=32,
                                      vocab=300, max_seq_len=32).to_json())
        assert run(out, "--seed", "1", "distill", "--student-config", str(student),
                   "--epochs", "2") == 0
        assert (out / "student.ckpt").exists()

        report = json.loads((out / "report.json").read_text())
        assert report["distill"]["temperature"] == 2.0
        assert report["distill"]["lr"] == 1e-3
        assert report["distill"]["seed"] == 1
        assert report["teach"]["val_accuracy"] >= 0.0

    def test_capture_count_matches_unlabeled(self, small_corpus_dir):
        out = small_corpus_dir
        nn.save_checkpoint(nn.init(TINY_TEACHER, 0), out / "teacher.ckpt")
        assert run(out, "capture") == 0
        data = distill.LogitDataset.load(out / "logits.ldst")
        assert len(data) == 300


class TestBench:
    def test_protocol_shape(self, small_corpus_dir):
        out = small_corpus_dir
        nn.save_checkpoint(nn.init(TINY_TEACHER, 0), out / "teacher.ckpt")
        nn.save_checkpoint(
            nn.init(ArchConfig(layers=1, hidden=8, heads=1, ffn=16, vocab=300,
                               max_seq_len=32), 1),
            out / "student.ckpt")
        assert run(out, "bench", "--n", "20", "--repeats", "3") == 0
        report = json.loads((out / "report.json").read_text())["bench"]
        assert report["repeats"] == 3
        for model in report["models"].values():
            assert len(model["per_repeat_mean_s"]) == 3
        assert "latency_ratio" in report

    def test_missing_checkpoint_exit_3(self, small_corpus_dir):
        assert run(small_corpus_dir, "bench") == 3


class TestReport:
    def test_report_lists_commands(self, tmp_path, capsys):
        run(tmp_path, "--seed", "0", "search", "--target-mb", "3",
            "--iterations", "2", "--population", "5", "--child-size", "5")
        capsys.readouterr()
        assert run(tmp_path, "report") == 0
        doc = json.loads(capsys.readouterr().out)
        assert "search" in doc
        assert doc["search"]["seed"] == 0

    def test_report_without_runs_exit_3(self, tmp_path):
        assert run(tmp_path, "report") == 3

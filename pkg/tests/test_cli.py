import csv
import json
from pathlib import Path

import numpy as np
import pytest

from panoctx.cli import EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE, main
from panoctx.formats import load_label_map, load_tensors, save_tensors
from panoctx.tensor import Tensor

FIXTURE = Path(__file__).parent / "fixtures" / "fusion2head"


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestBench:
    def test_default_grid_reports_flagship_figures(self, tmp_path):
        out = tmp_path / "bench"
        code = main(["bench", "--out", str(out), "--no-figures"])
        assert code == EXIT_OK
        rows = read_csv(out / "bench.csv")
        by_config = {r["config"]: r for r in rows}
        assert by_config["nonlocal"]["analytic_entries"] == "67108864"
        assert by_config["nonlocal"]["measured_entries"] == "67108864"
        assert by_config["hsa_nopool[N=4]"]["measured_entries"] == "16777216"
        assert by_config["hsa[N=4,pool=2x16]"]["measured_entries"] == "262144"
        report = json.loads((out / "bench.json").read_text())
        assert report["all_match"] is True
        # big nonlocal map is memory-gated into counting mode
        modes = {r["config"]: r["mode"] for r in report["rows"]}
        assert modes["nonlocal"] == "counting"

    def test_small_shape_materializes_and_matches(self, tmp_path):
        out = tmp_path / "bench"
        code = main(["bench", "--shapes", "8x16", "--pool", "2x4",
                     "--out", str(out), "--no-figures"])
        assert code == EXIT_OK
        report = json.loads((out / "bench.json").read_text())
        assert all(r["mode"] == "materialized" for r in report["rows"])
        assert all(r["match"] for r in report["rows"])

    def test_reports_are_byte_identical_across_runs(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(["bench", "--shapes", "8x16,16x32", "--pool", "2x4",
                         "--seed", "7", "--out", str(out), "--no-figures"]) == EXIT_OK
        assert (out1 / "bench.csv").read_bytes() == (out2 / "bench.csv").read_bytes()
        assert (out1 / "bench.json").read_bytes() == (out2 / "bench.json").read_bytes()

    def test_empty_grid_is_usage_error(self, tmp_path):
        assert main(["bench", "--shapes", "", "--out", str(tmp_path / "x"),
                     "--no-figures"]) == EXIT_USAGE

    def test_unwritable_out_is_io_error(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("data")
        code = main(["bench", "--shapes", "8x16", "--pool", "2x4",
                     "--out", str(blocker / "nested"), "--no-figures"])
        assert code == EXIT_USAGE

    def test_figures_rendered_by_default(self, tmp_path):
        out = tmp_path / "bench"
        assert main(["bench", "--shapes", "8x16", "--pool", "2x4",
                     "--out", str(out)]) == EXIT_OK
        assert (out / "bench.png").stat().st_size > 0

    def test_weight_reuse_reproduces_counts_and_dump(self, tmp_path):
        out1 = tmp_path / "a"
        dump = tmp_path / "head.bin"
        assert main(["bench", "--shapes", "8x16", "--pool", "2x4", "--seed", "3",
                     "--dump-weights", str(dump), "--out", str(out1),
                     "--no-figures"]) == EXIT_OK
        out2 = tmp_path / "b"
        assert main(["bench", "--shapes", "8x16", "--pool", "2x4", "--seed", "99",
                     "--weights", str(dump), "--out", str(out2),
                     "--no-figures"]) == EXIT_OK
        assert (out1 / "bench.csv").read_bytes() == (out2 / "bench.csv").read_bytes()

    def test_config_file_merge_and_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("shapes = 8x16\npool = 2x4\nseed = 5\n")
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["bench", "--config", str(cfg), "--out", str(out1),
                     "--no-figures"]) == EXIT_OK
        # flag overrides the file value
        assert main(["bench", "--config", str(cfg), "--shapes", "16x32",
                     "--out", str(out2), "--no-figures"]) == EXIT_OK
        assert read_csv(out1 / "bench.csv")[0]["he"] == "8"
        assert read_csv(out2 / "bench.csv")[0]["he"] == "16"

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("bogus = 1\n")
        assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / "x"),
                     "--no-figures"]) == EXIT_USAGE


class TestGradcheck:
    def test_single_op_passes(self, tmp_path, capsys):
        out = tmp_path / "gc"
        code = main(["gradcheck", "--ops", "softmax", "--seeds", "2",
                     "--out", str(out), "--no-figures"])
        assert code == EXIT_OK
        stdout = capsys.readouterr().out
        assert "gradcheck softmax: PASS" in stdout
        report = json.loads((out / "gradcheck.json").read_text())
        assert [r["op"] for r in report["results"]] == ["softmax"]
        assert report["all_passed"] is True

    def test_default_op_set_passes(self, tmp_path, capsys):
        out = tmp_path / "gc"
        code = main(["gradcheck", "--seeds", "1", "--out", str(out), "--no-figures"])
        assert code == EXIT_OK
        stdout = capsys.readouterr().out
        for op in ["matmul", "softmax", "pool", "project", "split", "concat",
                   "hsa", "psa", "nonlocal", "head"]:
            assert f"gradcheck {op}: PASS" in stdout

    def test_impossible_tolerance_fails(self, tmp_path, capsys):
        code = main(["gradcheck", "--ops", "matmul", "--seeds", "1",
                     "--tol", "1e-12", "--out", str(tmp_path / "gc"),
                     "--no-figures"])
        assert code == EXIT_CHECK_FAILED
        assert "FAIL" in capsys.readouterr().out

    def test_unknown_op_is_usage_error(self, tmp_path):
        assert main(["gradcheck", "--ops", "nosuch", "--out", str(tmp_path / "gc"),
                     "--no-figures"]) == EXIT_USAGE

    def test_deterministic_report(self, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            assert main(["gradcheck", "--ops", "matmul,softmax", "--seeds", "2",
                         "--seed", "11", "--out", str(out), "--no-figures"]) == EXIT_OK
        assert (outs[0] / "gradcheck.json").read_bytes() == \
               (outs[1] / "gradcheck.json").read_bytes()

    def test_figure_rendered(self, tmp_path):
        out = tmp_path / "gc"
        assert main(["gradcheck", "--ops", "softmax", "--seeds", "1",
                     "--out", str(out)]) == EXIT_OK
        assert (out / "gradcheck.png").stat().st_size > 0


class TestFuse:
    def test_single_volume_refines_nothing(self, tmp_path):
        out = tmp_path / "fuse"
        code = main(["fuse", "--volumes", str(FIXTURE / "alpha.bin"),
                     "--strategy", "min-variance", "--out", str(out),
                     "--no-figures"])
        assert code == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert summary["refined_fraction"] == 0.0
        assert summary["volumes"] == ["alpha"]

    def test_fixture_matches_oracle_rasters_byte_for_byte(self, tmp_path):
        out = tmp_path / "fuse"
        code = main(["fuse",
                     "--volumes", f"{FIXTURE / 'alpha.bin'},{FIXTURE / 'beta.bin'}",
                     "--strategy", "min-variance", "--default-head", "0",
                     "--out", str(out), "--no-figures"])
        assert code == EXIT_OK
        expected = FIXTURE / "expected"
        for name in ["fused_labels.bin", "fused_labels.json",
                     "refined_mask.bin", "refined_mask.json", "uncertainty.f64"]:
            assert (out / name).read_bytes() == (expected / name).read_bytes(), name
        summary = json.loads((out / "summary.json").read_text())
        assert summary["refined_pixels"] == 48
        assert summary["intersection"] == ["car", "road"]
        histogram_total = sum(summary["histogram"].values())
        assert histogram_total == 16 * 16

    def test_strategy_typo_lists_valid_choices(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["fuse", "--volumes", "x.bin", "--strategy", "max-prob"])
        assert exc.value.code == 2
        err = capsys.readouterr().err
        for name in ("min-variance", "max-probability", "calibrated-ratio"):
            assert name in err

    def test_missing_volumes_flag(self, tmp_path):
        assert main(["fuse", "--out", str(tmp_path / "f"),
                     "--no-figures"]) == EXIT_USAGE

    def test_figures_rendered(self, tmp_path):
        out = tmp_path / "fuse"
        assert main(["fuse",
                     "--volumes", f"{FIXTURE / 'alpha.bin'},{FIXTURE / 'beta.bin'}",
                     "--strategy", "calibrated-ratio",
                     "--out", str(out)]) == EXIT_OK
        assert (out / "fused_labels.png").stat().st_size > 0
        assert (out / "uncertainty.png").stat().st_size > 0


class TestDistill:
    def panorama(self, tmp_path, data):
        path = tmp_path / "pano.bin"
        save_tensors(path, {"image": Tensor(data)})
        return path

    def test_identity_stub_single_offset_is_plain_prediction(self, tmp_path):
        rng = np.random.default_rng(0)
        data = rng.standard_normal((3, 4, 8))
        path = self.panorama(tmp_path, data)
        out = tmp_path / "distill"
        code = main(["distill", "--input", str(path), "--stub", "identity",
                     "--offsets", "0", "--out", str(out), "--no-figures"])
        assert code == EXIT_OK
        labels = load_label_map(out / "pseudo_labels.bin")
        assert np.array_equal(labels.indices, data.argmax(axis=0))

    def test_equivariant_stub_full_agreement(self, tmp_path):
        rng = np.random.default_rng(1)
        path = self.panorama(tmp_path, rng.standard_normal((3, 4, 8)))
        out = tmp_path / "distill"
        code = main(["distill", "--input", str(path), "--stub", "identity",
                     "--offsets", "0,4", "--out", str(out), "--no-figures"])
        assert code == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert summary["agreement"] == {"0": 1.0, "4": 1.0}

    def test_window_zero_hand_fixture(self, tmp_path):
        # channels double as classes: identity logits with column 0 zeroed
        data = np.array([[[1.0, -2.0, 3.0, -4.0]],
                         [[-1.0, 2.0, -3.0, 4.0]]])
        path = self.panorama(tmp_path, data)
        out = tmp_path / "distill"
        code = main(["distill", "--input", str(path), "--stub", "window-zero",
                     "--offsets", "0,2", "--out", str(out), "--no-figures"])
        assert code == EXIT_OK
        labels = load_label_map(out / "pseudo_labels.bin")
        assert labels.indices[0].tolist() == [0, 1, 0, 1]
        mean = load_tensors(out / "ensemble_logits.bin")["logits"]
        assert mean.data[0, 0].tolist() == [0.5, -2.0, 1.5, -4.0]
        assert mean.data[1, 0].tolist() == [-0.5, 2.0, -1.5, 4.0]

    def test_offset_beyond_width_is_usage_error(self, tmp_path):
        rng = np.random.default_rng(2)
        path = self.panorama(tmp_path, rng.standard_normal((2, 2, 4)))
        assert main(["distill", "--input", str(path), "--offsets", "0,4",
                     "--out", str(tmp_path / "d"), "--no-figures"]) == EXIT_USAGE

    def test_default_offsets_are_quarter_turns(self, tmp_path):
        rng = np.random.default_rng(3)
        path = self.panorama(tmp_path, rng.standard_normal((2, 2, 16)))
        out = tmp_path / "distill"
        assert main(["distill", "--input", str(path), "--stub", "columnwise",
                     "--out", str(out), "--no-figures"]) == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert summary["offsets"] == [0, 4, 8, 12]

    def test_columnwise_stub_deterministic_given_seed(self, tmp_path):
        rng = np.random.default_rng(4)
        path = self.panorama(tmp_path, rng.standard_normal((2, 3, 8)))
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            assert main(["distill", "--input", str(path), "--stub", "columnwise",
                         "--seed", "21", "--out", str(out), "--no-figures"]) == EXIT_OK
        assert (outs[0] / "pseudo_labels.bin").read_bytes() == \
               (outs[1] / "pseudo_labels.bin").read_bytes()
        assert (outs[0] / "summary.json").read_bytes() == \
               (outs[1] / "summary.json").read_bytes()

    def test_figures_rendered(self, tmp_path):
        rng = np.random.default_rng(5)
        path = self.panorama(tmp_path, rng.standard_normal((2, 3, 8)))
        out = tmp_path / "distill"
        assert main(["distill", "--input", str(path), "--stub", "columnwise",
                     "--out", str(out)]) == EXIT_OK
        assert (out / "pseudo_labels.png").stat().st_size > 0

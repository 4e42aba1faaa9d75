import csv
import json

import numpy as np
import pytest

from diffuseslide.cli import main
from diffuseslide.tensor_io import read_tensor

SMALL = [
    "--n-videos", "2", "--n-keyframes", "6", "--factor", "2",
    "--height", "8", "--width", "8", "--rank", "3",
    "--tau", "4", "--delta", "2", "--m-iters", "2",
    "--window", "6", "--stride", "2",
]


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture()
def corpus(tmp_path):
    out = tmp_path / "corpus"
    assert run_cli("synth", "--out", str(out), *SMALL) == 0
    return out


class TestSynth:
    def test_writes_manifest_and_tensors(self, corpus):
        manifest = json.loads((corpus / "manifest.json").read_text())
        assert len(manifest["items"]) == 2
        assert manifest["spec"]["n_videos"] == 2
        assert (corpus / "low_0000.lvt").exists()
        assert (corpus / "truth_0001.lvt").exists()

    def test_config_file_equivalent(self, tmp_path):
        cfg = {
            "n_videos": 2, "n_keyframes": 6, "factor": 2, "height": 8,
            "width": 8, "rank": 3, "tau": 4, "delta": 2, "m_iters": 2,
            "window": 6, "stride": 2,
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert run_cli("synth", "--out", str(out_a), "--config", str(cfg_path)) == 0
        assert run_cli("synth", "--out", str(out_b), *SMALL) == 0
        a = (out_a / "low_0000.lvt").read_bytes()
        b = (out_b / "low_0000.lvt").read_bytes()
        assert a == b

    def test_unknown_config_key_is_usage_error(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"frobnicate": 1}))
        code = run_cli(
            "synth", "--out", str(tmp_path / "x"), "--config", str(cfg_path), "--json"
        )
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "usage"
        assert "frobnicate" in err["message"]


class TestRunFlow:
    def test_run_writes_tensor_trace_meta(self, tmp_path, corpus):
        out = tmp_path / "runs"
        assert run_cli("run", "--corpus", str(corpus), "--out", str(out), *SMALL) == 0
        for i in range(2):
            assert (out / f"item_{i:04d}.lvt").exists()
            trace = json.loads((out / f"trace_{i:04d}.json").read_text())
            assert trace["trace"]["denoise_rounds"] == (4 - 2) * (2 + 1) + 2
            assert trace["config"]["tau"] == 4
            meta = json.loads((out / f"item_{i:04d}.meta.json").read_text())
            assert meta["method"] == "diffuseslide"
            assert meta["config"]["window"] == 6

    def test_rerun_is_bitwise_identical(self, tmp_path, corpus):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            assert run_cli(
                "run", "--corpus", str(corpus), "--out", str(out), "--item", "0", *SMALL
            ) == 0
        assert (out_a / "item_0000.lvt").read_bytes() == (out_b / "item_0000.lvt").read_bytes()

    def test_worker_count_does_not_change_output(self, tmp_path, corpus):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert run_cli(
            "run", "--corpus", str(corpus), "--out", str(out_a), "--item", "0", *SMALL
        ) == 0
        assert run_cli(
            "run", "--corpus", str(corpus), "--out", str(out_b), "--item", "0",
            "--threads", "3", *SMALL,
        ) == 0
        assert (out_a / "item_0000.lvt").read_bytes() == (out_b / "item_0000.lvt").read_bytes()

    def test_bad_item_is_usage_error(self, tmp_path, corpus):
        code = run_cli(
            "run", "--corpus", str(corpus), "--out", str(tmp_path / "x"),
            "--item", "9", *SMALL,
        )
        assert code == 1

    def test_missing_corpus_is_runtime_error(self, tmp_path):
        code = run_cli(
            "run", "--corpus", str(tmp_path / "absent"), "--out", str(tmp_path / "x"),
        )
        assert code == 2


class TestInterpAndEval:
    def test_interp_then_eval_hits_psnr_cap(self, tmp_path, corpus):
        interp_dir = tmp_path / "interp"
        eval_dir = tmp_path / "eval"
        assert run_cli("interp", "--corpus", str(corpus), "--out", str(interp_dir), *SMALL) == 0
        assert run_cli(
            "eval", "--corpus", str(corpus), "--candidates", str(interp_dir),
            "--out", str(eval_dir), *SMALL,
        ) == 0
        report = json.loads((eval_dir / "metrics_0000.json").read_text())
        assert report["psnr_keyframes"] == 99.0
        with open(eval_dir / "aggregate.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["seed"] for r in rows] == ["0", "1"]
        assert set(rows[0]) == {
            "seed", "factor", "psnr_keyframes", "ssim_keyframes",
            "psnr_vs_truth", "manifold_residual", "wall_ms",
        }

    def test_keyframes_command(self, tmp_path, corpus):
        out = tmp_path / "kf"
        assert run_cli(
            "keyframes", "--corpus", str(corpus), "--out", str(out), "--item", "0", *SMALL
        ) == 0
        kf = read_tensor(out / "item_0000.lvt")
        assert kf.shape == (1, 6, 8, 8)


class TestCompare:
    def test_ranked_table_and_ordering(self, tmp_path, capsys):
        corpus = tmp_path / "corpus"
        out = tmp_path / "cmp"
        assert run_cli(
            "compare", "--corpus", str(corpus), "--out", str(out), "--seeds", "3",
            "--n-keyframes", "6", "--factor", "2", "--height", "8", "--width", "8",
            "--rank", "3", "--tau", "4", "--delta", "2", "--m-iters", "2",
            "--window", "6", "--stride", "2",
        ) == 0
        table = json.loads((out / "compare.json").read_text())
        order = [row["method"] for row in table["summary"]]
        assert order == ["diffuseslide", "interp", "direct"]
        residuals = [row["mean_manifold_residual"] for row in table["summary"]]
        assert residuals[0] < residuals[1] < residuals[2]
        printed = capsys.readouterr().out
        assert "diffuseslide" in printed and "direct" in printed
        with open(out / "compare.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 9  # 3 methods x 3 seeds

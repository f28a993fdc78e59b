"""End-to-end CLI: exit codes, artifacts, byte-level determinism."""

import numpy as np
import pytest

from spgru.cli import main

TINY = """
[data]
frame_size = 12
sprite_size = 6
seq_len = 6
seed = 3

[model]
hidden = 6
input_len = 3
output_len = 3

[train]
steps = 4
batch_size = 3
seed = 1
log_every = 1

[eval]
n_sequences = 4
figures = false
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(TINY)
    return p


def _train(tiny_cfg, out):
    rc = main(["train", "--config", str(tiny_cfg), "--out", str(out)])
    assert rc == 0
    return out / "ckpt_final.bin"


class TestTrain:
    def test_writes_checkpoint_and_log(self, tiny_cfg, tmp_path):
        out = tmp_path / "out"
        ckpt = _train(tiny_cfg, out)
        assert ckpt.exists()
        assert (out / "metrics.log").exists()

    def test_unknown_key_exit_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[train]\nnot_a_key = 1\n")
        rc = main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "not_a_key" in capsys.readouterr().err

    def test_unwritable_out_exit_2(self, tiny_cfg, tmp_path):
        # a file in the path makes the output dir uncreatable, even for root
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        rc = main(["train", "--config", str(tiny_cfg), "--out", str(blocker / "sub")])
        assert rc == 2

    def test_usage_error_exit_1(self):
        assert main(["train", "--bogus-flag"]) == 1

    def test_missing_subcommand_exit_1(self):
        assert main([]) == 1


class TestEvalDeviation:
    def test_tables_written_and_deterministic(self, tiny_cfg, tmp_path):
        ckpt = _train(tiny_cfg, tmp_path / "t")
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            rc = main(["eval-deviation", "--config", str(tiny_cfg),
                       "--checkpoint", str(ckpt), "--suite", "angle",
                       "--out", str(out)])
            assert rc == 0
            outs.append(out)
        files = ["deviation_angle.tsv", "deviation_angle_perframe.tsv",
                 "deviation_angle_persequence.tsv"]
        for f in files:
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
        table = (outs[0] / "deviation_angle.tsv").read_text()
        assert table.count("\n") == 6  # header + 4 levels + verdict
        assert "# monotonic:" in table

    def test_all_suites(self, tiny_cfg, tmp_path):
        ckpt = _train(tiny_cfg, tmp_path / "t")
        rc = main(["eval-deviation", "--config", str(tiny_cfg),
                   "--checkpoint", str(ckpt), "--out", str(tmp_path / "e")])
        assert rc == 0
        for suite in ("angle", "speed", "noise"):
            assert (tmp_path / "e" / f"deviation_{suite}.tsv").exists()

    def test_summary_reconciles_with_per_sequence(self, tiny_cfg, tmp_path):
        ckpt = _train(tiny_cfg, tmp_path / "t")
        out = tmp_path / "e"
        main(["eval-deviation", "--config", str(tiny_cfg), "--checkpoint",
              str(ckpt), "--suite", "speed", "--out", str(out)])
        summary = {}
        for ln in (out / "deviation_speed.tsv").read_text().splitlines()[1:]:
            if ln.startswith("#"):
                continue
            parts = ln.split("\t")
            summary[parts[1]] = float(parts[3])
        per_seq: dict[str, list[float]] = {}
        for ln in (out / "deviation_speed_persequence.tsv").read_text().splitlines()[1:]:
            lev, _, v = ln.split("\t")
            per_seq.setdefault(lev, []).append(float(v))
        for lev, avg in summary.items():
            assert abs(avg - np.mean(per_seq[lev])) < 1e-10

    def test_config_mismatch_exit_1(self, tiny_cfg, tmp_path, capsys):
        ckpt = _train(tiny_cfg, tmp_path / "t")
        other = tmp_path / "other.cfg"
        other.write_text(TINY.replace("hidden = 6", "hidden = 8"))
        rc = main(["eval-deviation", "--config", str(other),
                   "--checkpoint", str(ckpt), "--out", str(tmp_path / "e")])
        assert rc == 1

    def test_untrained_checkpoint_still_evaluates(self, tiny_cfg, tmp_path):
        # random params: metrics produced, verdict not asserted
        from spgru.cell import init_params
        from spgru.checkpoint import save_checkpoint
        from spgru.config import load_config

        cfg = load_config(tiny_cfg)
        params = init_params(9, 6, 144, 1e-3)
        ckpt = tmp_path / "rand.bin"
        save_checkpoint(ckpt, params, cfg.network_config())
        rc = main(["eval-deviation", "--config", str(tiny_cfg),
                   "--checkpoint", str(ckpt), "--suite", "noise",
                   "--out", str(tmp_path / "e")])
        assert rc == 0


class TestExportMaps:
    def test_pgm_count_and_sidecar(self, tiny_cfg, tmp_path):
        ckpt = _train(tiny_cfg, tmp_path / "t")
        out = tmp_path / "maps"
        rc = main(["export-maps", "--config", str(tiny_cfg),
                   "--checkpoint", str(ckpt), "--out", str(out)])
        assert rc == 0
        pgms = sorted(out.glob("*.pgm"))
        assert len(pgms) == 6  # 3 output frames x (mean + variance)
        assert (out / "variance_scale.txt").exists()

    def test_bit_identical_across_runs(self, tiny_cfg, tmp_path):
        ckpt = _train(tiny_cfg, tmp_path / "t")
        blobs = []
        for name in ("m1", "m2"):
            out = tmp_path / name
            main(["export-maps", "--config", str(tiny_cfg),
                  "--checkpoint", str(ckpt), "--out", str(out)])
            blobs.append(b"".join(p.read_bytes() for p in sorted(out.glob("*.pgm"))))
        assert blobs[0] == blobs[1]


class TestOracleCommand:
    def test_too_few_samples_exit_1(self, tmp_path):
        assert main(["oracle", "--n", "100", "--out", str(tmp_path)]) == 1

    def test_small_suite_passes(self, tmp_path):
        rc = main(["oracle", "--n", "200000", "--seed", "0",
                   "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "oracle_report.tsv").exists()

    def test_wrong_constant_exit_3(self, tmp_path):
        cfg = tmp_path / "wrong.cfg"
        cfg.write_text('[model]\nsigmoid_omega = "appendix"\n')
        rc = main(["oracle", "--n", "200000", "--seed", "0",
                   "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 3


class TestGenerate:
    def test_batch_and_checksum_stability(self, tiny_cfg, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            rc = main(["generate", "--config", str(tiny_cfg), "--n", "3",
                       "--out", str(out)])
            assert rc == 0
        assert (a / "batch.dat").read_bytes() == (b / "batch.dat").read_bytes()

    def test_suite_writes_four_batches(self, tiny_cfg, tmp_path):
        out = tmp_path / "s"
        rc = main(["generate", "--config", str(tiny_cfg), "--n", "2",
                   "--suite", "noise", "--out", str(out)])
        assert rc == 0
        assert len(list(out.glob("noise_*.dat"))) == 4

    def test_previews(self, tiny_cfg, tmp_path):
        out = tmp_path / "p"
        rc = main(["generate", "--config", str(tiny_cfg), "--n", "1",
                   "--previews", "--out", str(out)])
        assert rc == 0
        assert len(list(out.glob("preview_*.pgm"))) == 6

    def test_bad_suite_exit_1(self, tiny_cfg, tmp_path):
        rc = main(["generate", "--config", str(tiny_cfg), "--suite", "wobble",
                   "--out", str(tmp_path)])
        assert rc == 1

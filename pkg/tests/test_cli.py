import csv
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from rwlat import (
    LatencyParams,
    TargetSequence,
    ce_auxiliary_loss,
    latency_expectation,
    log_marginal_nll,
    path_delays,
    random_lattice,
    wait_k_path,
)
from rwlat.cli import cli
from rwlat.formats import (
    path_record,
    read_checkpoint,
    write_jsonl,
    write_lattice_jsonl,
)


@pytest.fixture
def runner():
    return CliRunner()


def read_csv_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestLossCommand:
    def test_trivial_single_read_lattice(self, runner, tmp_path, rng):
        lat = random_lattice(1, 0, 3, rng)
        lat_file = str(tmp_path / "lat.jsonl")
        tgt_file = str(tmp_path / "tgt.jsonl")
        out = str(tmp_path / "losses.csv")
        write_lattice_jsonl(lat_file, [lat])
        write_jsonl(tgt_file, [{"tokens": []}])
        result = runner.invoke(cli, ["loss", lat_file, tgt_file, "--out", out])
        assert result.exit_code == 0, result.output
        rows = read_csv_rows(out)
        assert len(rows) == 1
        assert float(rows[0]["nll"]) == pytest.approx(
            -float(lat.logits[0, 0, lat.blank]), rel=1e-12
        )

    def test_matches_library_bit_for_bit(self, runner, tmp_path, rng):
        lats = [random_lattice(3, 2, 4, rng) for _ in range(3)]
        targets = [tuple(int(t) for t in rng.integers(0, 4, size=2)) for _ in range(3)]
        lat_file = str(tmp_path / "lat.jsonl")
        tgt_file = str(tmp_path / "tgt.jsonl")
        out = str(tmp_path / "losses.csv")
        write_lattice_jsonl(lat_file, lats)
        write_jsonl(tgt_file, [{"tokens": list(t)} for t in targets])
        result = runner.invoke(
            cli,
            ["loss", lat_file, tgt_file, "--out", out, "--lambda-latency", "0.5", "--d", "2"],
        )
        assert result.exit_code == 0, result.output
        rows = read_csv_rows(out)
        for row, lat, tokens in zip(rows, lats, targets):
            target = TargetSequence(tokens)
            nll, tables = log_marginal_nll(lat, target)
            params = LatencyParams(src_len=lat.num_decisions * 2, tgt_len=2, d=2)
            expect_lat = latency_expectation(lat, target, params, tables=tables)
            ce = ce_auxiliary_loss(lat, target)
            # repr round-trip: parsed floats are bit-identical to the library's.
            assert float(row["nll"]) == nll
            assert float(row["latency"]) == expect_lat
            assert float(row["ce"]) == ce
            assert float(row["total"]) == nll + 0.5 * expect_lat + 1.0 * ce

    def test_empty_inputs_give_header_only_csv(self, runner, tmp_path):
        lat_file = str(tmp_path / "lat.jsonl")
        tgt_file = str(tmp_path / "tgt.jsonl")
        out = str(tmp_path / "losses.csv")
        open(lat_file, "w").close()
        open(tgt_file, "w").close()
        result = runner.invoke(cli, ["loss", lat_file, tgt_file, "--out", out])
        assert result.exit_code == 0
        content = open(out).read().splitlines()
        assert content == ["sentence_id,nll,latency,ce,total,error"]

    def test_mismatched_target_length_records_error_and_exits_1(
        self, runner, tmp_path, rng
    ):
        lat = random_lattice(2, 1, 3, rng)
        lat_file = str(tmp_path / "lat.jsonl")
        tgt_file = str(tmp_path / "tgt.jsonl")
        out = str(tmp_path / "losses.csv")
        write_lattice_jsonl(lat_file, [lat, lat])
        write_jsonl(tgt_file, [{"tokens": [0]}, {"tokens": [0, 1]}])
        result = runner.invoke(cli, ["loss", lat_file, tgt_file, "--out", out])
        assert result.exit_code == 1
        rows = read_csv_rows(out)
        assert rows[0]["error"] == ""
        assert rows[1]["error"] != ""
        assert rows[1]["nll"] == ""

    def test_malformed_jsonl_exits_2_with_line_number(self, runner, tmp_path):
        lat_file = str(tmp_path / "lat.jsonl")
        tgt_file = str(tmp_path / "tgt.jsonl")
        with open(lat_file, "w") as fh:
            fh.write("{broken\n")
        open(tgt_file, "w").close()
        result = runner.invoke(
            cli, ["loss", lat_file, tgt_file, "--out", str(tmp_path / "x.csv")]
        )
        assert result.exit_code == 2
        assert "line 1" in result.output

    def test_line_count_mismatch_exits_1(self, runner, tmp_path, rng):
        lat_file = str(tmp_path / "lat.jsonl")
        tgt_file = str(tmp_path / "tgt.jsonl")
        write_lattice_jsonl(lat_file, [random_lattice(1, 0, 2, rng)])
        write_jsonl(tgt_file, [{"tokens": []}, {"tokens": []}])
        result = runner.invoke(
            cli, ["loss", lat_file, tgt_file, "--out", str(tmp_path / "x.csv")]
        )
        assert result.exit_code == 1


class TestGradcheckCommand:
    def test_pass_report(self, runner):
        result = runner.invoke(
            cli, ["gradcheck", "--size", "3x2", "--trials", "3", "--seed", "0"]
        )
        assert result.exit_code == 0, result.output
        assert "PASS" in result.output
        assert "max rel err" in result.output

    def test_impossible_tolerance_fails(self, runner):
        result = runner.invoke(
            cli,
            ["gradcheck", "--size", "3x2", "--trials", "2", "--tol-nll", "1e-15",
             "--tol-latency", "1e-15"],
        )
        assert result.exit_code == 1
        assert "FAIL" in result.output

    def test_same_seed_identical_reports(self, runner):
        args = ["gradcheck", "--size", "3x2", "--trials", "3", "--seed", "7"]
        a = runner.invoke(cli, args)
        b = runner.invoke(cli, args)
        assert a.output == b.output

    def test_bad_size_flag_exits_1(self, runner):
        result = runner.invoke(cli, ["gradcheck", "--size", "banana"])
        assert result.exit_code == 1


class TestEvalCommand:
    def test_wait1_square_al_is_one(self, runner, tmp_path):
        n = 5
        paths_file = str(tmp_path / "paths.jsonl")
        refs_file = str(tmp_path / "refs.jsonl")
        out = str(tmp_path / "metrics.csv")
        records = []
        refs = []
        for _ in range(3):
            tokens = tuple(range(n))
            path = wait_k_path(n, tokens, 1)
            records.append(path_record(path, n))
            refs.append({"tokens": list(tokens)})
        write_jsonl(paths_file, records)
        write_jsonl(refs_file, refs)
        result = runner.invoke(cli, ["eval", paths_file, refs_file, "--out", out])
        assert result.exit_code == 0, result.output
        rows = read_csv_rows(out)
        for row in rows[:-1]:
            assert float(row["al"]) == pytest.approx(1.0)
            assert float(row["quality"]) == pytest.approx(1.0)  # identity hyps
        assert rows[-1]["sentence_id"] == "mean"

    def test_summary_means_are_arithmetic_means(self, runner, tmp_path):
        paths_file = str(tmp_path / "paths.jsonl")
        refs_file = str(tmp_path / "refs.jsonl")
        out = str(tmp_path / "metrics.csv")
        p1 = wait_k_path(4, (0, 1, 2), 1)
        p2 = wait_k_path(4, (0, 1, 2, 3), 3)
        write_jsonl(paths_file, [path_record(p1, 4), path_record(p2, 4)])
        write_jsonl(refs_file, [{"tokens": [0, 1, 2]}, {"tokens": [3, 2, 1, 0]}])
        result = runner.invoke(cli, ["eval", paths_file, refs_file, "--out", out])
        assert result.exit_code == 0
        rows = read_csv_rows(out)
        for col in ("al", "dal", "path_latency", "quality"):
            values = [float(r[col]) for r in rows[:-1]]
            assert float(rows[-1][col]) == pytest.approx(sum(values) / len(values))

    def test_nonmonotonic_delay_record_flagged(self, runner, tmp_path):
        paths_file = str(tmp_path / "paths.jsonl")
        refs_file = str(tmp_path / "refs.jsonl")
        out = str(tmp_path / "metrics.csv")
        write_jsonl(
            paths_file, [{"src_len": 4, "tgt_len": 3, "delays": [2, 1, 4]}]
        )
        write_jsonl(refs_file, [{"tokens": [0, 1, 2]}])
        result = runner.invoke(cli, ["eval", paths_file, refs_file, "--out", out])
        assert result.exit_code == 1
        rows = read_csv_rows(out)
        assert rows[0]["flag"] == "nonmonotonic-delays"


class TestMaskCommand:
    def test_causal_grid_output(self, runner):
        result = runner.invoke(cli, ["mask", "--m", "1", "--r", "0", "--len", "8"])
        assert result.exit_code == 0
        lines = result.output.strip().splitlines()
        assert len(lines) == 8
        for q, line in enumerate(lines):
            assert line == "1" * (q + 1) + "0" * (8 - q - 1)

    def test_interval_and_bitset_forms_agree(self, runner):
        grid = runner.invoke(cli, ["mask", "--m", "2", "--r", "1", "--len", "6"])
        intervals = runner.invoke(
            cli, ["mask", "--m", "2", "--r", "1", "--len", "6", "--format", "intervals"]
        )
        bitset = runner.invoke(
            cli, ["mask", "--m", "2", "--r", "1", "--len", "6", "--format", "bitset"]
        )
        assert grid.exit_code == intervals.exit_code == bitset.exit_code == 0
        grid_rows = [
            [c == "1" for c in line] for line in grid.output.strip().splitlines()
        ]
        payload = json.loads(intervals.output)
        from_intervals = [[False] * 6 for _ in range(6)]
        for q, start, end in payload["intervals"]:
            for k in range(start, end):
                from_intervals[q][k] = True
        assert grid_rows == from_intervals
        hex_rows = json.loads(bitset.output)["rows_hex"]
        for q, row_hex in enumerate(hex_rows):
            bits = int.from_bytes(bytes.fromhex(row_hex), "little")
            assert [(bits >> k) & 1 == 1 for k in range(6)] == grid_rows[q]


class TestTrainCurveAndRerun:
    def test_train_writes_checkpoint_log_and_manifest(self, runner, tmp_path):
        out = str(tmp_path / "model.json")
        result = runner.invoke(
            cli,
            ["train", "--out", out, "--steps", "40", "--corpus-size", "16",
             "--seed", "3", "--emb-dim", "8", "--hidden-dim", "12"],
        )
        assert result.exit_code == 0, result.output
        config, params = read_checkpoint(out)
        assert config["seed"] == 3
        assert params["src_emb"].shape == (33, 8)
        log_rows = read_csv_rows(out + ".log.csv")
        assert len(log_rows) == 0  # 40 steps < one 100-step logging window
        manifest = json.load(open(out + ".manifest.json"))
        assert manifest["command"] == "train"
        assert manifest["seed"] == 3

    def test_same_seed_identical_checkpoints(self, runner, tmp_path):
        a = str(tmp_path / "a.json")
        b = str(tmp_path / "b.json")
        for out in (a, b):
            result = runner.invoke(
                cli,
                ["train", "--out", out, "--steps", "30", "--corpus-size", "12",
                 "--seed", "7", "--emb-dim", "6", "--hidden-dim", "8"],
            )
            assert result.exit_code == 0, result.output
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_rerun_reproduces_outputs_bit_exactly(self, runner, tmp_path, rng):
        lat_file = str(tmp_path / "lat.jsonl")
        tgt_file = str(tmp_path / "tgt.jsonl")
        out = str(tmp_path / "losses.csv")
        write_lattice_jsonl(lat_file, [random_lattice(2, 1, 3, rng)])
        write_jsonl(tgt_file, [{"tokens": [1]}])
        first = runner.invoke(cli, ["loss", lat_file, tgt_file, "--out", out])
        assert first.exit_code == 0
        original = open(out, "rb").read()
        # Clobber the output, then replay from the manifest.
        open(out, "w").write("garbage")
        second = runner.invoke(cli, ["rerun", out + ".manifest.json"])
        assert second.exit_code == 0, second.output
        assert open(out, "rb").read() == original

    def test_curve_tiny_grid(self, runner, tmp_path):
        out = str(tmp_path / "curve.csv")
        result = runner.invoke(
            cli,
            ["curve", "--out", out, "--d-values", "1", "--lambdas", "0,1.0",
             "--seeds", "0", "--steps", "30", "--train-size", "12",
             "--eval-size", "4", "--emb-dim", "6", "--hidden-dim", "8"],
        )
        assert result.exit_code == 0, result.output
        rows = read_csv_rows(out)
        assert [(r["d"], r["lambda_latency"]) for r in rows] == [
            ("1", "0.0"), ("1", "1.0")
        ]
        for r in rows:
            assert 0.0 <= float(r["mean_quality"]) <= 1.0

    def test_version_flag(self, runner):
        result = runner.invoke(cli, ["--version"])
        assert result.exit_code == 0
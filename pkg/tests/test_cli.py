import csv
import hashlib
import io
import json

import pytest

from dred.cli import RD_HEADER, build_parser, main, read_config
from dred.errors import InvalidArgument


@pytest.fixture(scope="module")
def table_file(table, tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "table.bin"
    table.save(path)
    return path


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_help_lists_subcommands():
    text = build_parser().format_help()
    for name in ("synth", "train", "rd-sweep", "build-stream", "simulate", "grad-check"):
        assert name in text


def test_synth(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert main(["synth", "--seed", "3", "--n-frames", "400", "--out", str(a)]) == 0
    assert main(["synth", "--seed", "3", "--n-frames", "400", "--out", str(b)]) == 0
    assert a.stat().st_size == 8 + 2 + 4 + 400 * 20 * 4
    assert sha(a) == sha(b)


def test_synth_errors(tmp_path, capsys):
    assert main(["synth", "--n-frames", "0", "--out", str(tmp_path / "x.bin")]) != 0
    assert "n_frames" in capsys.readouterr().err
    assert main(["synth", "--out", str(tmp_path / "missing" / "x.bin")]) != 0
    assert "missing" in capsys.readouterr().err


def test_config_file(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nseed = 5   # trailing\n\nn_frames=10\nout=%s\n" % (tmp_path / "o.bin"))
    assert read_config(cfg) == {"seed": "5", "n_frames": "10", "out": str(tmp_path / "o.bin")}
    assert main(["synth", "--config", str(cfg)]) == 0
    assert (tmp_path / "o.bin").stat().st_size == 14 + 10 * 80
    # flags override the file
    assert main(["synth", "--config", str(cfg), "--n-frames", "4"]) == 0
    assert (tmp_path / "o.bin").stat().st_size == 14 + 4 * 80
    cfg.write_text("bogus = 1\n")
    assert main(["synth", "--config", str(cfg)]) != 0
    cfg.write_text("no equals sign\n")
    with pytest.raises(InvalidArgument):
        read_config(cfg)


def test_train_reproducible(tmp_path):
    out = []
    for i in range(2):
        table, log = tmp_path / f"t{i}.bin", tmp_path / f"l{i}.jsonl"
        assert main(["train", "--steps", "150", "--n-sequences", "100", "--table-out", str(table),
                     "--log-out", str(log)]) == 0
        rows = [json.loads(x) for x in log.read_text().splitlines()]
        assert len(rows) == 16
        out.append(sha(table))
    assert out[0] == out[1]


def test_rd_sweep(table_file, capsys):
    assert main(["rd-sweep", "--table", str(table_file), "--n-sequences", "4"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == RD_HEADER == ["lambda_index", "bits_per_vector", "distortion", "nondegenerate"]
    assert len(rows) == 17
    bits = [float(r[1]) for r in rows[1:]]
    assert bits == sorted(bits, reverse=True)


def test_build_stream_and_simulate(table_file, tmp_path, capsys):
    stream = tmp_path / "s.jsonl"
    assert main(["build-stream", "--table", str(table_file), "--n-frames", "1000", "--out", str(stream)]) == 0
    assert len(stream.read_text().splitlines()) == 500

    assert main(["simulate", "--table", str(table_file), "--stream", str(stream), "--loss-rates", "0"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["frames_unrecovered"] == 0 and rep["decoder_invocations"] == 0

    assert main(["simulate", "--table", str(table_file), "--stream", str(stream), "--burst-start", "100",
                 "--burst-length", "51"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["frames_unrecovered"] == 0 and rep["frames_recovered_redundancy"] == 102

    trace = tmp_path / "t.txt"
    trace.write_text("1" * 100 + "0" * 53 + "1" * 347 + "\n")
    assert main(["simulate", "--table", str(table_file), "--stream", str(stream), "--trace", str(trace)]) == 0
    assert json.loads(capsys.readouterr().out)["frames_unrecovered"] == 4


def test_simulate_sweep_and_ramp_schedule(table_file, capsys):
    assert main(["simulate", "--table", str(table_file), "--schedule", "ramp", "--n-frames", "400",
                 "--loss-rates", "0,0.2", "--trace-seeds", "0,1"]) == 0
    reps = json.loads(capsys.readouterr().out)
    assert [r["scenario"] for r in reps] == [0.0, 0.2]
    assert reps[0]["redundancy_bitrate_bps"] == reps[1]["redundancy_bitrate_bps"]


def test_simulate_missing_table(tmp_path, capsys):
    assert main(["simulate", "--table", str(tmp_path / "nope.bin")]) != 0
    assert "nope.bin" in capsys.readouterr().err


def test_grad_check(capsys):
    assert main(["grad-check", "--n-points", "10"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["passed"] and res["max_rel_error"] < 1e-4

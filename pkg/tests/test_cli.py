"""End-to-end tests for the command line front end."""

import json

import pytest

from polarlab import cli
from polarlab import evaluation as ev
from polarlab.training import load_checkpoint, TrainTrace


def write_config(tmp_path, **overrides):
    """Small, fast config for a toy model; overrides merge at the top level."""
    cfg = {
        "code": {"N": 8, "K": 4},
        "arch": "mlp-rnnd",
        "train": {"batch_size": 8, "epochs": 3},
        "eval": {"ebn0_db": [0.0, 2.0], "min_bit_errors": 20,
                 "max_frames": 6000, "frames": 400, "bench_frames": 16,
                 "batch": 8},
        "seed": 5,
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def run(*argv):
    return cli.main(list(argv))


# -------------------------------------------------------------------- train

def test_train_writes_checkpoint_and_trace(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--out", str(out)) == 0
    model, meta = load_checkpoint(out / "checkpoint.json")
    assert meta.arch_name == "mlp-rnnd-8-4"
    assert meta.seed == 5
    assert meta.epoch == 3
    trace = TrainTrace.read_csv(out / "trace.csv")
    # 16 messages at batch 8 make 2 steps per epoch
    assert len(trace.rows) == 6
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("final loss:") for line in lines)
    assert any("checkpoint.json" in line for line in lines)
    assert any("trace.csv" in line for line in lines)


def test_train_refuses_overwrite_without_force(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--out", str(out)) == 0
    assert run("train", "--config", cfg, "--out", str(out)) == 2
    assert run("train", "--config", cfg, "--out", str(out), "--force") == 0


def test_train_deterministic_checkpoints(tmp_path):
    cfg = write_config(tmp_path)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert run("train", "--config", cfg, "--out", str(out_a)) == 0
    assert run("train", "--config", cfg, "--out", str(out_b)) == 0
    assert (out_a / "checkpoint.json").read_bytes() == \
        (out_b / "checkpoint.json").read_bytes()
    assert (out_a / "trace.csv").read_bytes() == (out_b / "trace.csv").read_bytes()


def test_train_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert run("train", "--config", cfg, "--out", str(out_a)) == 0
    assert run("train", "--config", cfg, "--out", str(out_b), "--seed", "6") == 0
    _, meta = load_checkpoint(out_b / "checkpoint.json")
    assert meta.seed == 6
    assert (out_a / "checkpoint.json").read_bytes() != \
        (out_b / "checkpoint.json").read_bytes()


def test_train_periodic_snapshots(tmp_path):
    cfg = write_config(tmp_path, train={"batch_size": 8, "epochs": 4,
                                        "checkpoint_every": 2})
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--out", str(out)) == 0
    assert (out / "checkpoint_epoch_2.json").exists()
    assert (out / "checkpoint_epoch_4.json").exists()
    assert (out / "checkpoint.json").exists()


def test_train_full_arch_name_must_match_code(tmp_path):
    cfg = write_config(tmp_path, arch="mlp-rnnd-16-8")
    assert run("train", "--config", cfg, "--out", str(tmp_path / "x")) == 2


# ------------------------------------------------------------------- config

def test_config_unknown_top_level_key(tmp_path, capsys):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"coed": {"N": 8}}))
    assert run("train", "--config", str(path), "--out", str(tmp_path / "x")) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_config_unknown_nested_key(tmp_path, capsys):
    cfg = write_config(tmp_path, train={"epochs": 2, "momentum": 0.9})
    assert run("train", "--config", cfg, "--out", str(tmp_path / "x")) == 2
    assert "momentum" in capsys.readouterr().err


def test_config_bad_types_rejected(tmp_path):
    for bad in [{"code": {"N": "eight"}},
                {"seed": 1.5},
                {"eval": {"ebn0_db": "all"}},
                {"eval": {"ebn0_db": []}},
                {"train": {"epochs": True}}]:
        path = tmp_path / "config.json"
        path.write_text(json.dumps(bad))
        assert run("train", "--config", str(path),
                   "--out", str(tmp_path / "x")) == 2


def test_config_invalid_json(tmp_path, capsys):
    path = tmp_path / "config.json"
    path.write_text("{not json")
    assert run("train", "--config", str(path), "--out", str(tmp_path / "x")) == 2
    assert "JSON" in capsys.readouterr().err


def test_config_missing_file(tmp_path):
    assert run("train", "--config", str(tmp_path / "nope.json"),
               "--out", str(tmp_path / "x")) == 2


def test_bad_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc_info:
        run("frobnicate")
    assert exc_info.value.code == 2


# --------------------------------------------------------------- evaluation

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--out", str(out)) == 0
    return cfg, str(out / "checkpoint.json"), tmp_path


def test_ber_sc_only(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "ber"
    assert run("ber", "--config", cfg, "--out", str(out)) == 0
    rows = ev.read_ber_csv(out / "ber.csv")
    assert [r.decoder for r in rows] == ["sc", "sc"]
    assert [r.ebn0_db for r in rows] == [0.0, 2.0]


def test_ber_with_checkpoint_pairs_frames(trained, tmp_path):
    cfg, ckpt, _ = trained
    out = tmp_path / "ber"
    assert run("ber", "--config", cfg, "--out", str(out), ckpt) == 0
    rows = ev.read_ber_csv(out / "ber.csv")
    assert [r.decoder for r in rows] == ["sc", "sc",
                                         "mlp-rnnd-8-4", "mlp-rnnd-8-4"]
    by_decoder = {}
    for r in rows:
        by_decoder.setdefault(r.decoder, []).append(r)
    # untrained-ish model exhausts the frame budget; SC stops early on errors,
    # so only assert the shared grid here
    assert [r.ebn0_db for r in by_decoder["sc"]] == [0.0, 2.0]
    assert [r.ebn0_db for r in by_decoder["mlp-rnnd-8-4"]] == [0.0, 2.0]


def test_ber_workers_flag_matches_serial(trained, tmp_path):
    cfg, ckpt, _ = trained
    out1 = tmp_path / "w1"
    out2 = tmp_path / "w2"
    assert run("ber", "--config", cfg, "--out", str(out1), ckpt) == 0
    assert run("ber", "--config", cfg, "--out", str(out2), "--workers", "2",
               ckpt) == 0
    assert (out1 / "ber.csv").read_bytes() == (out2 / "ber.csv").read_bytes()


def test_ber_refuses_overwrite(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "ber"
    assert run("ber", "--config", cfg, "--out", str(out)) == 0
    assert run("ber", "--config", cfg, "--out", str(out)) == 2
    assert run("ber", "--config", cfg, "--out", str(out), "--force") == 0


def test_ber_deterministic_output(tmp_path):
    cfg = write_config(tmp_path)
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    assert run("ber", "--config", cfg, "--out", str(out1)) == 0
    assert run("ber", "--config", cfg, "--out", str(out2)) == 0
    assert (out1 / "ber.csv").read_bytes() == (out2 / "ber.csv").read_bytes()


def test_ber_rejects_code_mismatch(trained, tmp_path):
    _, ckpt, _ = trained
    cfg16 = write_config(tmp_path, code={"N": 16, "K": 8})
    assert run("ber", "--config", cfg16, "--out", str(tmp_path / "x"), ckpt) == 2


def test_ber_rejects_damaged_checkpoint(tmp_path, capsys):
    cfg = write_config(tmp_path)
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert run("ber", "--config", cfg, "--out", str(tmp_path / "x"),
               str(bad)) == 2
    assert "bad.json" in capsys.readouterr().err


def test_snr_end_to_end(trained, tmp_path):
    cfg, ckpt, _ = trained
    out = tmp_path / "snr"
    assert run("snr", "--config", cfg, "--out", str(out), ckpt) == 0
    rows = ev.read_snr_csv(out / "snr.csv")
    assert [r.ebn0_db for r in rows] == [0.0, 2.0]


def test_snr_deterministic(trained, tmp_path):
    cfg, ckpt, _ = trained
    out1 = tmp_path / "s1"
    out2 = tmp_path / "s2"
    assert run("snr", "--config", cfg, "--out", str(out1), ckpt) == 0
    assert run("snr", "--config", cfg, "--out", str(out2), ckpt) == 0
    assert (out1 / "snr.csv").read_bytes() == (out2 / "snr.csv").read_bytes()


def test_snr_rejects_decode_only_checkpoint(tmp_path):
    cfg = write_config(tmp_path, arch="mlp-nnd")
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--out", str(out)) == 0
    ckpt = str(out / "checkpoint.json")
    assert run("snr", "--config", cfg, "--out", str(tmp_path / "snr"), ckpt) == 2


def test_pdf_end_to_end(trained, tmp_path):
    cfg, ckpt, _ = trained
    out = tmp_path / "pdf"
    assert run("pdf", "--config", cfg, "--out", str(out), ckpt) == 0
    rows = ev.read_pdf_csv(out / "pdf.csv")
    assert len(rows) == 80
    width = 0.1
    integral = sum(r.density_received for r in rows) * width
    assert integral == pytest.approx(1.0, abs=1e-6)


def test_bench_end_to_end(trained, tmp_path):
    cfg, ckpt, _ = trained
    out = tmp_path / "bench"
    assert run("bench", "--config", cfg, "--out", str(out), ckpt) == 0
    rows = ev.read_timing_csv(out / "timing.csv")
    assert [r.decoder for r in rows] == ["sc", "mlp-rnnd-8-4"]
    assert all(r.frames == 16 for r in rows)


# ------------------------------------------------------------------- params

def test_params_default_lists_all_six(capsys):
    assert run("params") == 0
    lines = capsys.readouterr().out.splitlines()
    got = dict(line.split() for line in lines)
    assert got == {
        "mlp-nnd-16-8": "27336",
        "mlp-rnnd-16-8": "25816",
        "cnn-nnd-16-8": "29912",
        "cnn-rnnd-16-8": "26792",
        "rnn-nnd-16-8": "38984",
        "rnn-rnnd-16-8": "27928",
    }


def test_params_named_arch(capsys):
    assert run("params", "mlp-rnnd-16-8") == 0
    assert capsys.readouterr().out == "mlp-rnnd-16-8 25816\n"


def test_params_short_name_defaults_to_16_8(capsys):
    assert run("params", "mlp-rnnd") == 0
    assert capsys.readouterr().out == "mlp-rnnd-16-8 25816\n"


def test_params_bad_arch_lists_valid_names(capsys):
    assert run("params", "transformer-xxl") == 2
    err = capsys.readouterr().err
    assert "mlp" in err and "rnnd" in err


def test_bad_arch_odd_shape_lists_valid_names(capsys):
    assert run("params", "mlp-rnnd-16") == 2
    err = capsys.readouterr().err
    assert "mlp" in err and "rnnd" in err


def test_negative_seed_rejected(tmp_path):
    cfg = write_config(tmp_path)
    assert run("train", "--config", cfg, "--out", str(tmp_path / "x"),
               "--seed", "-3") == 2
    cfg_bad = write_config(tmp_path, seed=-1)
    assert run("train", "--config", cfg_bad, "--out", str(tmp_path / "y")) == 2

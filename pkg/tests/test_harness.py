import csv
import math

import numpy as np
import pytest
import yaml
from scipy.stats import norm

from eqzsim import cli, harness
from eqzsim.harness import (
    SWEEP_HEADER,
    BerRecord,
    ConfigError,
    ExperimentConfig,
    checkpoint_name,
    complexity_factor,
    crossing_ebn0,
    emit_gain_table,
    emit_llr_histogram,
    llr_histogram,
    load_config,
    read_sweep_csv,
    run_calibration,
    run_sweep,
    run_training,
    write_sweep_csv,
)


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def awgn_config(**kw):
    base = dict(channel=[1.0], M=2, ebn0_db=[6.0], block_length=2000, chunk_blocks=10,
                stopping={"min_errors": 200, "max_bits": 10**6}, equalizers=[{"kind": "lmmse"}])
    base.update(kw)
    return harness._strict(ExperimentConfig, base, "test")


# ---------------------------------------------------------------- config


def test_load_config_defaults(tmp_path):
    cfg = load_config(write_yaml(tmp_path / "c.yaml", {"ebn0_db": [10]}))
    assert cfg.channel == "h_A" and cfg.M == 2 and cfg.mode == "uncoded"
    assert cfg.geometry == (7, 7)
    assert cfg.stopping.min_errors == 200 and cfg.stopping.max_bits == 10**7
    assert [e.label for e in cfg.equalizers] == ["lmmse"]


def test_seed_override(tmp_path):
    cfg = load_config(write_yaml(tmp_path / "c.yaml", {"ebn0_db": [10], "seed": 3}), seed=11)
    assert cfg.seed == 11


@pytest.mark.parametrize(
    "data, needle",
    [
        ({"ebn0_db": [10], "ebnO_db": [1]}, "ebnO_db"),
        ({"ebn0_db": [10], "stopping": {"min_error": 300}}, "min_error"),
        ({"ebn0_db": [10], "equalizers": [{"kind": "eqznet", "train": {"archtecture": "k"}}]}, "archtecture"),
        ({"ebn0_db": []}, "nonempty"),
        ({"ebn0_db": [10], "stopping": {"min_errors": 50}}, ">= 100"),
        ({"ebn0_db": [10], "channel": "h_C"}, "h_C"),
        ({"ebn0_db": [10], "M": 3}, "M"),
        ({"ebn0_db": [10], "mode": "coded"}, "mode"),
        ({"ebn0_db": [10], "geometry": "wide"}, "geometry"),
        ({"ebn0_db": [10], "equalizers": [{"kind": "eqznet"}]}, "checkpoint"),
        ({"ebn0_db": [10], "equalizers": [{"kind": "lmmse"}, {"kind": "lmmse"}]}, "unique"),
        ({"ebn0_db": [10], "equalizers": [{"kind": "eqznet", "train": {"architecture": "head", "L": 0}}]}, "L"),
    ],
)
def test_invalid_configs(tmp_path, data, needle):
    with pytest.raises(ConfigError, match=needle):
        load_config(write_yaml(tmp_path / "c.yaml", data))


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.yaml")
    (tmp_path / "bad.yaml").write_text("ebn0_db: [1, 2\n")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(tmp_path / "bad.yaml")


def test_default_labels():
    cfg = awgn_config(equalizers=[
        {"kind": "eqznet", "train": {"architecture": "k", "K": 2}},
        {"kind": "eqznet", "train": {"architecture": "sum", "K": 6, "L": 2}},
        {"kind": "eqznet", "train": {"architecture": "head", "K": 6, "L": 2}},
        {"kind": "eqznet", "train": {"architecture": "k", "K": 2, "init": "random"}},
    ])
    assert [e.label for e in cfg.equalizers] == ["2-EqzNet", "(6+2)-EqzNet", "(8,2)-EqzNet", "2-EqzNet-random"]
    assert checkpoint_name("(8,2)-EqzNet", 20.0) == "8_2-EqzNet_20dB.json"


def test_digest_tracks_content():
    assert awgn_config().digest() == awgn_config().digest()
    assert awgn_config().digest() != awgn_config(seed=1).digest()


# ---------------------------------------------------------------- sweep engine


def test_awgn_reference_within_three_standard_errors():
    cfg = awgn_config(ebn0_db=[4.0, 6.0])
    for rec in run_sweep(cfg):
        expected = norm.sf(math.sqrt(2 * 10 ** (rec.ebn0_db / 10)))
        assert rec.errors >= 200
        se = math.sqrt(expected * (1 - expected) / rec.bits)
        assert abs(rec.ber - expected) <= 3 * se


def test_record_invariants():
    rec = run_sweep(awgn_config())[0]
    assert rec.ber == rec.errors / rec.bits
    assert rec.errors >= 200 and not rec.max_bits_reached
    assert rec.channel == "custom" and rec.mode == "uncoded" and rec.M == 2


def test_sweep_is_deterministic():
    cfg = awgn_config(equalizers=[{"kind": "lmmse"}, {"kind": "bcjr"}])
    a = [r.key() for r in run_sweep(cfg)]
    b = [r.key() for r in run_sweep(cfg)]
    assert a == b
    c = [r.key() for r in run_sweep(awgn_config(seed=5, equalizers=[{"kind": "lmmse"}, {"kind": "bcjr"}]))]
    assert a != c


def test_workers_do_not_change_results():
    cfg = awgn_config(channel="h_B", ebn0_db=[6.0, 8.0], block_length=500, chunk_blocks=4,
                      stopping={"min_errors": 100, "max_bits": 10**5},
                      equalizers=[{"kind": "lmmse"}, {"kind": "bcjr"}])
    serial = [r.key() for r in run_sweep(cfg, workers=1)]
    parallel = [r.key() for r in run_sweep(cfg, workers=3)]
    assert serial == parallel


def test_max_bits_flag():
    cfg = awgn_config(ebn0_db=[10.0], stopping={"min_errors": 100, "max_bits": 40000})
    with pytest.warns(RuntimeWarning, match="max_bits"):
        rec = run_sweep(cfg)[0]
    assert rec.max_bits_reached and rec.errors < 100 and rec.bits >= 40000


def test_missing_checkpoint_is_reported(tmp_path):
    cfg = awgn_config(equalizers=[{"kind": "eqznet", "checkpoint": str(tmp_path / "net_{ebn0_db}.json")}])
    with pytest.raises(FileNotFoundError, match="not found"):
        run_sweep(cfg)


def test_sweep_csv_roundtrip(tmp_path):
    recs = run_sweep(awgn_config())
    path = write_sweep_csv(recs, tmp_path / "s.csv")
    with path.open() as fh:
        assert next(csv.reader(fh)) == SWEEP_HEADER
    back = read_sweep_csv(path)
    assert [(r.ebn0_db, r.bits, r.errors, r.equalizer) for r in back] == \
        [(r.ebn0_db, r.bits, r.errors, r.equalizer) for r in recs]


def test_turbo_mode_sweep():
    cfg = awgn_config(channel="h_A", mode="turbo", ebn0_db=[13.0], chunk_blocks=2,
                      stopping={"min_errors": 100, "max_bits": 4000},
                      turbo={"iterations": 2, "first_iteration_equalizer": "lmmse"})
    rec = run_sweep(cfg)[0]
    assert rec.mode == "turbo" and rec.bits % 1776 == 0 and rec.errors >= 100


# ---------------------------------------------------------------- gain table


def test_crossing_is_log_linear():
    pts = [(e, 10 ** (-0.5 * e)) for e in (2.0, 4.0, 6.0, 8.0)]
    assert crossing_ebn0(pts, 1e-3) == pytest.approx(6.0)
    assert crossing_ebn0(pts, 10**-2.5) == pytest.approx(5.0)
    assert crossing_ebn0(pts, 1e-6) is None
    assert crossing_ebn0([(1.0, 0.1), (2.0, 0.0)], 1e-3) is None


def synthetic(label, shift):
    return [BerRecord(e + shift, 10**6, int(10**6 * 10 ** (-0.4 * e)), label, "h_A", 2, "uncoded", "x")
            for e in (4.0, 6.0, 8.0, 10.0)]


def test_gain_table_identities(tmp_path):
    cfg = awgn_config(channel="h_A", equalizers=[
        {"kind": "lmmse"}, {"kind": "eqznet", "label": "better", "train": {"K": 2}}, {"kind": "bcjr"}])
    bcjr = [BerRecord(e, 10**7, 50, "bcjr", "h_A", 2, "uncoded", "x") for e in (4.0, 6.0)]
    recs = synthetic("lmmse", 0.0) + synthetic("better", -1.0) + bcjr
    rows = emit_gain_table(recs, cfg, tmp_path / "g.csv")
    by = {r[0]: r for r in rows}
    assert float(by["lmmse"][5]) == 0.0 and by["lmmse"][6] == "1.0000"
    assert float(by["better"][5]) == pytest.approx(1.0, abs=0.02)
    assert by["bcjr"][7] == "out_of_range" and by["bcjr"][5] == ""
    assert by["bcjr"][6] == ""  # no MAC model for the trellis equalizer
    with (tmp_path / "g.csv").open() as fh:
        assert next(csv.reader(fh)) == harness.GAIN_HEADER


def test_gain_table_requires_reference():
    with pytest.raises(ConfigError, match="reference"):
        emit_gain_table(synthetic("other", 0.0), awgn_config())


def test_complexity_factor_values():
    cfg = awgn_config(equalizers=[{"kind": "lmmse"}, {"kind": "bcjr"},
                                  {"kind": "eqznet", "train": {"architecture": "head", "K": 6, "L": 2}}])
    lm, bc, head = cfg.equalizers
    assert complexity_factor(lm, (7, 7)) == 1.0
    assert complexity_factor(bc, (7, 7)) is None
    assert complexity_factor(head, (7, 7)) == pytest.approx((8 * 15 + 8 + 6) / 15)


# ---------------------------------------------------------------- histograms


def test_histogram_binning():
    edges, counts = llr_histogram([-50.0, -0.25, 0.25, 0.7, 39.9], [0, 0, 1, 1, 1])
    assert len(edges) == 161 and edges[0] == -40 and edges[-1] == 40
    assert counts[0].sum() == 2 and counts[1].sum() == 3
    assert counts[0][0] == 1  # clamped into the lowest bin
    assert counts[1][np.searchsorted(edges, 0.25, side="right") - 1] == 1


def test_llr_histogram_mirror_symmetry(tmp_path):
    cfg = awgn_config(channel="h_A", ebn0_db=[12.0], histogram={"bits": 100_000})
    rows = emit_llr_histogram(cfg, tmp_path / "h.csv")
    assert len(rows) == 2 * 160
    c0 = np.array([r[5] for r in rows if r[2] == 0])
    c1 = np.array([r[5] for r in rows if r[2] == 1])
    assert abs(c0.sum() - c1.sum()) < 5 * math.sqrt(c0.sum() + c1.sum())
    # cumulative distributions mirror each other within sampling noise
    cdf0 = np.cumsum(c0) / c0.sum()
    cdf1 = np.cumsum(c1[::-1]) / c1.sum()
    assert np.max(np.abs(cdf0 - cdf1)) < 0.02


def test_lmmse_memoryless_llr_mean():
    cfg = awgn_config(ebn0_db=[6.0], histogram={"bits": 100_000})
    s2 = cfg.channel_model(6.0).noise_variance
    rows = emit_llr_histogram(cfg)
    mids = np.array([(float(r[3]) + float(r[4])) / 2 for r in rows if r[2] == 0])
    counts = np.array([r[5] for r in rows if r[2] == 0])
    assert np.average(mids, weights=counts) == pytest.approx(2 / s2, rel=0.02)


# ---------------------------------------------------------------- training and calibration


def small_training_config(**train):
    t = dict(architecture="head", K=2, L=2, bits=4000, block_length=500, epochs=3)
    t.update(train)
    return awgn_config(channel="h_A", ebn0_db=[14.0, 16.0], equalizers=[{"kind": "eqznet", "train": t}])


def test_training_outputs(tmp_path):
    paths = run_training(small_training_config(), tmp_path)
    assert [p.name for p in paths] == ["4_2-EqzNet_14dB.json", "4_2-EqzNet_16dB.json"]
    with paths[0].with_suffix(".loss.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["stage", "epoch", "loss"]
    stages = {}
    for stage, epoch, _ in rows[1:]:
        stages.setdefault(stage, []).append(int(epoch))
    assert list(stages) == ["k", "l", "head"]
    assert all(v == [1, 2, 3] for v in stages.values())


def test_training_is_bit_identical(tmp_path):
    a = run_training(small_training_config(), tmp_path / "a")
    b = run_training(small_training_config(), tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_trained_checkpoints_feed_a_sweep(tmp_path):
    run_training(small_training_config(architecture="k"), tmp_path)
    cfg = awgn_config(channel="h_A", ebn0_db=[14.0], stopping={"min_errors": 100, "max_bits": 10**5},
                      equalizers=[{"kind": "eqznet", "label": "net",
                                   "checkpoint": str(tmp_path / "2-EqzNet_{ebn0_db:g}dB.json")}])
    rec = run_sweep(cfg)[0]
    assert rec.equalizer == "net" and rec.bits > 0


def test_calibration_report(tmp_path):
    cfg = awgn_config(channel=[1.0], ebn0_db=[6.0], calibration={"bits": 20000})
    (n1, n2), result = run_calibration(cfg, tmp_path)
    assert (n1, n2) == (0, 0) and result.window == 1
    with (tmp_path / "calibration.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["window", "ber", "reference_ber", "ratio"]
    assert len(rows) - 1 == len(result.table)
    geo = yaml.safe_load((tmp_path / "geometry.yaml").read_text())
    assert geo["n1"] == geo["n2"] == 0


# ---------------------------------------------------------------- CLI


def test_cli_sweep_and_manifest(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", {"channel": [1.0], "ebn0_db": [6.0], "block_length": 2000,
                                           "stopping": {"min_errors": 100, "max_bits": 10**6}})
    out = tmp_path / "out"
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(out), "--seed", "4"]) == 0
    with (out / "sweep.csv").open() as fh:
        assert next(csv.reader(fh)) == SWEEP_HEADER
    manifest = (out / "run_manifest.txt").read_text()
    assert "seed: 4" in manifest and "config_digest:" in manifest and "sweep.csv" in manifest
    assert cli.main(["gain-table", "--config", str(cfg), "--out", str(out), "--sweep", str(out / "sweep.csv")]) == 0
    assert (out / "gain_table.csv").exists()


def test_cli_exit_codes(tmp_path, capsys):
    bad = write_yaml(tmp_path / "bad.yaml", {"ebn0_db": [6], "typo": 1})
    assert cli.main(["sweep", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "typo" in capsys.readouterr().err
    good = write_yaml(tmp_path / "good.yaml", {"ebn0_db": [6]})
    assert cli.main(["sweep", "--config", str(good), "--out", str(tmp_path / "o"), "--workers", "0"]) == 2
    assert cli.main(["gain-table", "--config", str(good), "--out", str(tmp_path / "o"),
                     "--sweep", str(tmp_path / "missing.csv")]) == 1
    with pytest.raises(SystemExit):
        cli.main(["sweep"])

"""Experiment engine: configuration, seeded Monte-Carlo sweeps, training,
window calibration and CSV emission.

Every random quantity derives from ``SeedSequence([master_seed, point, chunk])``
so results do not depend on how chunks are scheduled across workers.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bcjr import LLR_CLAMP, build_trellis, calibrate_window, map_equalize
from .eqznet import (
    EqzNetBank,
    TrainConfig,
    build_dataset,
    forward,
    load_checkpoint,
    lmmse_operation_count,
    operation_count,
    save_checkpoint,
    simulate_blocks,
    train_recipe,
)
from .ldpc import load_alist_file, shipped_code
from .lmmse import design_filter, gaussian_bit_llrs
from .turbo import TurboConfig, eqznet_llrs, transmit_coded, turbo_equalize
from .txchain import CHANNEL_PRESETS, ChannelModel, PamConstellation, ebn0_to_noise_variance, frame_matrix

SWEEP_HEADER = ["ebn0_db", "bits", "errors", "ber", "equalizer", "channel", "M", "mode", "seed_digest", "wall_ms"]
GAIN_HEADER = ["equalizer", "channel", "M", "target_ber", "ebn0_at_target", "gain_db", "complexity_factor", "flag"]
HIST_HEADER = ["equalizer", "bit_position", "bit_value", "bin_low", "bin_high", "count"]
HIST_BIN_WIDTH = 0.5
MODES = ("uncoded", "turbo")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# ----------------------------------------------------------------------------
# configuration


def _strict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(names))}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class TrainingSpec:
    """How an EqzNet equalizer is trained (one model per Eb/N0 point)."""

    architecture: str = "k"
    K: int = 2
    L: int = 0
    init: str = "lmmse"
    bits: int = 10**6
    block_length: int = 1000
    epochs: int = 20
    learning_rate: float = 1e-2
    learning_rate_final: float | None = 1e-4
    batch_size: int = 256
    alpha: float = 2.0
    w: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ("k", "sum", "head"):
            raise ValueError(f"architecture must be k, sum or head, got {self.architecture!r}")
        if self.architecture != "k" and self.L < 2:
            raise ValueError(f"{self.architecture} needs an L block (L >= 2)")
        if self.init not in ("lmmse", "random"):
            raise ValueError(f"init must be lmmse or random, got {self.init!r}")
        if self.bits < 1:
            raise ValueError("bits must be >= 1")
        self.train_config()  # validates alpha, w, rates

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
                           seed=self.seed, alpha=self.alpha, w_init=self.w,
                           learning_rate_final=self.learning_rate_final)


@dataclass
class EqualizerSpec:
    kind: str
    label: str | None = None
    checkpoint: str | None = None  # path, may contain "{ebn0_db}"
    train: TrainingSpec | None = None

    def __post_init__(self):
        if self.kind not in ("lmmse", "bcjr", "eqznet"):
            raise ValueError(f"equalizer kind must be lmmse, bcjr or eqznet, got {self.kind!r}")
        if isinstance(self.train, dict):
            self.train = _strict(TrainingSpec, self.train, "train")
        if self.kind == "eqznet" and (self.checkpoint is None) == (self.train is None):
            raise ValueError("an eqznet equalizer needs exactly one of 'checkpoint' or 'train'")
        if self.kind != "eqznet" and (self.checkpoint or self.train):
            raise ValueError(f"{self.kind} takes no checkpoint or training settings")
        if self.label is None:
            self.label = self.kind if self.kind != "eqznet" else self._default_label()

    def _default_label(self):
        if self.train is None:
            return Path(self.checkpoint).stem
        t = self.train
        base = {"k": f"{t.K}-EqzNet", "sum": f"({t.K}+{t.L})-EqzNet", "head": f"({t.K + t.L},2)-EqzNet"}
        return base[t.architecture] + ("-random" if t.init == "random" else "")


@dataclass
class StoppingRule:
    min_errors: int = 200
    max_bits: int = 10**7

    def __post_init__(self):
        if self.min_errors < 100:
            raise ValueError(f"min_errors must be >= 100 for reported points, got {self.min_errors}")
        if self.max_bits < 1:
            raise ValueError("max_bits must be >= 1")


@dataclass
class TurboSpec:
    iterations: int = 3
    first_iteration_equalizer: str = "eqznet"
    subsequent_equalizer: str = "lmmse"
    decoder_iterations: int = 20
    interleave: bool = True
    interleaver_seed: int = 0
    code: str = "ldpc_1998_1776"  # shipped fixture name or path to an alist file

    def config(self, first: str | None = None) -> TurboConfig:
        return TurboConfig(self.iterations, first or self.first_iteration_equalizer,
                           self.subsequent_equalizer, self.decoder_iterations,
                           self.interleave, self.interleaver_seed)


@dataclass
class CalibrationSpec:
    snr_db: float | None = None  # defaults to the largest grid point
    target_ber_ratio: float = 1.05
    bits: int = 100_000
    block_length: int = 1000
    max_window: int = 41


@dataclass
class GainSpec:
    target_ber: float = 1e-3
    reference: str = "lmmse"


@dataclass
class HistogramSpec:
    ebn0_db: float | None = None  # defaults to the first grid point
    bits: int = 200_000


@dataclass
class ExperimentConfig:
    channel: object = "h_A"  # preset name or explicit tap list
    M: int = 2
    mode: str = "uncoded"
    equalizers: list = field(default_factory=lambda: [EqualizerSpec("lmmse")])
    ebn0_db: list = field(default_factory=list)
    stopping: StoppingRule = field(default_factory=StoppingRule)
    seed: int = 0
    geometry: object = (7, 7)  # (N1, N2) or "auto"
    block_length: int = 5000
    chunk_blocks: int = 20
    turbo: TurboSpec = field(default_factory=TurboSpec)
    calibration: CalibrationSpec = field(default_factory=CalibrationSpec)
    gain_table: GainSpec = field(default_factory=GainSpec)
    histogram: HistogramSpec = field(default_factory=HistogramSpec)
    name: str = "experiment"

    def __post_init__(self):
        if not self.ebn0_db:
            raise ValueError("Eb/N0 grid must be nonempty")
        self.ebn0_db = [float(v) for v in self.ebn0_db]
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        PamConstellation(self.M)
        self.channel_taps()
        if isinstance(self.geometry, str):
            if self.geometry != "auto":
                raise ValueError(f"geometry must be [N1, N2] or 'auto', got {self.geometry!r}")
        else:
            g = tuple(int(v) for v in self.geometry)
            if len(g) != 2 or min(g) < 0:
                raise ValueError(f"geometry must be two non-negative integers, got {self.geometry!r}")
            self.geometry = g
        if self.block_length < 1 or self.chunk_blocks < 1:
            raise ValueError("block_length and chunk_blocks must be >= 1")
        self.equalizers = [
            e if isinstance(e, EqualizerSpec) else _strict(EqualizerSpec, e, f"equalizers[{i}]")
            for i, e in enumerate(self.equalizers)
        ]
        if not self.equalizers:
            raise ValueError("at least one equalizer is required")
        labels = [e.label for e in self.equalizers]
        if len(set(labels)) != len(labels):
            raise ValueError(f"equalizer labels must be unique, got {labels}")
        for key, cls in (("stopping", StoppingRule), ("turbo", TurboSpec), ("calibration", CalibrationSpec),
                         ("gain_table", GainSpec), ("histogram", HistogramSpec)):
            val = getattr(self, key)
            if isinstance(val, dict):
                setattr(self, key, _strict(cls, val, key))
        if self.mode == "turbo":
            self.turbo.config()

    def channel_taps(self) -> tuple:
        if isinstance(self.channel, str):
            if self.channel not in CHANNEL_PRESETS:
                raise ValueError(f"unknown channel preset {self.channel!r}; known: {sorted(CHANNEL_PRESETS)}")
            return tuple(CHANNEL_PRESETS[self.channel])
        taps = tuple(float(v) for v in self.channel)
        if not taps or taps[0] == 0:
            raise ValueError("explicit channel taps must be nonempty with a nonzero first tap")
        return taps

    @property
    def channel_label(self) -> str:
        return self.channel if isinstance(self.channel, str) else "custom"

    @property
    def constellation(self) -> PamConstellation:
        return PamConstellation(self.M)

    def code_rate(self, code=None) -> float:
        return 1.0 if self.mode == "uncoded" else (code or load_code(self.turbo.code)).rate

    def channel_model(self, ebn0_db: float, code_rate: float = 1.0) -> ChannelModel:
        s2 = ebn0_to_noise_variance(ebn0_db, self.constellation, code_rate)
        return ChannelModel(self.channel_taps(), s2, self.channel_label)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.geometry, tuple):
            d["geometry"] = list(self.geometry)
        return d

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    """Parse a YAML experiment file; unknown keys anywhere are errors."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from exc
    if data is None:
        data = {}
    if seed is not None:
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        data = dict(data, seed=int(seed))
    return _strict(ExperimentConfig, data, str(path))


def load_code(name_or_path: str):
    p = Path(name_or_path)
    return load_alist_file(p) if p.suffix == ".alist" or p.exists() else shipped_code(name_or_path)


# ----------------------------------------------------------------------------
# equalizer resolution


def resolve_geometry(config: ExperimentConfig) -> tuple:
    if config.geometry != "auto":
        return config.geometry
    return run_calibration(config)[0]


def checkpoint_name(label: str, ebn0_db: float) -> str:
    safe = label.replace("(", "").replace(")", "").replace(",", "_").replace("+", "p")
    safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in safe)
    return f"{safe}_{ebn0_db:g}dB.json"


def train_equalizer(config: ExperimentConfig, spec: EqualizerSpec, ebn0_db: float, geometry):
    """Train the EqzNet described by ``spec`` at one Eb/N0 point.

    Returns ``(model, stages)``.
    """
    t = spec.train
    rate = config.code_rate()
    channel = config.channel_model(ebn0_db, rate)
    const = config.constellation
    dataset = build_dataset(channel, const, ebn0_db, t.bits, geometry, seed=[t.seed, 1],
                            block_length=t.block_length, code_rate=rate)
    filt = design_filter(channel, *geometry)
    return train_recipe(t.architecture, t.K, max(t.L, 2), filt, const, dataset, t.train_config(),
                        init=t.init, seed=t.seed)


def _model_for(config, spec, ebn0_db, geometry, cache):
    if spec.kind != "eqznet":
        return None
    key = (spec.label, ebn0_db)
    if key not in cache:
        if spec.checkpoint is not None:
            path = Path(spec.checkpoint.format(ebn0_db=ebn0_db))
            if not path.exists():
                raise FileNotFoundError(f"checkpoint for {spec.label} at {ebn0_db:g} dB not found: {path}")
            cache[key] = load_checkpoint(path)[0]
        else:
            cache[key] = train_equalizer(config, spec, ebn0_db, geometry)[0]
    return cache[key]


# ----------------------------------------------------------------------------
# Monte-Carlo engine


@dataclass
class BerRecord:
    ebn0_db: float
    bits: int
    errors: int
    equalizer: str
    channel: str
    M: int
    mode: str
    seed_digest: str
    wall_ms: float = 0.0
    max_bits_reached: bool = False

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else float("nan")

    @property
    def standard_error(self) -> float:
        p = self.ber
        return math.sqrt(max(p * (1 - p), 0.0) / self.bits) if self.bits else float("nan")

    def row(self) -> list:
        return [f"{self.ebn0_db:g}", self.bits, self.errors, f"{self.ber:.6e}", self.equalizer,
                self.channel, self.M, self.mode, self.seed_digest, f"{self.wall_ms:.0f}"]

    def key(self) -> tuple:
        """Everything except wall time."""
        return (self.ebn0_db, self.bits, self.errors, self.equalizer, self.channel, self.M, self.mode,
                self.seed_digest, self.max_bits_reached)


def chunk_seed(master_seed: int, point: int, chunk: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(point), int(chunk)])


def equalize_uncoded(kind: str, z, channel: ChannelModel, const: PamConstellation, geometry, model=None):
    """Per-bit LLRs ``(B, Q*q)`` from one prior-free equalizer."""
    n1, n2 = geometry
    if kind == "lmmse":
        filt = design_filter(channel, n1, n2)
        est = frame_matrix(z, n1, n2) @ filt.taps
        return np.clip(gaussian_bit_llrs(est, filt.gain, const), -LLR_CLAMP, LLR_CLAMP)
    if kind == "bcjr":
        _, llrs = map_equalize(z, build_trellis(channel, const), channel.noise_variance, constellation=const)
        return llrs.values
    return eqznet_llrs(model, z, n1, n2)


def _chunk_errors(task):
    """Bit errors of each equalizer on one seeded chunk. Runs in worker processes."""
    (mode, channel, const, geometry, kinds, models, n_blocks, block_length, seed, code, turbo_cfgs) = task
    if mode == "uncoded":
        bits, z = simulate_blocks(channel, const, channel.noise_variance, n_blocks, block_length, seed)
        out = []
        for kind, model in zip(kinds, models):
            hard = (equalize_uncoded(kind, z, channel, const, geometry, model) < 0).astype(np.int8)
            out.append(int(np.count_nonzero(hard != bits)))
        return bits.size, out
    msg, _, z = transmit_coded(code, const, channel, n_blocks, seed,
                               interleave=turbo_cfgs[0].interleave, interleaver_seed=turbo_cfgs[0].interleaver_seed)
    out = []
    for model, cfg in zip(models, turbo_cfgs):
        res = turbo_equalize(z, code, channel, const, model, cfg, geometry=geometry)
        out.append(int(np.count_nonzero(res.message_bits != msg)))
    return msg.size, out


def _turbo_config_for(config: ExperimentConfig, spec: EqualizerSpec) -> TurboConfig:
    """Turbo mode: the equalizer spec picks the first-iteration equalizer."""
    return config.turbo.config(first=spec.kind)


def run_sweep(config: ExperimentConfig, workers: int = 1, *, models: dict | None = None,
              progress=None) -> list:
    """One :class:`BerRecord` per (Eb/N0, equalizer).

    Chunks are evaluated in index order (``workers`` at a time) and each
    equalizer stops at the first chunk where its cumulative errors reach
    ``min_errors`` or its bits reach ``max_bits``; extra chunks computed in
    the same wave are discarded, so the result is independent of ``workers``.
    ``models`` may pre-supply trained networks keyed ``(label, ebn0_db)``.
    """
    const = config.constellation
    geometry = resolve_geometry(config)
    code = load_code(config.turbo.code) if config.mode == "turbo" else None
    rate = config.code_rate(code)
    cache = {} if models is None else dict(models)
    rule = config.stopping
    records = []
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for p, ebn0 in enumerate(config.ebn0_db):
            channel = config.channel_model(ebn0, rate)
            specs = config.equalizers
            eq_models = [_model_for(config, s, ebn0, geometry, cache) for s in specs]
            turbo_cfgs = [_turbo_config_for(config, s) for s in specs] if code is not None else None
            if config.mode == "uncoded":
                n_blocks, block_length = config.chunk_blocks, config.block_length
            else:
                n_blocks, block_length = config.chunk_blocks, None
            bits = [0] * len(specs)
            errors = [0] * len(specs)
            used = [0] * len(specs)
            done = [False] * len(specs)
            started = time.perf_counter()
            elapsed = [0.0] * len(specs)
            chunk = 0
            while not all(done):
                live = [i for i in range(len(specs)) if not done[i]]
                tasks = [
                    (config.mode, channel, const, geometry, [specs[i].kind for i in live],
                     [eq_models[i] for i in live], n_blocks, block_length,
                     chunk_seed(config.seed, p, chunk + w), code,
                     [turbo_cfgs[i] for i in live] if turbo_cfgs else None)
                    for w in range(max(1, workers))
                ]
                results = list(pool.map(_chunk_errors, tasks)) if pool else [_chunk_errors(t) for t in tasks]
                for nbits, errs in results:
                    for j, i in enumerate(live):
                        if done[i]:
                            continue
                        bits[i] += nbits
                        errors[i] += errs[j]
                        used[i] += 1
                        if errors[i] >= rule.min_errors or bits[i] >= rule.max_bits:
                            done[i] = True
                            elapsed[i] = time.perf_counter() - started
                chunk += len(tasks)
            for i, spec in enumerate(specs):
                digest = hashlib.sha256(
                    f"{config.seed}:{p}:{ebn0:g}:0-{used[i]}".encode()
                ).hexdigest()[:16]
                rec = BerRecord(ebn0, bits[i], errors[i], spec.label, config.channel_label, config.M,
                                config.mode, digest, 1000.0 * elapsed[i],
                                max_bits_reached=errors[i] < rule.min_errors)
                if rec.max_bits_reached:
                    warnings.warn(f"{spec.label} at {ebn0:g} dB stopped at max_bits with {rec.errors} errors",
                                  RuntimeWarning, stacklevel=2)
                records.append(rec)
                if progress:
                    progress(rec)
    finally:
        if pool:
            pool.shutdown()
    return records


def write_sweep_csv(records, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for r in records:
            w.writerow(r.row())
    return path


def read_sweep_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SWEEP_HEADER:
            raise ConfigError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            BerRecord(float(r["ebn0_db"]), int(r["bits"]), int(r["errors"]), r["equalizer"], r["channel"],
                      int(r["M"]), r["mode"], r["seed_digest"], float(r["wall_ms"]))
            for r in reader
        ]


# ----------------------------------------------------------------------------
# training, calibration, gain table, LLR histograms


def run_training(config: ExperimentConfig, out_dir) -> list:
    """Train every EqzNet with a ``train`` block at every grid point.

    Writes one checkpoint and one loss-trace CSV per (equalizer, Eb/N0) and
    returns the checkpoint paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    geometry = resolve_geometry(config)
    paths = []
    for spec in config.equalizers:
        if spec.kind != "eqznet" or spec.train is None:
            continue
        for ebn0 in config.ebn0_db:
            model, stages = train_equalizer(config, spec, ebn0, geometry)
            provenance = {"channel": config.channel_label, "taps": list(config.channel_taps()), "M": config.M,
                          "ebn0_db": ebn0, "seed": spec.train.seed, "label": spec.label,
                          "init": spec.train.init, "mode": config.mode}
            ckpt = out_dir / checkpoint_name(spec.label, ebn0)
            save_checkpoint(ckpt, model, spec.train.train_config(), provenance)
            with ckpt.with_suffix(".loss.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["stage", "epoch", "loss"])
                for stage, trace in stages:
                    for e, v in enumerate(trace):
                        w.writerow([stage, e + 1, repr(float(v))])
            paths.append(ckpt)
    return paths


def run_calibration(config: ExperimentConfig, out_dir=None):
    """Calibrate the BCJR window; returns ``((N1, N2), CalibrationResult)``."""
    cal = config.calibration
    snr = cal.snr_db if cal.snr_db is not None else max(config.ebn0_db)
    channel = ChannelModel(config.channel_taps(), 1.0, config.channel_label)
    result = calibrate_window(channel, config.constellation, snr, cal.target_ber_ratio,
                              bit_count=cal.bits, block_length=cal.block_length, seed=config.seed,
                              max_window=cal.max_window)
    half = (result.window - 1) // 2
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "calibration.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window", "ber", "reference_ber", "ratio"])
            for win, ber in result.table:
                if result.reference_ber:
                    ratio = ber / result.reference_ber
                else:
                    ratio = 1.0 if ber == 0 else float("inf")
                w.writerow([win, f"{ber:.6e}", f"{result.reference_ber:.6e}", f"{ratio:.4f}"])
        (out_dir / "geometry.yaml").write_text(yaml.safe_dump(
            {"window": result.window, "n1": half, "n2": half, "aligned": result.aligned,
             "snr_db": snr, "channel": config.channel_label, "M": config.M}, sort_keys=True))
    return (half, half), result


def crossing_ebn0(points, target_ber: float):
    """Eb/N0 where a BER curve crosses ``target_ber`` (linear in dB, log in BER).

    ``points`` are ``(ebn0_db, ber)`` pairs. Returns ``None`` when the target
    lies outside the measured range or the curve has zero-error points there.
    """
    pts = sorted((float(e), float(b)) for e, b in points)
    logt = math.log10(target_ber)
    for (e0, b0), (e1, b1) in zip(pts, pts[1:]):
        if b0 <= 0 or b1 <= 0:
            continue
        l0, l1 = math.log10(b0), math.log10(b1)
        if min(l0, l1) <= logt <= max(l0, l1):
            if l0 == l1:
                return e0
            return e0 + (logt - l0) * (e1 - e0) / (l1 - l0)
    for e, b in pts:
        if b == target_ber:
            return e
    return None


def complexity_factor(spec: EqualizerSpec, geometry, ebn0_db: float = 0.0) -> float | None:
    """MAC count per output relative to LMMSE; ``None`` where the cost model does not apply."""
    n = lmmse_operation_count(*geometry)
    if spec.kind == "lmmse":
        return 1.0
    if spec.kind != "eqznet":
        return None
    if spec.train is not None:
        t = spec.train
        width = t.K + (t.L if t.architecture != "k" else 0)
        macs = width * n + width + (6 if t.architecture == "head" else 0)
        return macs / n
    try:
        model = load_checkpoint(spec.checkpoint.format(ebn0_db=ebn0_db))[0]
    except (OSError, KeyError, IndexError, ValueError):
        return None
    member = model.members[0] if isinstance(model, EqzNetBank) else model
    return operation_count(member) / n


def emit_gain_table(records, config: ExperimentConfig, path=None) -> list:
    """Gain over the reference equalizer at ``config.gain_table.target_ber``.

    Rows whose curve does not bracket the target are kept with an empty
    gain and ``flag = out_of_range``.
    """
    target = config.gain_table.target_ber
    ref_label = config.gain_table.reference
    geometry = config.geometry if config.geometry != "auto" else None
    curves = {}
    for r in records:
        curves.setdefault(r.equalizer, []).append((r.ebn0_db, r.ber))
    if ref_label not in curves:
        raise ConfigError(f"reference equalizer {ref_label!r} has no records")
    ref = crossing_ebn0(curves[ref_label], target)
    specs = {s.label: s for s in config.equalizers}
    rows = []
    for label, pts in curves.items():
        x = crossing_ebn0(pts, target)
        spec = specs.get(label)
        factor = complexity_factor(spec, geometry, pts[0][0]) if spec is not None and geometry else None
        if x is None or ref is None:
            rows.append([label, config.channel_label, config.M, target, "", "", _fmt(factor), "out_of_range"])
        else:
            rows.append([label, config.channel_label, config.M, target, f"{x:.4f}", f"{ref - x:.4f}",
                         _fmt(factor), ""])
    if path is not None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(GAIN_HEADER)
            w.writerows(rows)
    return rows


def _fmt(v):
    return "" if v is None else f"{v:.4f}"


def llr_histogram(llrs, bits, *, width: float = HIST_BIN_WIDTH, limit: float = LLR_CLAMP):
    """Counts per bin for bits 0 and 1; returns ``(edges, {0: counts, 1: counts})``."""
    edges = np.arange(-limit, limit + width / 2, width)
    llrs = np.clip(np.asarray(llrs, dtype=float).ravel(), -limit, limit)
    bits = np.asarray(bits).ravel()
    return edges, {v: np.histogram(llrs[bits == v], bins=edges)[0] for v in (0, 1)}


def emit_llr_histogram(config: ExperimentConfig, path=None, *, models: dict | None = None) -> list:
    """LLR histograms of every configured equalizer on one shared uncoded test set."""
    hs = config.histogram
    ebn0 = hs.ebn0_db if hs.ebn0_db is not None else config.ebn0_db[0]
    geometry = resolve_geometry(config)
    const = config.constellation
    q = const.bits_per_symbol
    channel = config.channel_model(ebn0)
    symbols = -(-hs.bits // q)
    block_length = min(config.block_length, symbols)
    n_blocks = -(-symbols // block_length)
    bits, z = simulate_blocks(channel, const, channel.noise_variance, n_blocks, block_length,
                              chunk_seed(config.seed, 10**6, 0))
    cache = {} if models is None else dict(models)
    rows = []
    for spec in config.equalizers:
        model = _model_for(config, spec, ebn0, geometry, cache)
        llrs = equalize_uncoded(spec.kind, z, channel, const, geometry, model).reshape(-1, q)
        b = bits.reshape(-1, q)
        for m in range(q):
            edges, counts = llr_histogram(llrs[:, m], b[:, m])
            for v in (0, 1):
                for lo, hi, c in zip(edges[:-1], edges[1:], counts[v]):
                    rows.append([spec.label, m, v, f"{lo:g}", f"{hi:g}", int(c)])
    if path is not None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HIST_HEADER)
            w.writerows(rows)
    return rows


def write_manifest(out_dir, command: str, config: ExperimentConfig | None, seed, workers, outputs) -> Path:
    """Plain-text record of what produced the files in ``out_dir``."""
    import scipy

    lines = [
        f"command: {command}",
        f"config_digest: {config.digest() if config else ''}",
        f"seed: {seed}",
        f"workers: {workers}",
        f"eqzsim: {__version__}",
        f"python: {sys.version.split()[0]}",
        f"numpy: {np.__version__}",
        f"scipy: {scipy.__version__}",
        f"platform: {platform.platform()}",
        "outputs:",
        *[f"  - {Path(o).name}" for o in outputs],
    ]
    path = Path(out_dir) / "run_manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path

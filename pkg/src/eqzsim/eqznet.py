"""EqzNet: small tanh networks initialized from LMMSE taps.

Three architectures share one parameter container:

``k``     K-EqzNet. ``out = w2 . tanh(W1 z + b1)``; rows of ``W1`` start as the
          LMMSE taps (twice) and their cyclic shifts, ``w2`` as
          ``[alpha*w, -w, ..., -w]``. No output bias.
``sum``   (K+L)-EqzNet. Output of a K block plus a pretrained L block.
``head``  (K+L,2)-EqzNet. Both block outputs feed a 2-neuron tanh layer
          whose outputs are combined linearly.

Parameters live in a flat dict keyed ``"<block>.<name>"`` (blocks ``k``,
``l``, ``head``) so the optimizer and checkpoints see one namespace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .bcjr import LLR_CLAMP, build_trellis, map_equalize
from .lmmse import LmmseFilter, shifted_filter
from .txchain import (
    ChannelModel,
    ObservationFrame,
    PamConstellation,
    apply_channel,
    ebn0_to_noise_variance,
    frame_matrix,
    gray_map,
    random_bits,
)

ARCHITECTURES = ("k", "sum", "head")
CHECKPOINT_FORMAT = "eqzsim-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class EqzNetParams:
    architecture: str
    K: int
    n1: int
    n2: int
    weights: dict = field(default_factory=dict)
    L: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")

    @property
    def input_length(self) -> int:
        return self.n1 + self.n2 + 1

    @property
    def label(self) -> str:
        if self.architecture == "k":
            return f"{self.K}-EqzNet"
        if self.architecture == "sum":
            return f"({self.K}+{self.L})-EqzNet"
        return f"({self.K + self.L},2)-EqzNet"

    def copy(self) -> "EqzNetParams":
        return EqzNetParams(self.architecture, self.K, self.n1, self.n2,
                            {k: v.copy() for k, v in self.weights.items()}, self.L)

    def block(self, prefix: str) -> "EqzNetParams":
        """One sub-block (``"k"`` or ``"l"``) as a standalone K-EqzNet sharing arrays."""
        width = self.K if prefix == "k" else self.L
        weights = {
            "k." + name.split(".", 1)[1]: arr
            for name, arr in self.weights.items() if name.startswith(prefix + ".")
        }
        return EqzNetParams("k", width, self.n1, self.n2, weights)

    def parameter_count(self) -> int:
        return sum(v.size for v in self.weights.values())


def _check_k(K: int):
    if K < 2 or K % 2:
        raise ValueError(f"K must be even and >= 2, got {K}")


def init_k_eqznet(filt: LmmseFilter, K: int, alpha: float = 2.0, w: float = 1.0) -> EqzNetParams:
    """K-EqzNet with first-layer rows ``[f, f, f_-(K-2)/2, ..., f_(K-2)/2]`` (no ``f_0`` in the shifted group)."""
    _check_k(K)
    if not alpha > 1 or not w > 0:
        raise ValueError(f"need alpha > 1 and w > 0, got alpha={alpha}, w={w}")
    half = (K - 2) // 2
    if half >= filt.length:
        raise ValueError(f"K={K} needs shifts up to {half}, filter length is {filt.length}")
    shifts = [k for k in range(-half, half + 1) if k != 0]
    W1 = np.vstack([filt.taps, filt.taps] + [shifted_filter(filt, k) for k in shifts])
    w2 = np.full(K, -float(w))
    w2[0] = alpha * w
    return EqzNetParams("k", K, filt.n1, filt.n2,
                        {"k.W1": W1, "k.b1": np.zeros(K), "k.w2": w2})


def init_random(K: int, n1: int, n2: int, seed) -> EqzNetParams:
    """K-EqzNet with Gaussian weights (first layer scaled by ``1/sqrt(N)``) and zero biases."""
    _check_k(K)
    rng = np.random.default_rng(seed)
    n = n1 + n2 + 1
    return EqzNetParams("k", K, n1, n2, {
        "k.W1": rng.standard_normal((K, n)) / np.sqrt(n),
        "k.b1": np.zeros(K),
        "k.w2": rng.standard_normal(K),
    })


def _rename(weights: dict, prefix: str) -> dict:
    return {prefix + "." + name.split(".", 1)[1]: arr.copy() for name, arr in weights.items()}


def _check_pair(a: EqzNetParams, b: EqzNetParams):
    if a.architecture != "k" or b.architecture != "k":
        raise ValueError("composition takes two K-EqzNet blocks")
    if (a.n1, a.n2) != (b.n1, b.n2):
        raise ValueError(f"input geometry mismatch: {(a.n1, a.n2)} vs {(b.n1, b.n2)}")


def compose_sum(k_params: EqzNetParams, pretrained_l: EqzNetParams) -> EqzNetParams:
    _check_pair(k_params, pretrained_l)
    weights = _rename(k_params.weights, "k") | _rename(pretrained_l.weights, "l")
    return EqzNetParams("sum", k_params.K, k_params.n1, k_params.n2, weights, pretrained_l.K)


def compose_head(k_params: EqzNetParams, l_params: EqzNetParams, head_seed,
                 alpha: float = 2.0, w: float = 1.0, scale: float = 0.1) -> EqzNetParams:
    """Join two blocks through a randomly initialized 2-neuron tanh layer."""
    _check_pair(k_params, l_params)
    rng = np.random.default_rng(head_seed)
    weights = _rename(k_params.weights, "k") | _rename(l_params.weights, "l")
    weights["head.V"] = scale * rng.standard_normal((2, 2))
    weights["head.c"] = np.zeros(2)
    weights["head.u"] = np.array([alpha * w, -w])
    return EqzNetParams("head", k_params.K, k_params.n1, k_params.n2, weights, l_params.K)


def _frames(params: EqzNetParams, frames) -> np.ndarray:
    if isinstance(frames, ObservationFrame):
        if (frames.n1, frames.n2) != (params.n1, params.n2):
            raise ValueError(
                f"frame geometry {(frames.n1, frames.n2)} != network {(params.n1, params.n2)}"
            )
        frames = frames.samples
    Z = np.asarray(frames, dtype=float)
    if Z.shape[-1] != params.input_length:
        raise ValueError(f"frame length {Z.shape[-1]} != network input {params.input_length}")
    return Z


def _block_forward(wt, prefix, Z):
    s = np.tanh(Z @ wt[prefix + ".W1"].T + wt[prefix + ".b1"])
    return s @ wt[prefix + ".w2"], s


def _forward_cached(params: EqzNetParams, Z):
    wt = params.weights
    o_k, s_k = _block_forward(wt, "k", Z)
    if params.architecture == "k":
        return o_k, {"s_k": s_k}
    o_l, s_l = _block_forward(wt, "l", Z)
    if params.architecture == "sum":
        return o_k + o_l, {"s_k": s_k, "s_l": s_l}
    O = np.stack([o_k, o_l], axis=-1)
    g = np.tanh(O @ wt["head.V"].T + wt["head.c"])
    return g @ wt["head.u"], {"s_k": s_k, "s_l": s_l, "O": O, "g": g}


def forward(params: EqzNetParams, frames):
    """Network LLR for one frame (float) or a stack of frames ``(..., N)``."""
    Z = _frames(params, frames)
    out, _ = _forward_cached(params, Z)
    return float(out) if out.ndim == 0 else out


def _block_backward(wt, prefix, Z, s, d_out, grads):
    grads[prefix + ".w2"] = s.T @ d_out
    da = (d_out[:, None] * wt[prefix + ".w2"]) * (1.0 - s * s)
    grads[prefix + ".W1"] = da.T @ Z
    grads[prefix + ".b1"] = da.sum(axis=0)


def loss_and_gradient(params: EqzNetParams, frames, targets):
    """Mean squared error against target LLRs and its exact gradient."""
    Z = np.atleast_2d(_frames(params, frames))
    y = np.asarray(targets, dtype=float).reshape(-1)
    if Z.shape[0] == 0:
        raise ValueError("empty batch")
    out, cache = _forward_cached(params, Z)
    err = out - y
    m = Z.shape[0]
    d = 2.0 * err / m
    wt = params.weights
    grads = {}
    if params.architecture == "k":
        _block_backward(wt, "k", Z, cache["s_k"], d, grads)
    elif params.architecture == "sum":
        _block_backward(wt, "k", Z, cache["s_k"], d, grads)
        _block_backward(wt, "l", Z, cache["s_l"], d, grads)
    else:
        g, O = cache["g"], cache["O"]
        grads["head.u"] = g.T @ d
        dpre = (d[:, None] * wt["head.u"]) * (1.0 - g * g)
        grads["head.V"] = dpre.T @ O
        grads["head.c"] = dpre.sum(axis=0)
        dO = dpre @ wt["head.V"]
        _block_backward(wt, "k", Z, cache["s_k"], dO[:, 0], grads)
        _block_backward(wt, "l", Z, cache["s_l"], dO[:, 1], grads)
    return float(err @ err / m), grads


def gradient(params: EqzNetParams, frames, targets) -> dict:
    return loss_and_gradient(params, frames, targets)[1]


def loss(params: EqzNetParams, frames, targets) -> float:
    out = np.atleast_1d(forward(params, np.atleast_2d(_frames(params, frames))))
    err = out - np.asarray(targets, dtype=float).reshape(-1)
    return float(err @ err / err.size)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 256
    epochs: int = 10
    seed: int = 0
    alpha: float = 2.0
    w_init: float = 1.0
    learning_rate_final: float | None = None  # geometric decay target, None = constant

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if not self.w_init > 0:
            raise ValueError(f"w_init must be positive, got {self.w_init}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.learning_rate < 0 or (self.learning_rate_final is not None and self.learning_rate_final <= 0):
            raise ValueError("learning rates must be non-negative (final rate positive)")

    def epoch_learning_rate(self, epoch: int) -> float:
        if self.learning_rate_final is None or self.epochs < 2 or self.learning_rate == 0:
            return self.learning_rate
        ratio = self.learning_rate_final / self.learning_rate
        return self.learning_rate * ratio ** (epoch / (self.epochs - 1))


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        if self.lr == 0:
            return
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def train(params: EqzNetParams, dataset, config: TrainConfig):
    """Adam on mini-batches reshuffled every epoch.

    Returns a trained copy of ``params`` and the full-dataset loss after each
    epoch.
    """
    Z, y = _dataset_arrays(dataset)
    if Z.shape[0] == 0:
        raise ValueError("empty training set")
    out = params.copy()
    opt = Adam(out.weights, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    rng = np.random.default_rng(config.seed)
    trace = []
    m = Z.shape[0]
    for epoch in range(config.epochs):
        opt.lr = config.epoch_learning_rate(epoch)
        order = rng.permutation(m)
        for lo in range(0, m, config.batch_size):
            idx = order[lo: lo + config.batch_size]
            _, grads = loss_and_gradient(out, Z[idx], y[idx])
            opt.step(out.weights, grads)
        trace.append(loss(out, Z, y))
    return out, np.array(trace)


@dataclass(frozen=True)
class LabeledFrame:
    frame: ObservationFrame
    target_llr: object  # float, or q-vector for M > 2


@dataclass
class LabeledDataset:
    """Frames with their MAP LLR labels, stored as arrays.

    ``targets`` has shape ``(m,)`` for 2-PAM and ``(m, q)`` otherwise;
    ``bits`` holds the transmitted code bits with the same layout.
    """

    frames: np.ndarray
    targets: np.ndarray
    bits: np.ndarray
    n1: int
    n2: int

    def __len__(self):
        return self.frames.shape[0]

    def __getitem__(self, i) -> LabeledFrame:
        return LabeledFrame(ObservationFrame(self.frames[i], self.n1, self.n2), self.targets[i])

    def for_bit(self, m: int) -> "LabeledDataset":
        if self.targets.ndim == 1:
            if m != 0:
                raise IndexError("single-bit dataset has only bit 0")
            return self
        return LabeledDataset(self.frames, self.targets[:, m], self.bits[:, m], self.n1, self.n2)


def _dataset_arrays(dataset):
    if isinstance(dataset, LabeledDataset):
        if dataset.targets.ndim != 1:
            raise ValueError("multi-bit dataset: train one network per bit via for_bit()")
        return dataset.frames, dataset.targets.astype(float)
    if isinstance(dataset, tuple):
        Z, y = dataset
        return np.atleast_2d(np.asarray(Z, dtype=float)), np.asarray(y, dtype=float).reshape(-1)
    items = list(dataset)
    Z = np.array([it.frame.samples for it in items])
    y = np.array([float(it.target_llr) for it in items])
    return Z, y


def simulate_blocks(channel: ChannelModel, constellation: PamConstellation, noise_variance: float,
                    n_blocks: int, block_length: int, seed):
    """Seeded uncoded transmission of ``n_blocks`` independent blocks.

    Returns ``(bits, z)`` with shapes ``(n_blocks, block_length*q)`` and
    ``(n_blocks, block_length)``.
    """
    q = constellation.bits_per_symbol
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    bit_seed, noise_seed = ss.spawn(2)
    bits = random_bits(n_blocks * block_length * q, bit_seed).reshape(n_blocks, -1)
    z = apply_channel(gray_map(bits, constellation), channel.with_noise(noise_variance), noise_seed)
    return bits, z


def build_dataset(channel: ChannelModel, constellation: PamConstellation, snr_db: float,
                  bit_count: int = 10**6, geometry=(7, 7), seed=0, *, block_length: int = 1000,
                  code_rate: float = 1.0) -> LabeledDataset:
    """Labelled frames from a simulated transmission with block BCJR labels."""
    if bit_count < 1:
        raise ValueError("bit_count must be >= 1")
    n1, n2 = geometry
    q = constellation.bits_per_symbol
    sigma2 = ebn0_to_noise_variance(snr_db, constellation, code_rate)
    trellis = build_trellis(channel.with_noise(sigma2), constellation)
    symbols = -(-bit_count // q)
    block_length = min(block_length, symbols)
    n_blocks = -(-symbols // block_length)
    bits, z = simulate_blocks(channel, constellation, sigma2, n_blocks, block_length, seed)
    _, llrs = map_equalize(z, trellis, sigma2, constellation=constellation)
    frames = frame_matrix(z, n1, n2).reshape(-1, n1 + n2 + 1)
    targets = np.clip(llrs.values, -LLR_CLAMP, LLR_CLAMP).reshape(-1, q)
    bits = bits.reshape(-1, q)
    if q == 1:
        targets, bits = targets[:, 0], bits[:, 0]
    return LabeledDataset(np.ascontiguousarray(frames), targets, bits, n1, n2)


def operation_count(params: EqzNetParams) -> int:
    """Multiply-accumulates per output LLR."""
    n = params.input_length
    width = params.K + (params.L if params.architecture != "k" else 0)
    macs = width * n + width
    if params.architecture == "head":
        macs += 2 * 2 + 2
    return macs


def lmmse_operation_count(n1: int, n2: int) -> int:
    return n1 + n2 + 1


# ----------------------------------------------------------------------------
# per-bit bank for M > 2


@dataclass
class EqzNetBank:
    members: list  # one EqzNetParams per bit position

    @property
    def bits_per_symbol(self) -> int:
        return len(self.members)

    def forward(self, frames) -> np.ndarray:
        """``(m, q)`` per-bit LLRs for a stack of frames."""
        return np.stack([np.atleast_1d(forward(p, frames)) for p in self.members], axis=-1)


_CONSTANT_BIAS = 4.0  # tanh(4) = 0.9993: a hidden neuron that outputs a near-constant


def init_bit_eqznet(filt: LmmseFilter, constellation: PamConstellation, bit: int, K: int,
                    alpha: float = 2.0, w: float = 1.0) -> EqzNetParams:
    """LMMSE-tap initialization adapted to one Gray bit position.

    The label of bit ``bit`` flips at midpoints between levels; with the
    filter gain ``g`` the LMMSE estimate ``a = f^T z`` crosses them at
    ``g * midpoint``. Hidden rows keep the LMMSE taps (the shifted rows too),
    but the output weights of the shifted neighbour neurons start at zero:
    their soft bits are not calibrated to multi-level symbols.

    * one flip at ``t``: output ``(alpha - 1) w tanh(a - t)``, signed by the
      label of the top level, so decisions match the LMMSE threshold;
    * two flips at ``t_lo < t_hi`` and ``K >= 4``: a bump
      ``w [tanh(a - t_hi) + tanh(t_lo - a) + tanh(t_hi - t_lo)]`` built from rows ``f`` and
      ``-f`` plus one constant neuron (zero row, saturated bias), which is
      positive outside the thresholds and negative between them;
    * otherwise (two flips with ``K = 2``, or more flips) the outer
      thresholds are used as in the one-flip case. Two monotone neurons
      without an output bias cannot separate both tails from the middle,
      so one outer level starts on the wrong side.
    """
    params = init_k_eqznet(filt, K, alpha, w)
    labels = constellation.bit_labels[:, bit]
    levels = constellation.levels
    flips = np.nonzero(np.diff(labels))[0]
    thresholds = filt.gain * 0.5 * (levels[flips] + levels[flips + 1])
    sign = 1.0 if labels[-1] == 0 else -1.0
    W1, b1, w2 = params.weights["k.W1"], params.weights["k.b1"], params.weights["k.w2"]
    w2[2:] = 0.0
    if thresholds.size == 2 and K >= 4:
        t_lo, t_hi = thresholds.min(), thresholds.max()
        W1[1] = -filt.taps
        W1[2] = 0.0
        b1[:3] = -t_hi, t_lo, _CONSTANT_BIAS
        # c = tanh(t_hi - t_lo) puts the two zero crossings exactly on the thresholds
        c = np.tanh(t_hi - t_lo) / np.tanh(_CONSTANT_BIAS)
        w2[:3] = sign * w * np.array([1.0, 1.0, c])
        return params
    b1[0], b1[1] = -thresholds.max(), -thresholds.min()
    w2[:2] *= sign
    return params


def per_bit_equalizer_bank(filt: LmmseFilter, constellation: PamConstellation, dataset: LabeledDataset,
                           K: int, config: TrainConfig):
    """One network per Gray bit position, each trained on its own labels."""
    if constellation.order <= 2:
        raise ValueError("per-bit bank is for M > 2; use a single network for 2-PAM")
    members, traces = [], []
    for m in range(constellation.bits_per_symbol):
        init = init_bit_eqznet(filt, constellation, m, K, config.alpha, config.w_init)
        trained, trace = train(init, dataset.for_bit(m), config)
        members.append(trained)
        traces.append(trace)
    return EqzNetBank(members), traces


def _initial_block(filt, constellation, bit, K, init, seed, config):
    if init == "random":
        return init_random(K, filt.n1, filt.n2, seed)
    if constellation.order > 2:
        return init_bit_eqznet(filt, constellation, bit, K, config.alpha, config.w_init)
    return init_k_eqznet(filt, K, config.alpha, config.w_init)


def train_recipe(architecture: str, K: int, L: int, filt: LmmseFilter, constellation: PamConstellation,
                 dataset: LabeledDataset, config: TrainConfig, *, init: str = "lmmse", seed: int = 0):
    """Train one shipped configuration end to end.

    ``k`` trains a single K-EqzNet. ``sum`` and ``head`` follow the progressive
    recipe: train the K block, train a separate L block, compose, then
    fine-tune every parameter. For M > 2 this runs once per bit position and
    returns an :class:`EqzNetBank`. ``init`` is ``"lmmse"`` or ``"random"``.

    Returns ``(model, stages)`` where ``stages`` lists ``(name, loss_trace)``.
    """
    if architecture not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {architecture!r}")
    if init not in ("lmmse", "random"):
        raise ValueError(f"init must be 'lmmse' or 'random', got {init!r}")
    q = constellation.bits_per_symbol
    seeds = np.random.SeedSequence(seed).generate_state(3 * q)
    members, stages = [], []
    for m in range(q):
        data = dataset.for_bit(m)
        tag = f"bit{m}." if q > 1 else ""
        k_net = _initial_block(filt, constellation, m, K, init, seeds[3 * m], config)
        k_net, trace = train(k_net, data, config)
        stages.append((f"{tag}k", trace))
        if architecture == "k":
            members.append(k_net)
            continue
        l_net = _initial_block(filt, constellation, m, L, init, seeds[3 * m + 1], config)
        l_net, trace = train(l_net, data, config)
        stages.append((f"{tag}l", trace))
        if architecture == "sum":
            joint = compose_sum(k_net, l_net)
        else:
            joint = compose_head(k_net, l_net, seeds[3 * m + 2], config.alpha, config.w_init)
        joint, trace = train(joint, data, config)
        stages.append((f"{tag}{architecture}", trace))
        members.append(joint)
    model = members[0] if q == 1 else EqzNetBank(members)
    return model, stages


# ----------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params, config: TrainConfig | None = None, provenance: dict | None = None):
    """Write a self-describing JSON checkpoint (a single net or a per-bit bank)."""
    members = params.members if isinstance(params, EqzNetBank) else [params]
    record = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": "bank" if isinstance(params, EqzNetBank) else "single",
        "members": [_member_record(p) for p in members],
        "train_config": asdict(config) if config is not None else None,
        "provenance": provenance or {},
    }
    Path(path).write_text(json.dumps(record, indent=1, sort_keys=True))
    return Path(path)


def _member_record(p: EqzNetParams) -> dict:
    return {
        "architecture": p.architecture,
        "K": p.K,
        "L": p.L,
        "n1": p.n1,
        "n2": p.n2,
        "tensors": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel(order="C")]}
            for name, arr in sorted(p.weights.items())
        },
    }


def load_checkpoint(path):
    """Return ``(params_or_bank, train_config, provenance)``."""
    record = json.loads(Path(path).read_text())
    if record.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an {CHECKPOINT_FORMAT} file")
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {record.get('version')}")
    members = []
    for m in record["members"]:
        weights = {
            name: np.array(t["data"], dtype=float).reshape(t["shape"])
            for name, t in m["tensors"].items()
        }
        members.append(EqzNetParams(m["architecture"], m["K"], m["n1"], m["n2"], weights, m["L"]))
    params = EqzNetBank(members) if record["kind"] == "bank" else members[0]
    cfg = TrainConfig(**record["train_config"]) if record["train_config"] else None
    return params, cfg, record["provenance"]

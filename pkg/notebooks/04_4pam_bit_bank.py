"""
4-PAM with one network per Gray bit
===================================

For M > 2 each label bit gets its own EqzNet. Each member starts from the
LMMSE taps with its hidden biases placed on the decision thresholds where
that bit flips, then trains on its own BCJR bit LLRs.

The inner Gray bit is 1 between the two middle thresholds and 0 outside, so
its network needs at least four hidden neurons to start from the LMMSE
decisions. The output scale ``w`` is raised to 10 here: target LLRs reach
+-40, and with ``w = 1`` the first epochs are spent mostly on magnitude.
"""

import numpy as np

from eqzsim.eqznet import EqzNetBank, TrainConfig, build_dataset, init_bit_eqznet, simulate_blocks, train_recipe
from eqzsim.lmmse import design_filter, gaussian_bit_llrs
from eqzsim.turbo import eqznet_llrs
from eqzsim.txchain import ChannelModel, PamConstellation, ebn0_to_noise_variance, frame_matrix

const = PamConstellation(4)
print("levels:", np.round(const.levels, 4), "labels:", const.bit_labels.tolist())

ebn0 = 14.0
n1 = n2 = 7
ch = ChannelModel.preset("h_B", ebn0_to_noise_variance(ebn0, const))
filt = design_filter(ch, n1, n2)

# %%
bits, z = simulate_blocks(ch, const, ch.noise_variance, 40, 5000, seed=7)
est = frame_matrix(z, n1, n2) @ filt.taps
lmmse_llrs = gaussian_bit_llrs(est, filt.gain, const)

data = build_dataset(ch, const, ebn0, 200_000, (n1, n2), seed=1)
cfg = TrainConfig(learning_rate=1e-2, epochs=5, w_init=10.0)
untrained = EqzNetBank([init_bit_eqznet(filt, const, m, 4, cfg.alpha, cfg.w_init) for m in range(2)])
bank, _ = train_recipe("k", 4, 2, filt, const, data, cfg)

# %%
# Per-bit error rates: the outer bit (first label) is the easier one.
for name, values in (("LMMSE", lmmse_llrs), ("untrained bank", eqznet_llrs(untrained, z, n1, n2)),
                     ("trained bank", eqznet_llrs(bank, z, n1, n2))):
    per_bit = [(values.reshape(-1, 2)[:, m] < 0) != bits.reshape(-1, 2)[:, m] for m in range(2)]
    print(f"{name:>14}: BER bit0 {np.mean(per_bit[0]):.3e}, bit1 {np.mean(per_bit[1]):.3e}")

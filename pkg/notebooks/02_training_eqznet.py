"""
Training EqzNet from the LMMSE solution
=======================================

An EqzNet is a one-hidden-layer tanh network whose hidden weights start as
copies of the LMMSE taps. Untrained, a 2-EqzNet makes exactly the LMMSE hard
decisions; training pulls its LLRs toward the BCJR LLRs used as labels.
The budget here is small so the script runs in about a minute.
"""

import numpy as np

from eqzsim.eqznet import (
    TrainConfig,
    build_dataset,
    forward,
    init_k_eqznet,
    operation_count,
    lmmse_operation_count,
    simulate_blocks,
    train_recipe,
)
from eqzsim.lmmse import design_filter, llr
from eqzsim.txchain import ChannelModel, PamConstellation, ebn0_to_noise_variance, frame_matrix

const = PamConstellation(2)
ebn0 = 20.0
n1 = n2 = 7
ch = ChannelModel.preset("h_A", ebn0_to_noise_variance(ebn0, const))
filt = design_filter(ch, n1, n2)

# %%
# A held-out test set shared by every equalizer below.
bits, z = simulate_blocks(ch, const, ch.noise_variance, 100, 5000, seed=99)
frames = frame_matrix(z, n1, n2).reshape(-1, n1 + n2 + 1)
bits = bits.ravel()


def ber(llrs):
    return float(np.mean((llrs < 0) != bits))


lmmse_llrs = llr(filt, frames)
untrained = forward(init_k_eqznet(filt, 2), frames)
print(f"LMMSE BER {ber(lmmse_llrs):.3e}; untrained 2-EqzNet BER {ber(untrained):.3e}")
print("hard decisions identical:", bool(np.all((lmmse_llrs < 0) == (untrained < 0))))

# %%
# Training data: frames labelled with block-BCJR LLRs.
data = build_dataset(ch, const, ebn0, 200_000, (n1, n2), seed=1)
cfg = TrainConfig(learning_rate=1e-2, learning_rate_final=1e-4, epochs=8, batch_size=256)

results = {"LMMSE": lmmse_llrs}
for arch, K, L, label in (("k", 2, 2, "2-EqzNet"), ("head", 6, 2, "(8,2)-EqzNet")):
    model, stages = train_recipe(arch, K, L, filt, const, data, cfg)
    results[label] = forward(model, frames)
    ratio = operation_count(model) / lmmse_operation_count(n1, n2)
    last = ", ".join(f"{name} {trace[-1]:.3f}" for name, trace in stages)
    print(f"{label}: final stage losses {last}; MACs per bit {ratio:.2f} x LMMSE")

# %%
# BER and the fraction of LLRs that sit near zero (the uncertain decisions).
# The (8,2)-EqzNet head starts from small random weights, so its fine-tuning
# loss begins above the K block's. With this small budget the 2-EqzNet can
# end a little worse than LMMSE; the shipped configs train on 1e6 bits for
# 20 epochs.
print(f"\n{'equalizer':>14} {'BER':>10} {'P(|LLR|<1)':>11}")
for label, values in results.items():
    print(f"{label:>14} {ber(values):10.3e} {np.mean(np.abs(values) < 1):11.4f}")

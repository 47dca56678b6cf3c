"""
Channels, LMMSE and BCJR on an ISI link
=======================================

We transmit Gray-labelled 2-PAM over the two preset channels and compare
the linear LMMSE equalizer with the optimal symbol-by-symbol MAP (BCJR)
equalizer. The gap between them is the room a learned equalizer can claim.
"""

import numpy as np

from eqzsim.bcjr import build_trellis, map_equalize
from eqzsim.eqznet import simulate_blocks
from eqzsim.lmmse import design_filter, llr
from eqzsim.txchain import ChannelModel, PamConstellation, ebn0_to_noise_variance, frame_matrix

# One symbol per bit, unit average energy.
const = PamConstellation(2)
print("2-PAM levels:", const.levels)

# %%
# The LMMSE filter looks at a frame of 15 received samples centred on the
# symbol of interest. Its reliability constant C turns the estimate into an LLR.
n1 = n2 = 7
for name in ("h_A", "h_B"):
    ch = ChannelModel.preset(name, ebn0_to_noise_variance(16.0, const))
    filt = design_filter(ch, n1, n2)
    print(f"{name}: taps {np.round(ch.taps, 3)}, filter gain {filt.gain:.3f}, C = {filt.reliability_constant:.3f}")

# %%
# Bit error rates over a short Eb/N0 grid. h_A has a deep spectral null, so
# the linear equalizer pays a large penalty there; on h_B it is close to MAP.
print(f"\n{'channel':>7} {'Eb/N0':>6} {'LMMSE':>10} {'BCJR':>10}")
for name, grid in (("h_A", (12, 16, 20)), ("h_B", (6, 8, 10))):
    for ebn0 in grid:
        ch = ChannelModel.preset(name, ebn0_to_noise_variance(ebn0, const))
        bits, z = simulate_blocks(ch, const, ch.noise_variance, 40, 5000, seed=ebn0)
        lin = llr(design_filter(ch, n1, n2), frame_matrix(z, n1, n2))
        _, opt = map_equalize(z, build_trellis(ch, const), ch.noise_variance)
        ber_lin = np.mean((lin < 0) != bits)
        ber_map = np.mean((opt.values < 0) != bits)
        print(f"{name:>7} {ebn0:6.1f} {ber_lin:10.2e} {ber_map:10.2e}")

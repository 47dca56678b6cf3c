"""
Turbo equalization with an LDPC code
====================================

The equalizer and the LDPC decoder exchange extrinsic LLRs. We compare the
all-LMMSE schedule with the all-BCJR schedule on the shipped (1998, 1776)
code, and look at how the decoded BER evolves across iterations.
"""

import numpy as np

from eqzsim.ldpc import shipped_code
from eqzsim.turbo import TurboConfig, transmit_coded, turbo_equalize
from eqzsim.txchain import ChannelModel, PamConstellation, ebn0_to_noise_variance

code = shipped_code()
const = PamConstellation(2)
print(f"code n={code.n}, k={code.k}, rate {code.rate:.3f}")

# %%
# Eb/N0 counts information bits, so the code rate enters the noise level.
ebn0 = 15.5
ch = ChannelModel.preset("h_A", ebn0_to_noise_variance(ebn0, const, code.rate))
messages, _, z = transmit_coded(code, const, ch, n_blocks=40, seed=3)

# %%
# Each schedule sees the same received blocks.
for first, later in (("lmmse", "lmmse"), ("bcjr", "bcjr")):
    cfg = TurboConfig(iterations=3, first_iteration_equalizer=first, subsequent_equalizer=later)
    res = turbo_equalize(z, code, ch, const, config=cfg)
    errs = res.bit_errors(messages)
    per_iter = ", ".join(f"{e / messages.size:.2e}" for e in errs)
    print(f"{first:>5} then {later:<5}: BER by iteration [{per_iter}], "
          f"{int(res.converged.sum())}/{len(messages)} blocks decoded to a codeword")

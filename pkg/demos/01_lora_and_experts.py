"""
LoRA pairs, expert slices and the gate
======================================

A LoRA pair (A, B) adds a rank-r update to a frozen weight. Cutting the pair
into K row/column blocks gives K experts whose products sum back to B A, and a
softmax gate decides how much of each expert a sequence gets.
"""

import numpy as np

from ilora.adapters import (AdapterShapeConfig, GatingNetwork, LoraAdapter, aggregate_delta,
                            count_trainable, gate, split_experts)
from ilora.core import Param, Tensor, make_rng

rng = make_rng(0)

# a fresh adapter starts with B = 0, so the frozen output is unchanged
adapter = LoraAdapter.create(d_in=16, d_out=16, r=8, alpha=16.0, rng=rng)
print("fresh B is zero:", not adapter.b.value.any())

# give B some values so the experts have something to say
adapter.b.value[...] = rng.normal(size=adapter.b.value.shape)

bank = split_experts(adapter, 4)
print("expert shapes:", [a.shape for a in bank.a], [b.shape for b in bank.b])

total = sum(b.value @ a.value for a, b in zip(bank.a, bank.b))
print("sum of expert products equals B A:", np.allclose(total, adapter.b.value @ adapter.a.value))

# %%
# The gate
# --------
# W_g starts at zero, so every sequence begins with equal weights.

g = GatingNetwork.create(k=4, d=6)
z = rng.normal(size=(3, 6))
print("initial weights:\n", gate(g, z).value)

g.w_g.value[...] = 0.3 * rng.normal(size=g.w_g.value.shape)
omega = gate(g, z).value
print("trained-looking weights:\n", omega.round(3))

# each row of omega mixes the experts into one update for that sequence
h = rng.normal(size=(1, 16))
for i in range(3):
    delta = aggregate_delta(bank, omega[i])
    print(f"sequence {i}: update norm {np.linalg.norm(delta(h)):.3f}")

# %%
# What the gate costs
# -------------------

for k in (1, 2, 4, 8):
    c = count_trainable("ilora", AdapterShapeConfig(k_experts=k))
    print(f"K={k}: adapter {c.adapter}, gate {c.gate}, increase {100 * c.relative_increase:.2f}%")

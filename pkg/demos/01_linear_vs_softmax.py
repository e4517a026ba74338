# %% [markdown]
# # Linear attention next to softmax attention
#
# Softmax attention weights each value row by exp(q.k). The linear variant
# swaps that for 1 + cos(q, k), which stays non-negative and factorizes,
# so the N x N weight matrix never has to exist.

# %%
import numpy as np

from maresu import attention as att
from maresu.numerics import Rng, seeded_fill

rng = Rng(0)
q, k, v = (seeded_fill(rng, 6, 4) for _ in range(3))

# %% [markdown]
# The weight matrices, row by row. Both are row-stochastic; the linear one is
# flatter because 1 + cos lives in [0, 2] while exp(q.k) is unbounded.

# %%
np.set_printoptions(precision=3, suppress=True)
print(att.attention_weights(q, k, att.KernelChoice.EXP_EXACT))
print(att.attention_weights(q, k, att.KernelChoice.TAYLOR_L2))

# %% [markdown]
# Three routes to the same linear output: explicit weights, a per-row loop,
# and the factorized form. They agree to rounding.

# %%
direct = att.generalized_attention_direct(q, k, v, att.KernelChoice.TAYLOR_L2)
rowwise = att.linear_attention_rowwise(q, k, v)
fast = att.linear_attention_vectorized(q, k, v)
print("row loop vs direct:  ", np.abs(rowwise - direct).max())
print("factorized vs direct:", np.abs(fast - direct).max())

# %% [markdown]
# Memory: the factorized form only holds per-row buffers plus a d_k x d_v
# summary. memtrack records every temporary the kernels declare.

# %%
from maresu import memtrack

big_q, big_k, big_v = (seeded_fill(rng, 4096, 32) for _ in range(3))
for name, fn in [("softmax", att.softmax_attention), ("linear", att.linear_attention_vectorized)]:
    with memtrack.track_allocations() as log:
        fn(big_q, big_k, big_v)
    print(f"{name:8s} largest temporary {log.largest:>10,d} floats")

# %% [markdown]
# Operation counts at N = 1024, d = 64 follow the same story.

# %%
dims = att.AttentionDims(n=1024, c=64, d_k=64, d_v=64)
print("softmax flops", att.flop_count("softmax", dims))
print("linear  flops", att.flop_count("lam", dims))

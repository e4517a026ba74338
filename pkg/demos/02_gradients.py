# %% [markdown]
# # Gradients through attention
#
# A small define-then-run tape records primitives, replays them forward and
# pushes adjoints back. Central differences are the referee.

# %%
import numpy as np

from maresu.attention import AttentionDims
from maresu.grad import GRADCHECK_OPS, Tape, finite_diff, gradcheck, lam_descent, tape_eval, tape_grad

t = Tape()
x = t.input("X")
t.sum(t.row_softmax(x))
print("sum of softmax rows:", tape_eval(t, {"X": np.random.default_rng(0).normal(size=(3, 5))}))
print("its gradient is zero:", np.abs(tape_grad(t)["X"]).max())

# %% [markdown]
# Every differentiable op against finite differences.

# %%
dims = AttentionDims(n=8, c=4, d_k=4, d_v=4)
for op in GRADCHECK_OPS:
    print(gradcheck(op, dims, seed=0))

# %% [markdown]
# Finite differences on a hand-rolled function, for comparison.

# %%
print(finite_diff(lambda m: float((m**2).sum()), [[1.0, 2.0]]))

# %% [markdown]
# Is the linear mechanism trainable? Fit its output to a random target by
# plain gradient descent on Q, K and V.

# %%
losses = lam_descent(AttentionDims(n=16, c=4, d_k=4, d_v=4), seed=0, steps=50, rate=0.05)
print(" ".join(f"{v:.2f}" for v in losses[::10]))
print("strictly decreasing:", all(b < a for a, b in zip(losses, losses[1:])))

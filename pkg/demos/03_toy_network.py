# %% [markdown]
# # A toy multi-stage attention U-Net
#
# Residual encoder, an attention block on every skip path, nearest-neighbour
# decoder. Everything runs on numpy at 32 x 32.

# %%
import tempfile
from pathlib import Path

import numpy as np

from maresu import segnet
from maresu.pnm import read_labels, write_pgm

spec = segnet.NetworkSpec.resnet18_like(num_classes=6)
weights = segnet.build_network(spec, seed=0)
print("parameters:", segnet.param_count(weights))
print("attention flops at 32x32:", segnet.attention_flops(spec, 32, 32))
print("attention flops at 64x64:", segnet.attention_flops(spec, 64, 64))

# %% [markdown]
# Stage shapes, then the logits.

# %%
img = segnet.ImageTensor(np.random.default_rng(1).uniform(size=(32, 32, 3)))
stem, stages = segnet.encode(weights, img)
for i, s in enumerate(stages):
    print(f"stage {i}: {s.shape}")
logits = segnet.forward(weights, img)
print("logits:", logits.data.shape)

# %% [markdown]
# Freshly built blocks have zero gammas, so they pass the skip through and
# the network is a plain U-Net. Turning the gammas on changes the output.

# %%
plain = segnet.forward(weights, img, skips="plain")
print("zero gamma vs plain:", np.abs(logits.data - plain.data).max())
lively = weights.with_gammas(0.5, 0.5)
print("gamma 0.5 vs plain:", np.abs(segnet.forward(lively, img).data - plain.data).max())

# %% [markdown]
# Weights and label maps round-trip through their files.

# %%
with tempfile.TemporaryDirectory() as tmp:
    wpath = Path(tmp) / "net.maru"
    segnet.save_weights(lively, wpath)
    print("checksum preserved:", segnet.load_weights(wpath).checksum() == lively.checksum())
    lpath = Path(tmp) / "labels.pgm"
    labels = segnet.predict_labels(lively, img)
    write_pgm(labels, lpath)
    print("labels preserved:", np.array_equal(read_labels(lpath), labels))

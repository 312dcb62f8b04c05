# %% [markdown]
# # Codes and pruned subspaces
#
# A cell of the NAS-Bench-201 space has six edges, each picking one of five
# operations. Writing the chosen option index per edge gives a six-digit code.

# %%
import numpy as np

from ncodenas import decode, encode, nas_bench_201_space, parse_ncode, space_cardinality

space = nas_bench_201_space()
print(space.labels)
print("cardinality:", space_cardinality(space))

# %%
cell = dict(zip(space.labels, ["nor_conv_3x3"] * 3 + ["skip_connect", "nor_conv_1x1", "nor_conv_3x3"]))
code = encode(space, cell)
print(code)
assert decode(space, parse_ncode(space, "333123")) == cell

# %% [markdown]
# Training data comes from many small subspaces. Each dimension is dropped
# with probability one half (pinned to its null option, here `none`), and
# each option of a surviving dimension is dropped with probability one half.

# %%
from ncodenas import prune_space, sample_from_subspace, subspace_cardinality

rng = np.random.default_rng(0)
for _ in range(5):
    sub = prune_space(space, rng=rng)
    print(subspace_cardinality(sub), sub.to_dict())

# %%
sub = prune_space(space, rng=np.random.default_rng(3))
print([str(sample_from_subspace(sub, rng)) for _ in range(8)])

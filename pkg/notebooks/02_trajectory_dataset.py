# %% [markdown]
# # Building ranking samples
#
# One sample holds an evaluated history, a list of unevaluated candidates
# and the best candidate as the answer. A synthetic landscape stands in for
# a trained-network table here.

# %%
import json
import tempfile
from pathlib import Path

from ncodenas import (
    GenConfig,
    SyntheticEvaluator,
    generate_dataset,
    generate_sample,
    random_landscape,
    render_prompt,
    uniform_space,
    verify_dataset,
)

space = uniform_space("grid-8x6", 8, 6)
evaluator = SyntheticEvaluator(space, random_landscape(space, seed=1, n_interactions=6))

# %%
cfg = GenConfig(n_history_range=(4, 6), n_candidates_range=(3, 5), dim_keep_prob=1.0)
sample = generate_sample(space, evaluator, cfg, 7)
print(render_prompt(sample))
print("answer:", sample.answer)

# %% [markdown]
# A dataset is a JSON Lines file. Each sample has its own derived seed, so
# the file bytes depend only on the inputs and the dataset seed.

# %%
out = Path(tempfile.mkdtemp()) / "train.jsonl"
n = generate_dataset(space, evaluator, GenConfig(n_samples=20), seed=0, out_path=out)
print(n, "samples,", out.stat().st_size, "bytes")
print(json.loads(out.read_text().splitlines()[0])["meta"])
assert verify_dataset(out, evaluator) == n

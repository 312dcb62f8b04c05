"""Cross-domain architecture search over positional NCode strings."""

from .evaluators import (
    EvaluatorSpec,
    ExternalEvaluator,
    SyntheticEvaluator,
    SyntheticLandscape,
    TabularEvaluator,
    enumerate_optimum,
    load_table,
    random_landscape,
    separable_landscape,
)
from .pruner import Fixed, Subspace, prune_space, sample_from_subspace, subspace_cardinality
from .rankers import (
    KnnRanker,
    LlmEndpointConfig,
    LlmRanker,
    OracleRanker,
    RandomRanker,
    RankDecision,
    rank_knn_surrogate,
    rank_llm,
    rank_oracle,
    rank_random,
)
from .search import (
    SearchConfig,
    SearchTrace,
    provenance_ratio,
    run_random_search,
    run_regularized_evolution,
    run_search,
    shuffled_history_search,
)
from .space import (
    ArchRecord,
    Dimension,
    NCode,
    Provenance,
    SearchSpace,
    canonical_performance,
    decode,
    encode,
    load_space,
    nas_bench_201_space,
    parse_ncode,
    render,
    space_cardinality,
    uniform_space,
)
from .stats import SignTest, mean_sd, paired_sign_test
from .trajectory import (
    GenConfig,
    TrajectorySample,
    expected_output,
    generate_dataset,
    generate_sample,
    render_prompt,
    shuffle_mapping,
    verify_dataset,
)

__version__ = "0.1.0"

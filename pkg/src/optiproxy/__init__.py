"""Gradient-guided architecture search with a trainable landscape proxy."""

from . import _mallopt

_mallopt.tune()

from .errors import (
    EnumerationRefused,
    InvalidArchitecture,
    InvalidBenchmark,
    InvalidConfig,
    InvalidInput,
    InvalidLayout,
    InvalidMode,
    MissingFidelity,
    NumericalFailure,
    OptiProxyError,
    OracleFailure,
    SamplingExhausted,
    SpaceExhausted,
    UnknownArchitecture,
    UnknownDevice,
)
from .oracles import (
    ConstraintSpec,
    SyntheticLandscape,
    TabularBenchmark,
    adapt_penalty,
    brute_force_optimum,
    constrained_objective,
    gen_synthetic,
)
from .regressor import ProxyRegressor
from .relaxation import (
    GumbelNoise,
    ParamGroup,
    SoftEmbedding,
    TemperatureSchedule,
    ZeroNoise,
    init_params_lhs,
    sample_discrete,
    sample_soft,
    temperature_at,
    uniform_params,
)
from .search import SearchConfig, SearchTrace, optimize_params, propose_candidates
from .smbo import (
    FinalizeResult,
    History,
    OptiProxySearch,
    RunConfig,
    RunResult,
    finalize_low_fidelity,
    random_search_baseline,
    run,
    select_top_b,
)
from .space import (
    Architecture,
    GroupLayout,
    SpaceDescriptor,
    TopologyMode,
    canonical_hash,
    chain_space,
    decode_arch,
    encode_arch,
    enumerate_space,
    group_scores,
    grouped_layout,
    load_space,
    make_architecture,
    nb101_like_space,
    nb201_like_space,
    nb301_like_space,
    save_space,
    validate,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

"""Likelihood-free Bayesian inference with rare-event SMC likelihood estimates."""

from .core import (
    BoxPrior,
    ContractError,
    DegenerateWeightsError,
    IndicatorKernel,
    LatentRandomness,
    LogWeights,
    ObservedData,
    ParameterPoint,
    SimulatorModel,
    ess,
    kernel_log_weight,
    multinomial_resample,
    normalize,
    stream,
)
from .inner_smc import (
    AdaptiveSchedule,
    LatentPopulation,
    MoveConfig,
    adapt_epsilon,
    init_population,
    maybe_resample,
    move_population,
    reweight_to,
    run_to_tolerance,
)
from .mcmc import TruncNormalProposal, abc_mcmc_step, fit_proposal, re_abc_mcmc_move, run_abc_mcmc
from .outer_smc import (
    AdaptConfig,
    PayloadConfig,
    SamplerConfig,
    SamplerOutput,
    StopRule,
    adapt_num_moves,
    cess,
    evidence_estimate,
    run_abc_smc,
    run_re_abc_smc2,
)

__version__ = "0.1.0"

"""Realized local volatility surfaces from high-frequency tick data.

Pipeline: ingest ticks -> time-price grid with presence mask -> per-cell
stick-breaking Gaussian mixture fitted by HMC -> annualized volatility
surface with credible intervals, including counterfactual (unvisited)
cells. Black-Scholes / implied-vol / local-vol comparison tools included.
"""

from .ingest import (
    SESSION_SECONDS,
    Tick,
    TickSeries,
    load_ticks,
    normalize_price,
    normalize_time,
    resample,
    save_ticks,
    synth_gbm_ticks,
)
from .grid import (
    GridData,
    GridSpec,
    aggregate_return,
    assign_cell,
    build_grid,
    destandardize_returns,
    standardize_returns,
)
from .model import (
    MixtureSpec,
    ModelDims,
    ModelParams,
    Posterior,
    cell_mixture,
    component_means,
    grad_log_posterior,
    log_likelihood,
    log_posterior,
    log_prior,
    mixture_logpdf,
    mixture_moments,
    stick_break,
)
from .sampler import (
    Chain,
    HmcConfig,
    diagnostics,
    effective_sample_size,
    hamiltonian,
    hmc_step,
    kinetic,
    leapfrog,
    run_chain,
)
from .surface import (
    SurfaceConfig,
    VolSurface,
    annualize,
    build_surface,
    credible_interval,
    export_surface,
    load_surface,
    predictive_std,
)
from .voltools import (
    CallGrid,
    Greeks,
    ImpliedCurve,
    OptionQuote,
    bs_greeks,
    bs_price,
    dupire_local_vol,
    implied_curve,
    implied_vol,
    realized_var_proxy,
)

__version__ = "0.1.0"

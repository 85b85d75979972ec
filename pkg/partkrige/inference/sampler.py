"""Adaptive random-walk Metropolis for one partition's conditional model.

Each segment's (tau2, sigma2, phi1, phi2, eta) block moves jointly under a
spherical Gaussian proposal in standardized coordinates, reflected at the
prior support; mu moves by a scalar random walk. Proposal scales adapt on
the log scale every ``adapt_window`` iterations during burn-in and are frozen
afterwards.
"""

import logging
import math
import time
from typing import Callable

import numpy as np

from partkrige.errors import ConvergenceError, NumericError
from partkrige.inference.likelihood import (
    SegmentBlock,
    gaussian_logpdf,
    prepare_segments,
    segment_factor,
    segment_frames,
)
from partkrige.models import (
    PARAM_NAMES,
    ChainConfig,
    ModelState,
    Partition,
    PosteriorDraws,
    PriorBounds,
    SegmentFrame,
    SegmentParams,
    SpatialDataset,
)
from partkrige.rng import stream
from partkrige.spatial.covariance import CholeskyFactor

logger = logging.getLogger(__name__)

SMALL_SEGMENT = 5
ADAPT_EXPONENT = 0.6
INITIAL_BLOCK_SCALE = 0.1


def reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Fold ``x`` back into [lo, hi] by repeated reflection at the edges."""
    width = hi - lo
    y = np.mod(x - lo, 2.0 * width)
    y = np.where(y > width, 2.0 * width - y, y)
    return lo + y


def _sample_variance(values: np.ndarray) -> float:
    v = float(np.var(values, ddof=1)) if values.size > 1 else 0.0
    return v if v > 0 else 1.0


class _Chain:
    """Mutable sampler state; only used inside run_chain."""

    def __init__(
        self,
        blocks: list[SegmentBlock],
        config: ChainConfig,
        bounds: PriorBounds,
        rng: np.random.Generator,
        z_var: float,
    ) -> None:
        self.blocks = blocks
        self.config = config
        self.bounds = bounds
        self.rng = rng
        self.K = len(blocks)
        variance_ref = min(z_var, bounds.tau2_max / 2.0)
        self.reference = np.array([variance_ref, variance_ref, bounds.phi_max, bounds.phi_max, bounds.eta_max])
        self.free = np.array([name not in config.fixed for name in PARAM_NAMES], dtype=float)
        self.moves_mu = "mu" not in config.fixed
        self.log_scales = np.full(self.K, math.log(INITIAL_BLOCK_SCALE))
        n_total = sum(b.index.size for b in blocks)
        self.log_mu_scale = math.log(math.sqrt(z_var / max(n_total, 1)))
        self.params = np.zeros((self.K, 5))
        self.mu = 0.0
        self.factors: list[CholeskyFactor | None] = [None] * self.K
        self.seg_ll = [0.0] * self.K

    # --- state evaluation ---

    def params_of(self, k: int, row: np.ndarray | None = None) -> SegmentParams:
        return SegmentParams.from_array(self.params[k] if row is None else row, self.config.nu)

    def _segment_ll(self, k: int, factor: CholeskyFactor | None, mu: float) -> float:
        block = self.blocks[k]
        if block.index.size == 0:
            return 0.0
        return gaussian_logpdf(factor, block.values - mu)

    def _factor(self, k: int, row: np.ndarray) -> CholeskyFactor | None:
        if self.blocks[k].index.size == 0:
            return None
        return segment_factor(self.params_of(k, row), self.blocks[k])

    def set_state(self, mu: float, params: np.ndarray) -> bool:
        """Load a state and cache its factors; False when it is unusable."""
        if not all(self.bounds.contains(row) for row in params):
            return False
        try:
            factors = [self._factor(k, params[k]) for k in range(self.K)]
        except NumericError:
            return False
        self.mu, self.params, self.factors = mu, params.copy(), factors
        self.seg_ll = [self._segment_ll(k, factors[k], mu) for k in range(self.K)]
        return math.isfinite(self.loglik)

    @property
    def loglik(self) -> float:
        return sum(self.seg_ll)

    def log_mu_prior(self, mu: float) -> float:
        return -0.5 * (mu / self.bounds.mu_sd) ** 2

    # --- moves ---

    def update_segment(self, k: int) -> bool:
        if not self.free.any():
            return False
        step = math.exp(self.log_scales[k]) * self.reference * self.free * self.rng.standard_normal(5)
        proposal = reflect(self.params[k] + step, self.bounds.lower, self.bounds.upper)
        log_u = math.log1p(-self.rng.random())
        if not self.bounds.contains(proposal):
            return False
        try:
            factor = self._factor(k, proposal)
        except NumericError:
            return False
        ll = self._segment_ll(k, factor, self.mu)
        # uniform priors cancel inside the support
        if math.isfinite(ll) and log_u < ll - self.seg_ll[k]:
            self.params[k] = proposal
            self.factors[k] = factor
            self.seg_ll[k] = ll
            return True
        return False

    def update_mu(self) -> bool:
        if not self.moves_mu:
            return False
        proposal = self.mu + math.exp(self.log_mu_scale) * self.rng.standard_normal()
        log_u = math.log1p(-self.rng.random())
        seg_ll = [self._segment_ll(k, self.factors[k], proposal) for k in range(self.K)]
        log_ratio = sum(seg_ll) - self.loglik + self.log_mu_prior(proposal) - self.log_mu_prior(self.mu)
        if log_u < log_ratio:
            self.mu = proposal
            self.seg_ll = seg_ll
            return True
        return False

    def scales(self) -> dict[str, float]:
        out = {"mu": math.exp(self.log_mu_scale)}
        out.update({f"segment_{k + 1}": math.exp(s) for k, s in enumerate(self.log_scales)})
        return out


def _initial_params(z: np.ndarray, K: int, bounds: PriorBounds) -> np.ndarray:
    half = min(max(_sample_variance(z) / 2.0, 1e-8), 0.99 * bounds.sigma2_max)
    row = np.array([half, half, 0.25, 0.25, math.pi / 4.0])
    return np.tile(row, (K, 1))


def _random_params(rng: np.random.Generator, K: int, bounds: PriorBounds) -> np.ndarray:
    return rng.uniform(bounds.lower, bounds.upper, size=(K, 5))


def run_chain(
    data: SpatialDataset,
    partition: Partition,
    config: ChainConfig,
    bounds: PriorBounds = PriorBounds(),
    frames: list[SegmentFrame] | None = None,
    progress_cb: Callable[[int, int], None] | None = None,
    initial: ModelState | None = None,
) -> PosteriorDraws:
    """One chain for one partition. ``initial`` replaces the default start,
    which matters when ``config.fixed`` holds coordinates at it."""
    started = time.perf_counter()
    frames = segment_frames(partition, data) if frames is None else frames
    blocks = prepare_segments(data, partition, frames)
    rng = stream(config.seed, "chain", partition.id)
    z_var = _sample_variance(data.values)
    chain = _Chain(blocks, config, bounds, rng, z_var)

    flags = []
    for k, block in enumerate(blocks, start=1):
        if block.index.size == 0:
            flags.append(f"segment_{k}:prior_only")
        elif block.index.size < SMALL_SEGMENT:
            flags.append(f"segment_{k}:small")
            logger.warning(
                "Partition %d segment %d has only %d observations", partition.id, k, block.index.size
            )

    if initial is not None:
        if initial.K != partition.K:
            raise ValueError(f"Initial state has {initial.K} segments, partition has {partition.K}")
        start = np.array([s.as_array() for s in initial.segments])
        if not chain.set_state(initial.mu, start):
            raise ConvergenceError(f"Partition {partition.id}: the initial state has no finite likelihood")
    mu0 = float(np.mean(data.values)) if initial is None else initial.mu
    ok = initial is not None or chain.set_state(mu0, _initial_params(data.values, partition.K, bounds))
    attempts = 0
    while not ok:
        attempts += 1
        if attempts > config.max_init_attempts:
            raise ConvergenceError(
                f"Partition {partition.id}: no finite initial likelihood after {config.max_init_attempts} attempts"
            )
        logger.warning("Partition %d: re-initialising chain (attempt %d)", partition.id, attempts)
        ok = chain.set_state(mu0, _random_params(rng, partition.K, bounds))

    n_keep = config.n_kept
    mu_draws = np.empty(n_keep)
    param_draws = np.empty((n_keep, partition.K, 5))
    ll_draws = np.empty(n_keep)

    window_accept = np.zeros(partition.K + 1, dtype=int)
    kept_accept = np.zeros(partition.K + 1, dtype=int)
    kept_steps = 0
    zero_windows = 0
    window_number = 0
    burnin_scales = chain.scales()
    slot = 0

    moving = np.array([bool(chain.free.any())] * partition.K + [chain.moves_mu])
    for it in range(config.n_iter):
        accepted = np.array([chain.update_segment(k) for k in range(partition.K)] + [chain.update_mu()], dtype=int)
        window_accept += accepted

        if (it + 1) % config.adapt_window == 0:
            window_number += 1
            empty = int(np.sum((window_accept == 0) & moving))
            if empty:
                zero_windows += empty
                logger.debug("Partition %d: %d block(s) accepted nothing in window %d", partition.id, empty, window_number)
            if it < config.burn_in:
                gain = window_number ** (-ADAPT_EXPONENT)
                rates = window_accept / config.adapt_window
                chain.log_scales += gain * (rates[:-1] - config.target_accept_block)
                chain.log_mu_scale += gain * (rates[-1] - config.target_accept_scalar)
            window_accept[:] = 0

        if it == config.burn_in - 1:
            burnin_scales = chain.scales()
        if it >= config.burn_in:
            kept_accept += accepted
            kept_steps += 1
            if (it - config.burn_in) % config.thin == 0:
                mu_draws[slot] = chain.mu
                param_draws[slot] = chain.params
                ll_draws[slot] = chain.loglik
                slot += 1

        if progress_cb and (it + 1) % 500 == 0:
            progress_cb(it + 1, config.n_iter)

    if zero_windows:
        logger.warning("Partition %d: %d block-windows with zero acceptance", partition.id, zero_windows)

    rates = kept_accept / max(kept_steps, 1)
    acceptance = {"mu": float(rates[-1]), **{f"segment_{k + 1}": float(rates[k]) for k in range(partition.K)}}
    elapsed = time.perf_counter() - started
    logger.info("Partition %d chain finished in %.1fs", partition.id, elapsed)
    return PosteriorDraws(
        partition_id=partition.id,
        mu=mu_draws,
        params=param_draws,
        loglik=ll_draws,
        nu=config.nu,
        n_obs=data.n,
        acceptance=acceptance,
        burnin_scales=burnin_scales,
        final_scales=chain.scales(),
        zero_accept_windows=zero_windows,
        flags=tuple(flags),
        elapsed_seconds=elapsed,
    )

"""Synthetic StableSwap market scenarios with planted, labelled depegs.

A scenario evolves an external price path per token (random walk around the
peg, with deterministic log-linear ramps during depeg events) and three
agent populations acting on the pool every step: informed sellers who dump
the soon-depegging token ahead of the event, arbitrageurs who close gaps
between pool and external prices, and small two-sided noise traders.
Occasional proportional deposits/withdrawals exercise the liquidity stream.

All randomness comes from counter-based Philox streams keyed by the scenario
seed, so identical configs reproduce byte-identical outputs on any platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .core import (
    EventStream,
    LiquidityEvent,
    MetricSeries,
    PriceSample,
    ReserveSnapshot,
    Timestamp,
    TokenId,
    TradeEvent,
    ValidationError,
)
from .stableswap import PoolState, apply_swap, marginal_price

_U64 = (1 << 64) - 1
_AGENT_STREAM = 1 << 32  # keeps agent draws clear of per-token price streams


@dataclass(frozen=True)
class DepegEvent:
    """One planted depeg: ramp from peg to ``target_price`` over ``ramp``
    seconds starting at ``start``; ramp symmetrically back over ``recovery``
    seconds when set, else the depeg is permanent."""

    token: TokenId
    start: Timestamp
    target_price: float
    ramp: int
    recovery: int | None = None

    def __post_init__(self) -> None:
        if self.ramp <= 0:
            raise ValidationError("depeg ramp must be positive")
        if not self.target_price > 0:
            raise ValidationError("depeg target price must be positive")
        if self.recovery is not None and self.recovery <= 0:
            raise ValidationError("recovery must be positive when given")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    duration: int
    step: int
    tokens: tuple[TokenId, ...]
    pool: PoolState
    peg_prices: Mapping[TokenId, float]
    depeg_events: tuple[DepegEvent, ...] = ()
    noise_vol: float = 0.0          # per-step lognormal sigma of external price
    arb_threshold: float = 0.002    # min relative price gap before arbs trade
    n_noise_traders: int = 0
    n_informed: int = 0
    informed_lead: int = 0          # informed selling starts this early
    informed_fraction: float = 0.005  # of pool balance sold per step
    noise_fraction: float = 1e-4
    lp_event_prob: float = 0.0
    lp_fraction: float = 0.005
    snapshot_period: int = 3600
    rng: str = "philox"

    def __post_init__(self) -> None:
        if self.step <= 0 or self.duration <= 0:
            raise ValidationError("step and duration must be positive")
        if self.duration % self.step != 0:
            raise ValidationError("step must divide duration")
        if self.informed_lead < 0:
            raise ValidationError("informed_lead must be non-negative")
        if len(self.tokens) != self.pool.n:
            raise ValidationError("token list must match pool balances")
        for token in self.tokens:
            if token not in self.peg_prices:
                raise ValidationError(f"missing peg price for {token.symbol}")
        for event in self.depeg_events:
            if event.token not in self.tokens:
                raise ValidationError(
                    f"depeg event token {event.token.symbol} not in pool")
        if self.rng != "philox":
            raise ValidationError("only the 'philox' counter-based rng is supported")
        object.__setattr__(self, "peg_prices", dict(self.peg_prices))


@dataclass(frozen=True)
class ScenarioOutput:
    stream: EventStream
    prices: tuple[PriceSample, ...]
    external_prices: dict[TokenId, MetricSeries]
    config: ScenarioConfig
    final_pool: PoolState
    truncated: bool = False


def _stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & _U64, stream & _U64]))


def _level_at(cfg: ScenarioConfig, token: TokenId, t: int) -> float:
    """Deterministic price level: peg outside events, log-linear inside."""
    log_level = math.log(cfg.peg_prices[token])
    for event in cfg.depeg_events:
        if event.token != token or t < event.start:
            continue
        log_peg = math.log(cfg.peg_prices[token])
        log_target = math.log(event.target_price)
        if t < event.start + event.ramp:
            frac = (t - event.start) / event.ramp
            log_level = log_peg + (log_target - log_peg) * frac
        elif event.recovery is None:
            log_level = log_target
        elif t < event.start + event.ramp + event.recovery:
            frac = (t - event.start - event.ramp) / event.recovery
            log_level = log_target + (log_peg - log_target) * frac
        else:
            log_level = log_peg
    return math.exp(log_level)


def external_price_path(cfg: ScenarioConfig, token: TokenId) -> MetricSeries:
    """Per-step external price: geometric random walk around the level path.

    The same seed always yields the same path; each token draws from its own
    Philox stream so paths do not depend on evaluation order.
    """
    idx = cfg.tokens.index(token)
    rng = _stream_rng(cfg.seed, idx)
    n_steps = cfg.duration // cfg.step
    times = np.arange(0, cfg.duration + cfg.step, cfg.step, dtype=np.int64)
    shocks = rng.standard_normal(n_steps) * cfg.noise_vol if cfg.noise_vol > 0 \
        else np.zeros(n_steps)
    walk = np.concatenate(([0.0], np.cumsum(shocks)))
    levels = np.array([_level_at(cfg, token, int(t)) for t in times])
    return MetricSeries("externalPrice", token.symbol, times,
                        levels * np.exp(walk))


def _informed_targets(cfg: ScenarioConfig, t: int) -> list[TokenId]:
    out = []
    for event in cfg.depeg_events:
        if event.start - cfg.informed_lead <= t < event.start:
            out.append(event.token)
    return out


def _counter_index(cfg: ScenarioConfig, avoid: int) -> int:
    for k in range(len(cfg.tokens)):
        if k != avoid:
            return k
    raise ValidationError("pool needs a second token")


def _arb_size(state: PoolState, i: int, j: int, target_ratio: float) -> float:
    """Largest sell of token i that keeps the pool's marginal price of i at
    or above the external ratio (bisection; 0 when even a dust trade
    overshoots)."""
    lo, hi = 0.0, 0.45 * state.balances[i]
    if marginal_price(apply_swap(state, i, j, hi)[0], i, j) > target_ratio:
        return hi
    for _ in range(24):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        trial = apply_swap(state, i, j, mid)[0]
        if marginal_price(trial, i, j) > target_ratio:
            lo = mid
        else:
            hi = mid
    return lo


def run_scenario(cfg: ScenarioConfig) -> ScenarioOutput:
    """Simulate the full scenario and return streams the pipeline can ingest."""
    paths = {token: external_price_path(cfg, token) for token in cfg.tokens}
    rng = _stream_rng(cfg.seed, _AGENT_STREAM)
    state = cfg.pool

    trades: list[TradeEvent] = []
    liquidity: list[LiquidityEvent] = []
    snapshots: list[ReserveSnapshot] = []
    price_samples: list[PriceSample] = []
    truncated = False

    for token in cfg.tokens:
        price_samples.append(PriceSample(0, token, float(paths[token].values[0])))

    min_balance = 1e-9 * max(cfg.pool.balances)
    n_steps = cfg.duration // cfg.step
    for k in range(1, n_steps + 1):
        t = k * cfg.step
        ext = {token: float(paths[token].values[k]) for token in cfg.tokens}

        def try_swap(i: int, j: int, dx: float, trader: str) -> None:
            nonlocal state
            if dx <= 0:
                return
            new_state, dy = apply_swap(state, i, j, dx)
            if dy <= 0 or new_state.balances[j] <= min_balance:
                raise ValidationError("pool drained")
            state = new_state
            trades.append(TradeEvent(t, trader, cfg.tokens[i], dx,
                                     cfg.tokens[j], dy))

        try:
            # Informed agents unload the soon-depegging token into the pool.
            for token in _informed_targets(cfg, t):
                if cfg.n_informed <= 0:
                    break
                i = cfg.tokens.index(token)
                j = _counter_index(cfg, i)
                per_agent = cfg.informed_fraction * state.balances[i] / cfg.n_informed
                for a in range(cfg.n_informed):
                    try_swap(i, j, per_agent, f"informed_{a}")

            # Arbitrageurs close pool-vs-external price gaps above threshold.
            for i in range(len(cfg.tokens)):
                for j in range(len(cfg.tokens)):
                    if i == j:
                        continue
                    ratio = ext[cfg.tokens[i]] / ext[cfg.tokens[j]]
                    if marginal_price(state, i, j) / ratio - 1.0 > cfg.arb_threshold:
                        dx = _arb_size(state, i, j, ratio)
                        try_swap(i, j, dx, "arb")

            # Noise traders: small random two-sided swaps.
            for a in range(cfg.n_noise_traders):
                i = int(rng.integers(0, len(cfg.tokens)))
                j = int(rng.integers(0, len(cfg.tokens) - 1))
                if j >= i:
                    j += 1
                size = cfg.noise_fraction * state.balances[i] * \
                    math.exp(0.5 * rng.standard_normal())
                try_swap(i, j, size, f"noise_{a}")

            # Occasional proportional deposit or withdrawal.
            if cfg.lp_event_prob > 0 and rng.random() < cfg.lp_event_prob:
                frac = cfg.lp_fraction * (0.5 + rng.random())
                sign = 1.0 if rng.random() < 0.5 else -1.0
                deltas = {token: sign * frac * bal
                          for token, bal in zip(cfg.tokens, state.balances)}
                lp_delta = sign * frac * state.lp_supply
                balances = tuple(b + deltas[token]
                                 for token, b in zip(cfg.tokens, state.balances))
                state = replace(state, balances=balances,
                                lp_supply=state.lp_supply + lp_delta)
                liquidity.append(LiquidityEvent(t, "lp_0", deltas, lp_delta))
        except ValidationError:
            truncated = True

        for token in cfg.tokens:
            price_samples.append(PriceSample(t, token, ext[token]))
        if t % cfg.snapshot_period == 0:
            snapshots.append(ReserveSnapshot(t, state.balances, state.lp_supply))
        if truncated:
            break

    stream = EventStream(pool_id="scenario", tokens=cfg.tokens,
                         trades=tuple(trades), liquidity=tuple(liquidity),
                         snapshots=tuple(snapshots))
    return ScenarioOutput(stream=stream, prices=tuple(price_samples),
                          external_prices=paths, config=cfg,
                          final_pool=state, truncated=truncated)


@dataclass(frozen=True)
class SlippageRow:
    amp: float
    marginal_price: float


def slippage_experiment(pool: PoolState, a_values: list[float],
                        imbalance: float) -> list[SlippageRow]:
    """Marginal price of selling the over-supplied token, per amplification.

    The pool's total balance is redistributed so token 0 holds ``imbalance``
    times each other token's share; lower amplification buys the seller a
    strictly worse marginal price.
    """
    if imbalance <= 0:
        raise ValidationError("imbalance must be positive")
    n = pool.n
    total = sum(pool.balances)
    unit = total / (imbalance + (n - 1))
    balances = tuple([imbalance * unit] + [unit] * (n - 1))
    rows = []
    for amp in a_values:
        state = replace(pool, amp=amp, balances=balances)
        rows.append(SlippageRow(amp, marginal_price(state, 0, 1)))
    return rows

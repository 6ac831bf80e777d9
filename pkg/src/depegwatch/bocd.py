"""Online Bayesian changepoint detection with a Student-t predictive.

The detector tracks the posterior over run lengths (steps since the last
changepoint) under a constant hazard. Each run-length hypothesis carries
Normal-Gamma parameters updated by conjugacy; the one-step predictive is a
Student-t. All mass arithmetic happens in log space, since run lengths in
the thousands underflow linear space.

Two predictive-scale conventions are supported:

* ``paper``: scale^2 = beta / (alpha * kappa), i.e. the Normal-Gamma
  parameter mapping without the predictive correction (default).
* ``posterior_predictive``: scale^2 = beta * (kappa + 1) / (alpha * kappa),
  the exact posterior predictive of the conjugate model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .core import MetricSeries, Timestamp, ValidationError

PREDICTIVE_SCALES = ("paper", "posterior_predictive")


def log_sum_exp(values: np.ndarray) -> float:
    """Stable log(sum(exp(values))) for 1-d arrays; -inf for empty input."""
    if values.size == 0:
        return -math.inf
    peak = values.max()
    if not math.isfinite(peak):
        return float(peak)
    return float(peak + math.log(np.exp(values - peak).sum()))


@dataclass(frozen=True)
class NGParams:
    """Normal-Gamma parameters (mu, alpha, beta, kappa). The implied
    Student-t has nu = 2*alpha degrees of freedom."""

    mu: float
    alpha: float
    beta: float
    kappa: float

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.beta > 0 and self.kappa > 0):
            raise ValidationError("alpha, beta, kappa must be strictly positive")

    @property
    def nu(self) -> float:
        return 2.0 * self.alpha

    @property
    def sigma_sq(self) -> float:
        return self.beta / (self.alpha * self.kappa)


@dataclass(frozen=True)
class DetectorConfig:
    hazard_lambda: float = 100.0
    prior: NGParams = field(default_factory=lambda: NGParams(0.0, 1.0, 1.0, 1.0))
    prob_floor: float = 1e-12       # hypotheses below this posterior are pruned
    max_run_length: int = 5000
    predictive_scale: str = "paper"

    def __post_init__(self) -> None:
        if not self.hazard_lambda > 1:
            raise ValidationError("hazard_lambda must exceed 1")
        if not (self.prob_floor == 0.0 or 0 < self.prob_floor < 1e-6):
            raise ValidationError("prob_floor must be 0 (off) or in (0, 1e-6)")
        if self.max_run_length < 1:
            raise ValidationError("max_run_length must be >= 1")
        if self.predictive_scale not in PREDICTIVE_SCALES:
            raise ValidationError(
                f"predictive_scale must be one of {PREDICTIVE_SCALES}")


@dataclass(frozen=True)
class RunLengthState:
    """Posterior over run lengths after ``t`` observations.

    Arrays are aligned: ``log_joint[k]`` is log P(r_t = runs[k], x_{1:t}) and
    the Normal-Gamma arrays hold that hypothesis's parameters. ``runs`` is
    strictly increasing with runs[0] == 0 after the first step.
    """

    t: int
    runs: np.ndarray
    log_joint: np.ndarray
    mu: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    prev_gamma: int
    map_probability: float = 1.0  # posterior of the MAP run length at step t

    def posterior(self) -> np.ndarray:
        return np.exp(self.log_joint - log_sum_exp(self.log_joint))

    def joint_map(self) -> dict[int, float]:
        return {int(r): float(lj) for r, lj in zip(self.runs, self.log_joint)}

    def ng_params(self, run_length: int) -> NGParams:
        idx = np.nonzero(self.runs == run_length)[0]
        if idx.size == 0:
            raise KeyError(f"no hypothesis with run length {run_length}")
        k = int(idx[0])
        return NGParams(float(self.mu[k]), float(self.alpha[k]),
                        float(self.beta[k]), float(self.kappa[k]))


class Changepoint(NamedTuple):
    ts: Timestamp
    step: int
    map_run_length: int
    probability: float


class RunLengthPoint(NamedTuple):
    ts: Timestamp
    step: int
    run_length: int
    probability: float


def hazard(cfg: DetectorConfig) -> float:
    """Constant per-step changepoint probability, 1 / lambda."""
    return 1.0 / cfg.hazard_lambda


def _t_logpdf_arrays(x: float, mu: np.ndarray, alpha: np.ndarray,
                     beta: np.ndarray, kappa: np.ndarray,
                     scale_mode: str) -> np.ndarray:
    nu = 2.0 * alpha
    if scale_mode == "paper":
        sigma_sq = beta / (alpha * kappa)
    else:
        sigma_sq = beta * (kappa + 1.0) / (alpha * kappa)
    z_sq = (x - mu) ** 2 / (nu * sigma_sq)
    return (gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0)
            - 0.5 * np.log(nu * math.pi * sigma_sq)
            - (nu + 1.0) / 2.0 * np.log1p(z_sq))


def student_t_logpdf(x: float, p: NGParams,
                     scale_mode: str = "paper") -> float:
    """Log density of the Student-t predictive at ``x``."""
    if scale_mode not in PREDICTIVE_SCALES:
        raise ValidationError(f"scale_mode must be one of {PREDICTIVE_SCALES}")
    return float(_t_logpdf_arrays(
        x, np.array([p.mu]), np.array([p.alpha]),
        np.array([p.beta]), np.array([p.kappa]), scale_mode)[0])


def ng_update(p: NGParams, x: float) -> NGParams:
    """Posterior Normal-Gamma parameters after observing ``x``."""
    return NGParams(
        mu=(p.kappa * p.mu + x) / (p.kappa + 1.0),
        alpha=p.alpha + 0.5,
        beta=p.beta + p.kappa * (x - p.mu) ** 2 / (2.0 * (p.kappa + 1.0)),
        kappa=p.kappa + 1.0,
    )


def init_state(cfg: DetectorConfig) -> RunLengthState:
    """Fresh state with all mass on run length zero and prior parameters."""
    p = cfg.prior
    return RunLengthState(
        t=0,
        runs=np.array([0], dtype=np.int64),
        log_joint=np.array([0.0]),
        mu=np.array([p.mu]),
        kappa=np.array([p.kappa]),
        alpha=np.array([p.alpha]),
        beta=np.array([p.beta]),
        prev_gamma=0,
    )


def step(state: RunLengthState, x: float, cfg: DetectorConfig,
         ts: Timestamp = 0) -> tuple[RunLengthState, Changepoint | None]:
    """Advance the run-length posterior by one observation.

    Every surviving hypothesis grows by one with probability (1 - H) and a
    fresh run-length-zero hypothesis absorbs the hazard-weighted mass of all
    predecessors. A changepoint is emitted at this step whenever the MAP run
    length breaks the previous MAP's continuation (gamma_t != gamma_{t-1}+1);
    ties at the argmax resolve to the smallest run length.
    """
    if not math.isfinite(x):
        raise ValidationError(f"observation at step {state.t + 1} is not finite")
    h = hazard(cfg)
    log_h = math.log(h)
    log_1mh = math.log1p(-h)

    log_pred = _t_logpdf_arrays(x, state.mu, state.alpha, state.beta,
                                state.kappa, cfg.predictive_scale)
    weighted = state.log_joint + log_pred
    log_r0 = log_sum_exp(weighted) + log_h

    runs = np.concatenate(([0], state.runs + 1))
    log_joint = np.concatenate(([log_r0], weighted + log_1mh))

    prior = cfg.prior
    kappa1 = state.kappa + 1.0
    mu = np.concatenate(([prior.mu], (state.kappa * state.mu + x) / kappa1))
    alpha = np.concatenate(([prior.alpha], state.alpha + 0.5))
    beta = np.concatenate(
        ([prior.beta],
         state.beta + state.kappa * (x - state.mu) ** 2 / (2.0 * kappa1)))
    kappa = np.concatenate(([prior.kappa], kappa1))

    log_z = log_sum_exp(log_joint)
    posterior = np.exp(log_joint - log_z)

    keep = (posterior >= cfg.prob_floor) & (runs <= cfg.max_run_length)
    keep[0] = True
    if not keep.all():
        dropped = log_joint[~keep]
        log_joint = log_joint.copy()
        log_joint[0] = np.logaddexp(log_joint[0], log_sum_exp(dropped))
        runs, log_joint = runs[keep], log_joint[keep]
        mu, alpha, beta, kappa = mu[keep], alpha[keep], beta[keep], kappa[keep]
        posterior = np.exp(log_joint - log_sum_exp(log_joint))

    map_idx = int(np.argmax(posterior))  # first max = smallest run length
    gamma = int(runs[map_idx])
    map_prob = float(posterior[map_idx])
    t = state.t + 1
    new_state = RunLengthState(t=t, runs=runs, log_joint=log_joint, mu=mu,
                               kappa=kappa, alpha=alpha, beta=beta,
                               prev_gamma=gamma, map_probability=map_prob)
    changepoint = None
    if gamma != state.prev_gamma + 1:
        changepoint = Changepoint(ts=ts, step=t, map_run_length=gamma,
                                  probability=map_prob)
    return new_state, changepoint


def detect_series(
    series: MetricSeries,
    cfg: DetectorConfig,
    state: RunLengthState | None = None,
) -> tuple[list[Changepoint], list[RunLengthPoint], RunLengthState]:
    """Run the detector over a series, optionally resuming from a state.

    Returns the emitted changepoints, the per-step MAP run-length trace, and
    the final state (resume-ready: feeding the second half of a series to a
    detector restarted from the midpoint state reproduces the whole-series
    output bit for bit).
    """
    if state is None:
        state = init_state(cfg)
    changepoints: list[Changepoint] = []
    trace: list[RunLengthPoint] = []
    for ts, x in zip(series.timestamps, series.values):
        state, cp = step(state, float(x), cfg, ts=int(ts))
        trace.append(RunLengthPoint(int(ts), state.t, state.prev_gamma,
                                    state.map_probability))
        if cp is not None:
            changepoints.append(cp)
    return changepoints, trace, state


STATE_VERSION = 1


def state_to_dict(state: RunLengthState, cfg: DetectorConfig) -> dict:
    """Versioned, JSON-ready snapshot with log-space values.

    Floats survive JSON round-trips exactly (shortest-repr encoding), so a
    resumed detector continues bit-identically.
    """
    return {
        "version": STATE_VERSION,
        "t": state.t,
        "prev_gamma": state.prev_gamma,
        "map_probability": state.map_probability,
        "runs": [int(r) for r in state.runs],
        "log_joint": [float(v) for v in state.log_joint],
        "mu": [float(v) for v in state.mu],
        "kappa": [float(v) for v in state.kappa],
        "alpha": [float(v) for v in state.alpha],
        "beta": [float(v) for v in state.beta],
        "config": {
            "hazard_lambda": cfg.hazard_lambda,
            "prob_floor": cfg.prob_floor,
            "max_run_length": cfg.max_run_length,
            "predictive_scale": cfg.predictive_scale,
            "prior": {"mu": cfg.prior.mu, "alpha": cfg.prior.alpha,
                      "beta": cfg.prior.beta, "kappa": cfg.prior.kappa},
        },
    }


def state_from_dict(doc: dict) -> tuple[RunLengthState, DetectorConfig]:
    if doc.get("version") != STATE_VERSION:
        raise ValidationError(
            f"unsupported state version {doc.get('version')!r}; "
            f"expected {STATE_VERSION}")
    cfg_doc = doc["config"]
    prior = cfg_doc["prior"]
    cfg = DetectorConfig(
        hazard_lambda=cfg_doc["hazard_lambda"],
        prior=NGParams(prior["mu"], prior["alpha"], prior["beta"],
                       prior["kappa"]),
        prob_floor=cfg_doc["prob_floor"],
        max_run_length=cfg_doc["max_run_length"],
        predictive_scale=cfg_doc["predictive_scale"],
    )
    state = RunLengthState(
        t=int(doc["t"]),
        runs=np.array(doc["runs"], dtype=np.int64),
        log_joint=np.array(doc["log_joint"], dtype=float),
        mu=np.array(doc["mu"], dtype=float),
        kappa=np.array(doc["kappa"], dtype=float),
        alpha=np.array(doc["alpha"], dtype=float),
        beta=np.array(doc["beta"], dtype=float),
        prev_gamma=int(doc["prev_gamma"]),
        map_probability=float(doc.get("map_probability", 1.0)),
    )
    return state, cfg

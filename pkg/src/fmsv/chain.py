"""Chain storage, sampler configuration and the shared block updater."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import FmsvError
from .proposals import (
    AdaptiveRwState,
    GaussianProposal,
    dr_stage2_alpha,
    kstep_proposal,
    mode_proposal,
    stage1_alpha,
)

METHODS = ("optimization", "kstep", "dr")

_METHOD_ALIASES = {
    "opt": "optimization",
    "optimization": "optimization",
    "kstep": "kstep",
    "k-step": "kstep",
    "dr": "dr",
    "delayed-rejection": "dr",
}


def canonical_method(name: str) -> str:
    try:
        return _METHOD_ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown method {name!r}; expected one of {sorted(_METHOD_ALIASES)}")


@dataclass
class McmcConfig:
    """Run-length and proposal configuration shared by the samplers."""

    method: str = "dr"
    k: int = 1
    burn_in: int = 1000
    n_iter: int = 5000
    seed: int = 0
    t_df: float = 10.0
    beta_block_size: int = 8
    offset: float = 1e-7
    threads: int = 1

    def __post_init__(self):
        self.method = canonical_method(self.method)
        if self.n_iter <= 0:
            raise ValueError("n_iter must be > 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.beta_block_size < 1:
            raise ValueError("beta_block_size must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class BlockStats:
    """Per-stage proposal/acceptance counts for one parameter block."""

    stage1_proposed: int = 0
    stage1_accepted: int = 0
    stage2_proposed: int = 0
    stage2_accepted: int = 0

    def rate(self, stage: int) -> Optional[float]:
        prop = self.stage1_proposed if stage == 1 else self.stage2_proposed
        acc = self.stage1_accepted if stage == 1 else self.stage2_accepted
        return acc / prop if prop else None

    def as_dict(self) -> dict:
        return {
            "stage1": {"proposed": self.stage1_proposed, "accepted": self.stage1_accepted,
                       "rate": self.rate(1)},
            "stage2": {"proposed": self.stage2_proposed, "accepted": self.stage2_accepted,
                       "rate": self.rate(2)},
        }


def mh_block_update(
    theta0: np.ndarray,
    loglik: Callable[[np.ndarray], float],
    logprior: Callable[[np.ndarray], float],
    build: Callable[[np.ndarray], GaussianProposal],
    method: str,
    rw_state: Optional[AdaptiveRwState],
    rng: np.random.Generator,
    stats: BlockStats,
    loglik0: Optional[float] = None,
) -> tuple[np.ndarray, float]:
    """One MH update of a parameter block under the configured method.

    ``build`` constructs the stage-1 proposal deterministically from a
    start point (mode or k-step).  For the optimization method the
    proposal is an independence proposal, so forward and reverse
    densities are evaluated under the same build.  For delayed rejection
    a rejected stage-1 candidate triggers an adaptive random-walk second
    stage whose acceptance corrects for the first rejection.

    Returns (new_theta, loglik at new_theta).
    """
    theta0 = np.asarray(theta0, dtype=float)
    lp0 = logprior(theta0)
    ll0 = loglik(theta0) if loglik0 is None else loglik0

    q_fwd = build(theta0)
    theta1 = q_fwd.sample(rng)
    stats.stage1_proposed += 1
    lp1 = logprior(theta1)
    if lp1 == -math.inf:
        ll1, q_rev = None, None
        alpha1 = 0.0
    else:
        ll1 = loglik(theta1)
        if method == "optimization":
            q_rev = q_fwd
        else:
            q_rev = build(theta1)
        alpha1 = stage1_alpha(lp0, ll0, lp1, ll1, q_fwd.logpdf(theta1), q_rev.logpdf(theta0))
    if rng.random() < alpha1:
        stats.stage1_accepted += 1
        return theta1, ll1

    if method != "dr":
        return theta0, ll0

    # second stage: adaptive random walk, correcting for the rejection
    theta2 = rw_state.propose(theta0, rng)
    stats.stage2_proposed += 1
    lp2 = logprior(theta2)
    if lp2 == -math.inf:
        return theta0, ll0
    ll2 = loglik(theta2)
    q_at2 = build(theta2)
    if lp1 == -math.inf:
        alpha1_rev = 0.0
    else:
        alpha1_rev = stage1_alpha(
            lp2, ll2, lp1, ll1, q_at2.logpdf(theta1), q_rev.logpdf(theta2)
        )
    alpha2 = dr_stage2_alpha(
        lp0, ll0, q_fwd.logpdf(theta1), alpha1,
        lp2, ll2, q_at2.logpdf(theta1), alpha1_rev,
    )
    if rng.random() < alpha2:
        stats.stage2_accepted += 1
        return theta2, ll2
    return theta0, ll0


def make_builder(
    objective: Callable[[np.ndarray], float],
    config: McmcConfig,
    project: Optional[Callable] = None,
    grad: Optional[Callable] = None,
    hess: Optional[Callable] = None,
) -> Callable[[np.ndarray], GaussianProposal]:
    """Stage-1 proposal builder for the configured method."""
    if config.method == "optimization":
        def build(theta):
            return mode_proposal(
                objective, theta, df=config.t_df, grad=grad, hess=hess, project=project
            )
    else:
        def build(theta):
            return kstep_proposal(
                objective, theta, k=config.k, grad=grad, hess=hess, project=project
            )
    return build


@dataclass
class Chain:
    """Stored post-burn-in iterates with acceptance and timing metadata."""

    iterates: np.ndarray
    labels: list[str]
    block_stats: dict[str, BlockStats]
    burn_in: int
    iter_seconds: np.ndarray
    method: str = "dr"

    def __post_init__(self):
        self.iterates = np.atleast_2d(np.asarray(self.iterates, dtype=float))
        if len(self.labels) != self.iterates.shape[1]:
            raise ValueError("one label per column required")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be unique")
        total = self.burn_in + self.n_draws
        for name, st in self.block_stats.items():
            if st.stage1_accepted > st.stage1_proposed or st.stage2_accepted > st.stage2_proposed:
                raise ValueError(f"acceptance counts exceed proposals for block {name}")
            if st.stage1_proposed > total:
                raise ValueError(f"proposal count exceeds iterations for block {name}")

    @property
    def n_draws(self) -> int:
        return self.iterates.shape[0]

    @property
    def seconds_per_iter(self) -> float:
        return float(np.mean(self.iter_seconds)) if self.iter_seconds.size else 0.0

    def param(self, label: str) -> np.ndarray:
        return self.iterates[:, self.labels.index(label)]

    def mean(self) -> np.ndarray:
        return self.iterates.mean(axis=0)

    def std(self) -> np.ndarray:
        return self.iterates.std(axis=0, ddof=1)

    def median(self) -> np.ndarray:
        return np.median(self.iterates, axis=0)

    def to_csv(self, path) -> None:
        header = ",".join(self.labels)
        np.savetxt(path, self.iterates, delimiter=",", header=header, comments="")

    @classmethod
    def read_csv(cls, path) -> "Chain":
        with open(path) as fh:
            labels = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(
            iterates=data, labels=labels, block_stats={}, burn_in=0,
            iter_seconds=np.zeros(0),
        )

    def summary(self, max_lag: int = 100) -> dict:
        from .diagnostics import inefficiency_factor

        t_iter = self.seconds_per_iter
        params = {}
        for j, lab in enumerate(self.labels):
            series = self.iterates[:, j]
            try:
                ineff = inefficiency_factor(series, max_lag=max_lag)
                equiv = ineff * t_iter
            except FmsvError:
                ineff = equiv = None
            params[lab] = {
                "mean": float(series.mean()),
                "stdev": float(series.std(ddof=1)),
                "median": float(np.median(series)),
                "inefficiency": ineff,
                "equivalence": equiv,
            }
        return {
            "version": 1,
            "method": self.method,
            "burn_in": self.burn_in,
            "n_draws": self.n_draws,
            "params": params,
            "acceptance": {name: st.as_dict() for name, st in self.block_stats.items()},
            "timing": {
                "seconds_per_iteration": t_iter,
                "total_seconds": float(self.iter_seconds.sum()),
            },
        }

    def write_summary_json(self, path, max_lag: int = 100) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(max_lag=max_lag), fh, indent=2)

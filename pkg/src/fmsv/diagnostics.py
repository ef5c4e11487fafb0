"""Chain quality metrics: inefficiency and equivalence factors, and
report rendering in the layout of the summary tables."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import NumericalError


def autocorrelations(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags 1..max_lag.

    Uses the biased (divide by n) covariance estimator for stability at
    high lags.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if max_lag >= n:
        raise ValueError("series must be longer than max_lag")
    xc = x - x.mean()
    c0 = float(xc @ xc) / n
    if c0 <= 0.0:
        raise NumericalError("constant series has undefined autocorrelation")
    return np.array([float(xc[:-j] @ xc[j:]) / n / c0 for j in range(1, max_lag + 1)])


def inefficiency_factor(series: np.ndarray, max_lag: int = 100) -> float:
    """1 + 2 * sum of the first ``max_lag`` sample autocorrelations.

    The multiple of the draw count needed to match the accuracy of
    independent sampling; ~1 for white noise.
    """
    rho = autocorrelations(series, max_lag)
    return float(1.0 + 2.0 * rho.sum())


def equivalence_factor(inefficiency: float, seconds_per_iter: float) -> float:
    """Time-normalized inefficiency: inefficiency x seconds per iteration.

    Ratios between samplers equal their ratios of time-to-equal-accuracy;
    the absolute value is implementation and hardware dependent.
    """
    return inefficiency * seconds_per_iter


@dataclass
class DiagnosticsReport:
    """Keyed summary rows plus acceptance/timing, renderable as a table."""

    summary: dict

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary, fh, indent=2)

    def to_text(self) -> str:
        rows = [f"{'param':<14}{'mean':>10}{'stdev':>10}{'ineff':>10}{'equiv':>12}"]
        for lab, stats in self.summary["params"].items():
            ineff = stats["inefficiency"]
            equiv = stats["equivalence"]
            rows.append(
                f"{lab:<14}{stats['mean']:>10.4f}{stats['stdev']:>10.4f}"
                + (f"{ineff:>10.2f}" if ineff is not None else f"{'-':>10}")
                + (f"{equiv:>12.5f}" if equiv is not None else f"{'-':>12}")
            )
        acc = self.summary.get("acceptance", {})
        if acc:
            rows.append("")
            rows.append(f"{'block':<20}{'stage 1':>10}{'stage 2':>10}")
            for name, st in acc.items():
                r1 = st["stage1"]["rate"]
                r2 = st["stage2"]["rate"]
                rows.append(
                    f"{name:<20}"
                    + (f"{r1:>10.3f}" if r1 is not None else f"{'-':>10}")
                    + (f"{r2:>10.3f}" if r2 is not None else f"{'-':>10}")
                )
        timing = self.summary.get("timing")
        if timing:
            rows.append("")
            rows.append(
                f"time/iter {timing['seconds_per_iteration']:.6f}s  "
                f"total {timing['total_seconds']:.2f}s"
            )
        return "\n".join(rows)


def chain_report(chain, max_lag: int = 100) -> DiagnosticsReport:
    return DiagnosticsReport(summary=chain.summary(max_lag=max_lag))

"""Forward simulators and the named benchmark designs.

Presets reproduce the simulation studies used throughout: two univariate
sample sizes, the five-series one-factor and ten-series two-factor
designs, and the two GARCH parameterizations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Dataset, SvParams
from .factor import FactorModel, FactorPaths, simulate_fmsv
from .garch import GarchParams


def simulate_usv(params: SvParams, T: int, rng: np.random.Generator):
    """Simulate one return series; returns (y, h)."""
    h = np.empty(T)
    h[0] = params.mu + np.sqrt(params.stationary_var) * rng.standard_normal()
    eta = rng.standard_normal(T - 1)
    for t in range(1, T):
        h[t] = params.mu + params.phi * (h[t - 1] - params.mu) + params.sigma * eta[t - 1]
    y = np.exp(0.5 * h) * rng.standard_normal(T)
    return y, h


def simulate_garch(params: GarchParams, T: int, rng: np.random.Generator):
    """Simulate a GARCH(1,1) series from its stationary variance;
    returns (y, sigma2)."""
    sig2 = np.empty(T)
    y = np.empty(T)
    sig2[0] = params.omega / (1.0 - params.alpha - params.beta_g)
    y[0] = np.sqrt(sig2[0]) * rng.standard_normal()
    z = rng.standard_normal(T - 1)
    for t in range(1, T):
        sig2[t] = params.omega + params.alpha * y[t - 1] ** 2 + params.beta_g * sig2[t - 1]
        y[t] = np.sqrt(sig2[t]) * z[t - 1]
    return y, sig2


_IDIO = SvParams(mu=0.5, phi=0.9, sigma=0.1)
_FACT = SvParams(mu=1.0, phi=0.95, sigma=0.15)

_P5K1_B = np.array([[1.0], [-1.5], [1.5], [-1.5], [1.5]])
_P10K2_B = np.column_stack(
    [
        [1.0, 0.0, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5],
        [0.0, 1.0, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5],
    ]
)


@dataclass(frozen=True)
class Preset:
    name: str
    kind: str  # "usv" | "fmsv" | "garch"
    T: int
    sv: Optional[tuple[SvParams, ...]] = None
    B: Optional[np.ndarray] = None
    garch: Optional[GarchParams] = None

    def factor_model(self) -> FactorModel:
        if self.kind != "fmsv":
            raise ValueError(f"{self.name} is not a factor design")
        return FactorModel(B=self.B, sv=self.sv)

    def truth(self) -> dict:
        out: dict = {"name": self.name, "kind": self.kind, "T": self.T}
        if self.sv is not None:
            out["sv"] = [[s.mu, s.phi, s.sigma] for s in self.sv]
        if self.B is not None:
            out["B"] = np.asarray(self.B).tolist()
        if self.garch is not None:
            out["garch"] = [self.garch.omega, self.garch.alpha, self.garch.beta_g]
        return out


PRESETS: dict[str, Preset] = {
    "usv-t500": Preset("usv-t500", "usv", 500, sv=(SvParams(0.5, 0.9, 0.1),)),
    "usv-t1500": Preset("usv-t1500", "usv", 1500, sv=(SvParams(1.0, 0.95, 0.15),)),
    "p5k1": Preset("p5k1", "fmsv", 500, sv=tuple([_IDIO] * 5 + [_FACT]), B=_P5K1_B),
    "p10k2": Preset("p10k2", "fmsv", 500, sv=tuple([_IDIO] * 10 + [_FACT] * 2), B=_P10K2_B),
    "garch-ex1": Preset("garch-ex1", "garch", 1500, garch=GarchParams(0.1, 0.25, 0.70)),
    "garch-ex2": Preset("garch-ex2", "garch", 1500, garch=GarchParams(0.1, 0.05, 0.90)),
}


def simulate_preset(name: str, rng: np.random.Generator) -> dict:
    """Simulate one replicate of a named design.

    Returns a dict with ``y`` (T x p), latent truth arrays, and the
    ``truth`` manifest entries.
    """
    preset = PRESETS[name]
    if preset.kind == "usv":
        y, h = simulate_usv(preset.sv[0], preset.T, rng)
        return {"y": y[:, None], "h": h[:, None], "truth": preset.truth()}
    if preset.kind == "fmsv":
        data, paths = simulate_fmsv(preset.factor_model(), preset.T, rng)
        return {"y": data.y, "h": paths.h, "f": paths.f, "truth": preset.truth()}
    y, sig2 = simulate_garch(preset.garch, preset.T, rng)
    return {"y": y[:, None], "sigma2": sig2[:, None], "truth": preset.truth()}

"""Command-line front end.

    fmsv simulate --preset p5k1 --out dir [--seed n]
    fmsv fit --model usv|fmsv|garch --method opt|kstep|dr|mcem
             (--data file.csv | --preset name) [--k n] --out dir
    fmsv marglik (--data file.csv | --preset name) --k 1,2,3 --out dir
    fmsv diag --chain chain.csv [--out dir]

Exit codes: 0 success, 1 numerical failure, 2 usage error.  Options can
also be supplied in a JSON config file (--config); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .chain import Chain, McmcConfig
from .core import FmsvError, Prior
from .diagnostics import DiagnosticsReport, chain_report, inefficiency_factor
from .factor import run_fmsv_chain
from .garch import GarchPrior, garch_mle, run_garch_chain
from .marglik import ApfConfig, chib_log_marginal_likelihood
from .mcem import McemConfig, run_mcem_fmsv, run_mcem_usv
from .simulate import PRESETS, simulate_preset
from .usv import run_usv_chain

_MCMC_KEYS = ("method", "k", "burn_in", "n_iter", "seed", "t_df",
              "beta_block_size", "offset", "threads")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmsv", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--config", type=Path, default=None, help="JSON config file")

    p_sim = sub.add_parser("simulate", help="simulate a benchmark dataset")
    p_sim.add_argument("--preset", required=True, choices=sorted(PRESETS))
    common(p_sim)

    p_fit = sub.add_parser("fit", help="estimate a model")
    p_fit.add_argument("--model", choices=("usv", "fmsv", "garch"), default="usv")
    p_fit.add_argument("--method", choices=("opt", "kstep", "dr", "mcem"), default="dr")
    p_fit.add_argument("--data", type=Path, default=None, help="CSV with one column per series")
    p_fit.add_argument("--preset", choices=sorted(PRESETS), default=None,
                       help="simulate this design instead of reading --data")
    p_fit.add_argument("--k", type=int, default=None, help="factor count (fmsv)")
    p_fit.add_argument("--burn-in", type=int, default=None)
    p_fit.add_argument("--n-iter", type=int, default=None)
    common(p_fit)

    p_ml = sub.add_parser("marglik", help="marginal likelihoods over factor counts")
    p_ml.add_argument("--data", type=Path, default=None)
    p_ml.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p_ml.add_argument("--k", type=str, default="1,2,3",
                      help="comma-separated candidate factor counts")
    p_ml.add_argument("--burn-in", type=int, default=None)
    p_ml.add_argument("--n-iter", type=int, default=None)
    p_ml.add_argument("--particles", type=int, default=None)
    common(p_ml)

    p_diag = sub.add_parser("diag", help="diagnostics for a stored chain")
    p_diag.add_argument("--chain", type=Path, required=True)
    p_diag.add_argument("--time-per-iter", type=float, default=0.0)
    common(p_diag)
    return parser


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _mcmc_config(args, cfg: dict) -> McmcConfig:
    mcmc = dict(cfg.get("mcmc", {}))
    method = getattr(args, "method", None)
    if method and method != "mcem":
        mcmc["method"] = method
    for key, attr in (("burn_in", "burn_in"), ("n_iter", "n_iter"),
                      ("seed", "seed"), ("threads", "threads")):
        val = getattr(args, attr, None)
        if val is not None:
            mcmc[key] = val
    mcmc = {k: v for k, v in mcmc.items() if k in _MCMC_KEYS}
    return McmcConfig(**mcmc)


def _load_data(args, cfg: dict) -> np.ndarray:
    if args.data is not None:
        frame = pd.read_csv(args.data)
        return frame.to_numpy(dtype=float)
    if getattr(args, "preset", None):
        seed = args.seed if args.seed is not None else cfg.get("mcmc", {}).get("seed", 0)
        sim = simulate_preset(args.preset, np.random.default_rng(seed))
        return sim["y"]
    raise FmsvError("either --data or --preset is required")


def _write_csv(path: Path, arr: np.ndarray, labels) -> None:
    np.savetxt(path, arr, delimiter=",", header=",".join(labels), comments="")


def cmd_simulate(args, cfg: dict) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    sim = simulate_preset(args.preset, np.random.default_rng(seed))
    y = sim["y"]
    _write_csv(out / "dataset.csv", y, [f"y{j + 1}" for j in range(y.shape[1])])
    latents = []
    labels = []
    for key in ("h", "f", "sigma2"):
        if key in sim:
            arr = sim[key]
            latents.append(arr)
            labels += [f"{key}{j + 1}" for j in range(arr.shape[1])]
    if latents:
        _write_csv(out / "latents.csv", np.column_stack(latents), labels)
    manifest = {"preset": args.preset, "seed": seed, "truth": sim["truth"]}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote {out / 'dataset.csv'} ({y.shape[0]} x {y.shape[1]})")
    return 0


def _fit_mcem(args, cfg: dict, y: np.ndarray, out: Path) -> int:
    em = dict(cfg.get("mcem", {}))
    if args.seed is not None:
        em["seed"] = args.seed
    config = McemConfig(**em)
    if args.model == "usv":
        trace = run_mcem_usv(y[:, 0], config)
    elif args.model == "fmsv":
        if not args.k:
            raise FmsvError("--k is required for fmsv")
        trace = run_mcem_fmsv(y, args.k, config)
    else:
        raise FmsvError("mcem supports usv and fmsv models")
    trace.to_json(out / "mcem_trace.json")
    trace.ratios_to_csv(out / "bridge_ratios.csv")
    print(f"final estimates: { {k: round(v, 4) for k, v in trace.final.items()} }")
    return 0


def cmd_fit(args, cfg: dict) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    y = _load_data(args, cfg)
    if args.method == "mcem":
        return _fit_mcem(args, cfg, y, out)
    config = _mcmc_config(args, cfg)
    prior_cfg = cfg.get("prior", {})
    if args.model == "usv":
        prior = Prior(**prior_cfg)
        chain = run_usv_chain(y[:, 0], prior, config)
    elif args.model == "fmsv":
        if not args.k:
            raise FmsvError("--k is required for fmsv")
        prior = Prior(**prior_cfg)
        chain, _ = run_fmsv_chain(y, args.k, prior, config)
    else:
        chain = run_garch_chain(y[:, 0], GarchPrior.from_data(y[:, 0]), config)
        mle = garch_mle(y[:, 0])
        with open(out / "mle.json", "w") as fh:
            json.dump(
                {
                    "params": mle.params.as_array().tolist(),
                    "se": mle.se.tolist(),
                    "converged": mle.converged,
                    "at_boundary": mle.at_boundary,
                },
                fh,
                indent=2,
            )
    chain.to_csv(out / "chain.csv")
    chain.write_summary_json(out / "summary.json")
    report = chain_report(chain)
    report.to_json(out / "diagnostics.json")
    print(report.to_text())
    return 0


def cmd_marglik(args, cfg: dict) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    y = _load_data(args, cfg)
    config = _mcmc_config(args, cfg)
    prior = Prior(**cfg.get("prior", {}))
    apf_cfg = dict(cfg.get("apf", {}))
    if args.particles is not None:
        apf_cfg = {"n_particles": args.particles,
                   "n_first_stage": 2 * args.particles}
    apf = ApfConfig(**apf_cfg) if apf_cfg else ApfConfig()
    blocks = int(cfg.get("marglik", {}).get("ordinate_blocks", 1))
    ks = [int(tok) for tok in str(args.k).split(",") if tok]
    rows = []
    for k in ks:
        rng = np.random.default_rng([config.seed, k])
        res = chib_log_marginal_likelihood(
            y, k, prior, config, config, apf, rng=rng, ordinate_blocks=blocks
        )
        rows.append(res.as_dict())
        print(
            f"k={k}: loglik {res.log_lik:.2f}  prior {res.log_prior:.2f}  "
            f"beta-ord {res.log_beta_ordinate:.2f}  theta-ord {res.log_theta_ordinate:.2f}  "
            f"logML {res.log_marginal:.2f}"
        )
    report = {"version": 1, "candidates": rows}
    if len(rows) > 1:
        best = max(rows, key=lambda r: r["log_marginal_likelihood"])
        report["selected_k"] = best["k"]
        print(f"selected k = {best['k']}")
    with open(out / "marglik.json", "w") as fh:
        json.dump(report, fh, indent=2)
    return 0


def cmd_diag(args, cfg: dict) -> int:
    chain = Chain.read_csv(args.chain)
    summary = chain.summary()
    if args.time_per_iter:
        for stats in summary["params"].values():
            if stats["inefficiency"] is not None:
                stats["equivalence"] = stats["inefficiency"] * args.time_per_iter
        summary["timing"]["seconds_per_iteration"] = args.time_per_iter
    report = DiagnosticsReport(summary=summary)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "diagnostics.json")
    print(report.to_text())
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        if args.command == "simulate":
            return cmd_simulate(args, cfg)
        if args.command == "fit":
            return cmd_fit(args, cfg)
        if args.command == "marglik":
            return cmd_marglik(args, cfg)
        return cmd_diag(args, cfg)
    except (FmsvError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

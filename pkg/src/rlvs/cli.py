"""Command-line pipeline: synth -> fit -> surface, plus implied/compare.

Every command reads an optional INI config (sections mirror the run
stages), applies flag overrides, echoes the fully-resolved configuration,
and draws all randomness from config seeds so runs are reproducible.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from importlib import resources

import numpy as np

from . import grid as grid_mod
from . import ingest, model, sampler, surface as surface_mod, voltools

DEFAULTS = {
    "synth": {
        "s0": 100.0,
        "mu": 0.0,
        "sigma": 0.5,
        "n_ticks": 23401,
        "session_length": 23400.0,
        "trading_days": 252,
        "seed": 1,
    },
    "grid": {
        "n_time": 78,
        "n_price": 10,
        "price_min": None,
        "price_max": None,
        "resample_interval": 300.0,
        "standardize": True,
    },
    "model": {
        "n_components": 5,
        "component_scale": 1.0,
    },
    "hmc": {
        "step_size": 0.01,
        "n_leapfrog": 20,
        "n_burn": 1000,
        "n_draws": 5000,
        "adapt_step_size": True,
        "target_accept": 0.75,
        "keep_last": 100,
        "seed": 2,
    },
    "surface": {
        "n_param_draws": 100,
        "n_returns_per_draw": 100,
        "ci_level": 0.95,
        "bins_per_day": None,
        "trading_days": 252,
        "seed": 3,
    },
}

# Keys that may be left unset and resolved from data at run time.
_OPTIONAL = {("grid", "price_min"), ("grid", "price_max"), ("surface", "bins_per_day")}


def n_threads() -> int:
    """Worker cap from RLVS_THREADS (compute here is sequential; the cap is
    honored trivially and echoed for the record)."""
    try:
        return max(1, int(os.environ.get("RLVS_THREADS", "1")))
    except ValueError:
        return 1


def default_config() -> dict:
    return {sec: dict(vals) for sec, vals in DEFAULTS.items()}


def _convert(section: str, key: str, raw: str):
    if key not in DEFAULTS[section]:
        raise ValueError(f"unknown config key [{section}] {key}")
    ref = DEFAULTS[section][key]
    raw = raw.strip()
    if (section, key) in _OPTIONAL and raw.lower() in ("", "none", "auto"):
        return None
    if isinstance(ref, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"[{section}] {key}: expected a boolean, got {raw!r}")
    if isinstance(ref, int) and not isinstance(ref, bool):
        return int(raw)
    if isinstance(ref, float) or ref is None:
        return float(raw)
    return raw


def load_config(path=None, preset=None) -> dict:
    """Defaults, optionally overlaid with a preset and/or an INI file."""
    cfg = default_config()
    sources = []
    if preset:
        name = preset.replace("-", "_") + ".ini"
        ref = resources.files("rlvs").joinpath("presets").joinpath(name)
        if not ref.is_file():
            raise ValueError(f"unknown preset {preset!r}")
        sources.append(("preset " + preset, ref.read_text()))
    if path:
        with open(path) as fh:
            sources.append((str(path), fh.read()))
    for label, text in sources:
        parser = configparser.ConfigParser()
        parser.read_string(text, source=label)
        for section in parser.sections():
            if section not in cfg:
                raise ValueError(f"{label}: unknown config section [{section}]")
            for key, raw in parser.items(section):
                cfg[section][key] = _convert(section, key, raw)
    return cfg


def apply_master_seed(cfg: dict, seed: int) -> None:
    cfg["synth"]["seed"] = seed
    cfg["hmc"]["seed"] = seed + 1
    cfg["surface"]["seed"] = seed + 2


def echo_config(cfg: dict, out=None) -> None:
    out = out or sys.stdout
    print(f"rlvs_threads = {n_threads()}", file=out)
    for section, vals in cfg.items():
        print(f"[{section}]", file=out)
        for key, val in vals.items():
            print(f"{key} = {val}", file=out)
    out.flush()


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------

def run_synth(cfg: dict, out_path) -> ingest.TickSeries:
    s = cfg["synth"]
    series = ingest.synth_gbm_ticks(
        s0=s["s0"], mu=s["mu"], sigma=s["sigma"], n_ticks=s["n_ticks"],
        session_length=s["session_length"], trading_days=s["trading_days"],
        seed=s["seed"],
    )
    ingest.save_ticks(series, out_path)
    print(f"wrote {len(series)} ticks to {out_path} (seed {s['seed']})")
    return series


def run_fit(cfg: dict, ticks_path, out_path) -> dict:
    g, m, h = cfg["grid"], cfg["model"], cfg["hmc"]
    session_length = cfg["synth"]["session_length"]
    series = ingest.load_ticks(ticks_path, session_length=session_length)

    interval = g["resample_interval"]
    if interval and interval > 0:
        series = ingest.resample(series, interval)
        bins_per_day = int(round(session_length / interval))
    else:
        bins_per_day = max(len(series) - 1, 1)

    pmin = g["price_min"] if g["price_min"] is not None else float(series.prices.min())
    pmax = g["price_max"] if g["price_max"] is not None else float(series.prices.max())
    if pmax <= pmin:
        # Constant-price sessions: widen the band so the pipeline reaches the
        # standardization stage, which reports the degenerate-volatility error.
        pmax = pmin + max(abs(pmin) * 1e-9, 1e-9)

    norm = ingest.normalize_time(series)
    spec = grid_mod.GridSpec(g["n_time"], g["n_price"], pmin, pmax, session_length)
    gdata = grid_mod.build_grid(norm, spec)
    scale = 1.0
    if g["standardize"]:
        gdata, scale = grid_mod.standardize_returns(gdata)

    dims = model.ModelDims(g["n_time"], g["n_price"], m["n_components"])
    post = model.Posterior(gdata, dims, m["component_scale"])
    init_rng = np.random.default_rng([h["seed"], 1])  # init stream, distinct from chain
    init = model.ModelParams.random_init(dims, init_rng, m["component_scale"])

    hmc_cfg = sampler.HmcConfig(
        step_size=h["step_size"], n_leapfrog=h["n_leapfrog"],
        n_burn=h["n_burn"], n_draws=h["n_draws"], seed=h["seed"],
        adapt_step_size=h["adapt_step_size"], target_accept=h["target_accept"],
    )
    chain = sampler.run_chain(init.to_vector(), hmc_cfg, post)
    report = sampler.diagnostics(chain)
    print(f"acceptance rate: {report.acceptance_rate:.4f}")
    print(str(report))

    kept = chain.draws[-h["keep_last"]:]
    checkpoint = {
        "kind": "rlvs-checkpoint",
        "dims": {"n_time": dims.n_time, "n_price": dims.n_price,
                 "n_components": dims.n_components},
        "component_scale": m["component_scale"],
        "standardize_scale": scale,
        "seed": h["seed"],
        "bins_per_day": bins_per_day,
        "step_size_used": chain.step_size_used,
        "acceptance": {
            "rate": report.acceptance_rate,
            "post_burn_rate": report.post_burn_rate,
            "mean_abs_delta_h": report.mean_abs_delta_h,
            "n_divergent": report.n_divergent,
        },
        "n_kept": len(kept),
        "draws": [d.tolist() for d in kept],
        "grid": gdata.to_dict(),
        "config": cfg,
    }
    with open(out_path, "w", newline="\n") as fh:
        json.dump(checkpoint, fh)
    print(f"wrote checkpoint ({len(kept)} retained draws) to {out_path}")
    return checkpoint


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        ckpt = json.load(fh)
    if ckpt.get("kind") != "rlvs-checkpoint":
        raise ValueError(f"{path}: not a fit checkpoint")
    return ckpt


def run_surface(cfg: dict, ckpt_path, out_path, fmt: str) -> surface_mod.VolSurface:
    s = cfg["surface"]
    ckpt = load_checkpoint(ckpt_path)
    dims = model.ModelDims(**ckpt["dims"])
    gdata = grid_mod.GridData.from_dict(ckpt["grid"])
    draws = [
        model.ModelParams.from_vector(dims, np.asarray(v), ckpt["component_scale"])
        for v in ckpt["draws"]
    ]
    bins_per_day = s["bins_per_day"]
    if bins_per_day is None:
        bins_per_day = int(ckpt.get("bins_per_day", 78))
    surf_cfg = surface_mod.SurfaceConfig(
        n_param_draws=s["n_param_draws"],
        n_returns_per_draw=s["n_returns_per_draw"],
        ci_level=s["ci_level"],
        bins_per_day=int(bins_per_day),
        trading_days=s["trading_days"],
        seed=s["seed"],
    )
    surf = surface_mod.build_surface(
        draws, gdata, surf_cfg, destandardize_scale=ckpt["standardize_scale"]
    )
    surface_mod.export_surface(surf, out_path, fmt)
    print(f"wrote surface ({fmt}) to {out_path}")
    return surf


def run_implied(quotes_path, spot, rate, yield_rate, out_path) -> voltools.ImpliedCurve:
    quotes = voltools.load_quotes(quotes_path, spot=spot, rate=rate, yield_rate=yield_rate)
    curve = voltools.implied_curve(quotes)
    voltools.save_implied_curve(curve, out_path)
    for strike, reason in curve.skipped:
        print(f"skipped strike {strike}: {reason}", file=sys.stderr)
    print(f"wrote implied curve ({curve.strikes.size} strikes, "
          f"{len(curve.skipped)} skipped) to {out_path}")
    return curve


def run_compare(surface_path, quotes_path, spot, rate, yield_rate,
                snapshots, out_path) -> int:
    surf = surface_mod.load_surface(surface_path)
    quotes = voltools.load_quotes(quotes_path, spot=spot, rate=rate, yield_rate=yield_rate)
    spec = surf.spec
    in_range = [q for q in quotes
                if spec.price_min <= q.strike <= spec.price_max]
    if not in_range:
        raise ValueError(
            f"no overlapping price range: quote strikes all outside "
            f"[{spec.price_min}, {spec.price_max}]"
        )
    n_rows = 0
    with open(out_path, "w", newline="\n") as fh:
        fh.write("snapshot,strike,implied_vol,realized_vol,difference,masked\n")
        for t in snapshots:
            i = min(max(int(np.floor(t * spec.n_time)), 0), spec.n_time - 1)
            for q in in_range:
                try:
                    iv = voltools.implied_vol(q)
                except voltools.VolToolsError as exc:
                    print(f"skipped strike {q.strike}: {exc}", file=sys.stderr)
                    continue
                frac = ingest.normalize_price(q.strike, spec.price_min, spec.price_max)
                j = min(max(int(np.floor(frac * spec.n_price)), 0), spec.n_price - 1)
                rv = float(surf.vol_mean[i, j])
                fh.write(
                    f"{t!r},{q.strike!r},{iv!r},{rv!r},{rv - iv!r},"
                    f"{int(surf.masked[i, j])}\n"
                )
                n_rows += 1
    if n_rows == 0:
        raise ValueError("no comparable (snapshot, strike) pairs produced")
    print(f"wrote {n_rows} comparison rows to {out_path}")
    return n_rows


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--preset", help="named preset (e.g. paper-protocol)")
    p.add_argument("--seed", type=int, help="master seed (stage seeds derive from it)")
    p.add_argument("--out", help="output path")


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="rlvs",
        description="Realized local volatility surfaces from tick data.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic tick CSV")
    _add_common(p)
    p.add_argument("--s0", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--n-ticks", type=int)

    p = sub.add_parser("fit", help="fit the mixture model to a tick CSV")
    _add_common(p)
    p.add_argument("--ticks", required=True, help="input tick CSV")
    p.add_argument("--burn", type=int)
    p.add_argument("--draws", type=int)
    p.add_argument("--step-size", type=float)
    p.add_argument("--components", type=int)

    p = sub.add_parser("surface", help="build the volatility surface from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--format", choices=("csv", "json", "svg"), default="csv")
    p.add_argument("--param-draws", type=int)

    p = sub.add_parser("implied", help="implied-volatility curve from a quote CSV")
    _add_common(p)
    p.add_argument("--quotes", required=True)
    p.add_argument("--spot", type=float, required=True)
    p.add_argument("--rate", type=float, default=0.0)
    p.add_argument("--yield", dest="yield_rate", type=float, default=0.0)

    p = sub.add_parser("compare", help="implied vs realized local vol at snapshots")
    _add_common(p)
    p.add_argument("--surface", required=True, dest="surface_path")
    p.add_argument("--quotes", required=True)
    p.add_argument("--spot", type=float, required=True)
    p.add_argument("--rate", type=float, default=0.0)
    p.add_argument("--yield", dest="yield_rate", type=float, default=0.0)
    p.add_argument("--snapshots", default="0.5",
                   help="comma-separated normalized session times in [0, 1]")
    return ap


def _resolve(args) -> dict:
    cfg = load_config(args.config, args.preset)
    if args.seed is not None:
        apply_master_seed(cfg, args.seed)
    overrides = {
        "s0": ("synth", "s0"), "mu": ("synth", "mu"), "sigma": ("synth", "sigma"),
        "n_ticks": ("synth", "n_ticks"),
        "burn": ("hmc", "n_burn"), "draws": ("hmc", "n_draws"),
        "step_size": ("hmc", "step_size"),
        "components": ("model", "n_components"),
        "param_draws": ("surface", "n_param_draws"),
    }
    for attr, (section, key) in overrides.items():
        val = getattr(args, attr, None)
        if val is not None:
            cfg[section][key] = val
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        echo_config(cfg)
        if args.command == "synth":
            run_synth(cfg, args.out or "ticks.csv")
        elif args.command == "fit":
            run_fit(cfg, args.ticks, args.out or "checkpoint.json")
        elif args.command == "surface":
            out = args.out or f"surface.{args.format}"
            run_surface(cfg, args.checkpoint, out, args.format)
        elif args.command == "implied":
            run_implied(args.quotes, args.spot, args.rate, args.yield_rate,
                        args.out or "implied.csv")
        elif args.command == "compare":
            snapshots = [float(s) for s in args.snapshots.split(",") if s.strip()]
            if not snapshots:
                raise ValueError("--snapshots produced no snapshot times")
            run_compare(args.surface_path, args.quotes, args.spot, args.rate,
                        args.yield_rate, snapshots, args.out or "compare.csv")
        return 0
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        # All package error types subclass ValueError.
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

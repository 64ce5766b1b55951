"""Command-line entry point: ``semibasis <subcommand> [flags]``.

Every output starts with a header block of ``key: value`` lines holding the
resolved configuration, then a blank line, then the data section (CSV rows or
a JSON document). With ``--format json`` the header becomes the ``header``
member of one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__

EXIT_INVALID = 1


class CliError(ValueError):
    pass


# ---------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def render(header: dict, columns=None, rows=None, doc=None, fmt: str = "csv") -> str:
    """Header block plus either a table (columns/rows) or a JSON document."""
    if fmt == "json":
        data = doc if doc is not None else [dict(zip(columns, r)) for r in rows]
        return json.dumps({"header": _jsonable(header), "data": _jsonable(data)}, indent=2) + "\n"
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"{k}: {_fmt(v)}\n")
    buf.write("\n")
    if columns is not None:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    else:
        buf.write(json.dumps(_jsonable(doc), indent=2) + "\n")
    return buf.getvalue()


def write_atomic(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(args, header, **payload):
    full = {"command": args.command, "version": __version__}
    full.update(_resolved(args))
    full.update(header)
    text = render(full, fmt=args.format, **payload)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def _resolved(args) -> dict:
    skip = {"command", "func", "format", "out"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip or v is None:
            continue
        out[f"config.{k}"] = str(v) if isinstance(v, Path) else v
    return out


# ---------------------------------------------------------------- parsing helpers


def _floats(text: str, n=None, name="value"):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"{name}: expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise CliError(f"{name}: expected {n} numbers, got {len(vals)}")
    return vals


def _grid(text: str, name: str):
    lo, hi, n = _floats(text, 3, name)
    if n < 2 or n != int(n) or not hi > lo:
        raise CliError(f"{name}: need lo,hi,n with hi > lo and integer n >= 2")
    return np.linspace(lo, hi, int(n))


def _option_flags(p, tau_required=True):
    p.add_argument("--S", type=float, required=True, help="spot price")
    p.add_argument("--K", type=float, required=True, help="strike")
    p.add_argument("--tau", type=float, required=tau_required, default=None, help="years to expiry")
    p.add_argument("--r", type=float, default=0.0)
    p.add_argument("--d", type=float, default=0.0, help="dividend rate")
    p.add_argument("--sigma", type=float, default=0.2)


def _market(args):
    from .bs_core import MarketState

    return MarketState(args.S, 0.0, args.r, args.d, args.sigma)


# ---------------------------------------------------------------- option subcommands


def cmd_price(args):
    from .american_lattice import decomposition_price, lattice_delta, lattice_price
    from .bs_core import Kind, OptionSpec, Style, euro_delta, euro_price

    kind, style = Kind(args.kind), Style(args.style)
    mkt = _market(args)
    euro = OptionSpec(kind, Style.EUROPEAN, args.K, args.tau)
    amer = OptionSpec(kind, Style.AMERICAN, args.K, args.tau)
    rows = [["black-scholes", euro_price(euro, mkt), euro_delta(euro, mkt), ""]]
    rows.append(["crr-european", lattice_price(euro, mkt, args.n_steps), lattice_delta(euro, mkt, args.n_steps), ""])
    if style is Style.AMERICAN:
        # puts with r = 0 and calls with d = 0 are never exercised early
        no_premium = (kind is Kind.PUT and args.r == 0) or (kind is Kind.CALL and args.d == 0)
        if no_premium:
            rows.append(["american", rows[0][1], rows[0][2], "premium 0"])
        else:
            p = lattice_price(amer, mkt, args.n_steps)
            rows.append(["american", p, lattice_delta(amer, mkt, args.n_steps), f"premium {p - rows[0][1]:.6f}"])
            if kind is Kind.PUT and args.decomposition:
                e, prem = decomposition_price(amer, mkt, args.n_steps)
                rows.append(["decomposition", e + prem, float("nan"), f"premium {prem:.6f}"])
    _emit(args, {}, columns=["method", "price", "delta", "note"], rows=rows)


def cmd_boundary(args):
    from .american_lattice import extract_boundary
    from .bs_core import Kind, OptionSpec, Style

    spec = OptionSpec(Kind.PUT, Style.AMERICAN, args.K, args.tau)
    b = extract_boundary(spec, _market(args), args.n_steps)
    rows = list(zip(b.times, b.u, b.level, b.zbar))
    _emit(args, {"points": len(rows)}, columns=["t", "u", "level", "zbar"], rows=rows)


def cmd_premium(args):
    from .american_lattice import decomposition_price, lattice_price
    from .bs_core import Kind, OptionSpec, Style

    spec = OptionSpec(Kind.PUT, Style.AMERICAN, args.K, args.tau)
    mkt = _market(args)
    euro, prem = decomposition_price(spec, mkt, args.n_steps)
    lat = lattice_price(spec, mkt, args.n_steps)
    rows = [[euro, prem, euro + prem, lat, euro + prem - lat]]
    _emit(args, {}, columns=["european", "premium", "decomposition", "lattice", "difference"], rows=rows)


def _load_model_doc(path):
    doc = json.loads(Path(path).read_text())
    return doc.get("data", doc)


def cmd_fit_spline(args):
    from .spline_pricer import PriceBook, fit_gcv, simulate_training_book

    if args.train:
        book = PriceBook.read_csv(args.train)
        source = str(args.train)
    else:
        book = simulate_training_book(years=args.years, S0=args.S0, mu=args.mu, sigma=args.sigma, r=args.r,
                                      d=args.d, seed=args.seed, n_steps=args.n_steps, sigma_mode=args.sigma_mode)
        source = "simulated"
        if args.book_out:
            book.write_csv(args.book_out)
    model = fit_gcv(book)
    Pe = book.european()
    P = model.price(book.S, book.K, book.tau, book.r, book.d, book.sigma)
    header = {
        "source": source,
        "samples": len(book),
        "J": ",".join(str(j) for j in model.J),
        "gcv": model.gcv,
        "rmse_model": float(np.sqrt(np.mean(((P - book.price) / book.K) ** 2))),
        "rmse_european": float(np.sqrt(np.mean(((Pe - book.price) / book.K) ** 2))),
    }
    _emit(args, header, doc=model.to_dict())


def cmd_hedge_sim(args):
    from .hedge_lab import american_study, bs_frequency_study
    from .spline_pricer import SplinePricerModel

    if args.mode == "bs":
        freqs = [int(f) for f in _floats(args.frequencies, name="--frequencies")]
        if any(f < 1 for f in freqs):
            raise CliError("--frequencies must be positive")
        rep = bs_frequency_study(args.S, args.K, args.tau, args.r, args.d, args.sigma, args.mu, args.kind,
                                 args.paths, args.seed, freqs)
    else:
        if not args.model:
            raise CliError("--model is required for --mode american")
        model = SplinePricerModel.from_dict(_load_model_doc(args.model))
        rep = american_study(model, args.S, args.K, args.tau, args.r, args.d, args.sigma, args.mu,
                             args.paths, args.seed, args.n_steps)
    header = {"xi": rep.xi, "eta": rep.eta, "kappa": rep.kappa, "rng": rep.rng}
    if args.format == "json":
        _emit(args, header, doc=rep.to_dict())
    else:
        cols = list(rep.breakdown[0])
        _emit(args, header, columns=cols, rows=[[row[c] for c in cols] for row in rep.breakdown])


# ---------------------------------------------------------------- lynx subcommands


def _lynx_model(args, series):
    from .lynx_model import SETAR2, BackfitConfig, fit_combined, fit_logistic

    if args.model == "setar2":
        return SETAR2
    if args.model == "logistic":
        return fit_logistic(series)
    cfg = BackfitConfig(max_terms=args.max_terms, penalty_d=args.penalty, threshold=args.threshold,
                        endspan=args.endspan, minspan=args.minspan)
    return fit_combined(series, config=cfg)


def _series(args):
    from .lynx_model import load_series

    return load_series(args.data)


def cmd_lynx_fit(args):
    from .lynx_model import CombinedLynxModel, LogisticParams

    series = _series(args)
    model = _lynx_model(args, series)
    if isinstance(model, LogisticParams):
        header = {"equilibrium": model.equilibrium(), "max_factor": model.max_factor}
        doc = dict(vars(model))
        rows = list(doc.items())
    elif isinstance(model, CombinedLynxModel):
        header = {"converged": model.converged, "iterations": model.n_iter,
                  "training_rss": model.rss_trace[-1], "g": str(model.g)}
        doc = model.to_dict()
        rows = [(f"logistic.{k}", v) for k, v in vars(model.logistic).items()]
        rows += [(f"g[{b}]", c) for b, c in zip(model.g.basis, model.g.coefficients)]
    else:
        header = {"threshold": model.threshold}
        doc = {"lower": list(model.lower), "upper": list(model.upper), "threshold": model.threshold}
        rows = [(f"lower.{i}", v) for i, v in enumerate(model.lower)]
        rows += [(f"upper.{i}", v) for i, v in enumerate(model.upper)]
    if args.format == "json":
        _emit(args, header, doc=doc)
    else:
        _emit(args, header, columns=["parameter", "value"], rows=rows)


def cmd_lynx_forecast(args):
    from .lynx_model import forecast_eval

    series = _series(args)
    rep = forecast_eval(_lynx_model(args, series), series, label=args.model)
    rows = [[int(y), round(float(x), 3), rep.forecasts[1][i], rep.errors[1][i], rep.forecasts[2][i], rep.errors[2][i]]
            for i, (y, x) in enumerate(zip(rep.years, rep.actual))]
    rows.append(["AAPE", "", "", rep.aape[1], "", rep.aape[2]])
    header = {"aape_one_step": round(rep.aape[1], 4), "aape_two_step": round(rep.aape[2], 4)}
    _emit(args, header, columns=["year", "X", "forecast_1", "error_1", "forecast_2", "error_2"], rows=rows)


def cmd_lynx_skeleton(args):
    from .lynx_model import skeleton_orbit

    series = _series(args)
    model = _lynx_model(args, series)
    x0 = _floats(args.x0, 2, "--x0")
    res = skeleton_orbit(model, x0, n_steps=args.n_steps)
    header = {"summary": res.summary, "period": res.period if res.period is not None else "none"}
    if res.cycle is not None:
        prev = np.concatenate([[res.cycle[-1]], res.cycle[:-1]])
        rows = [[k, x, x - p] for k, (x, p) in enumerate(zip(res.cycle, prev))]
    else:
        tail = res.orbit[-50:]
        rows = [[k, x, x - p] for k, (x, p) in enumerate(zip(tail[1:], tail[:-1]))]
    _emit(args, header, columns=["k", "X", "growth"], rows=rows)
    if args.out:
        print(res.summary)


def cmd_lynx_grid(args):
    from .lynx_model import growth_grid

    series = _series(args)
    grid = growth_grid(_lynx_model(args, series), _grid(args.x1, "--x1"), _grid(args.x2, "--x2"))
    rows = list(grid.records())
    header = {"points": len(rows), "extinct_points": int(grid.extinct.sum())}
    _emit(args, header, columns=["x1", "x2", "growth", "extinct"], rows=rows)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semibasis", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--out", type=Path, default=None, help="write here (atomically) instead of stdout")
        return p

    p = add("price", cmd_price, "European, lattice and decomposition prices and deltas")
    _option_flags(p)
    p.add_argument("--kind", choices=("call", "put"), default="put")
    p.add_argument("--style", choices=("european", "american"), default="european")
    p.add_argument("--n-steps", type=int, default=1000)
    p.add_argument("--decomposition", action="store_true", help="also evaluate euro + premium integral")

    p = add("boundary", cmd_boundary, "American put exercise boundary from the lattice")
    _option_flags(p)
    p.add_argument("--n-steps", type=int, default=1000)

    p = add("premium", cmd_premium, "early-exercise premium of an American put")
    _option_flags(p)
    p.add_argument("--n-steps", type=int, default=5000)

    p = add("fit-spline", cmd_fit_spline, "fit the spline pricer by GCV")
    p.add_argument("--train", type=Path, default=None, help="CSV with header S,K,tau,r,d,sigma,price")
    p.add_argument("--book-out", type=Path, default=None, help="save the simulated training book")
    p.add_argument("--years", type=float, default=10.0)
    p.add_argument("--S0", type=float, default=100.0)
    p.add_argument("--mu", type=float, default=0.08)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--r", type=float, default=0.05)
    p.add_argument("--d", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=20040301)
    p.add_argument("--n-steps", type=int, default=500, help="lattice steps for the training prices")
    p.add_argument("--sigma-mode", choices=("true", "rolling"), default="true")

    p = add("hedge-sim", cmd_hedge_sim, "delta-hedging Monte Carlo")
    p.add_argument("--mode", choices=("bs", "american"), default="bs")
    p.add_argument("--S", type=float, default=100.0)
    p.add_argument("--K", type=float, default=100.0)
    p.add_argument("--tau", type=float, default=0.25)
    p.add_argument("--r", type=float, default=0.05)
    p.add_argument("--d", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--mu", type=float, default=0.1, help="physical drift of the simulated paths")
    p.add_argument("--kind", choices=("call", "put"), default="call")
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=12345)
    p.add_argument("--frequencies", default="63,126,253,1012")
    p.add_argument("--model", type=Path, default=None, help="spline model JSON from fit-spline")
    p.add_argument("--n-steps", type=int, default=500, help="lattice steps for the true delta")

    for name, func, help_ in (
        ("lynx-fit", cmd_lynx_fit, "fit a lynx growth model"),
        ("lynx-forecast", cmd_lynx_forecast, "holdout forecasts and AAPE"),
        ("lynx-skeleton", cmd_lynx_skeleton, "limit cycle of the noise-free map"),
        ("lynx-grid", cmd_lynx_grid, "growth surface with extinction flags"),
    ):
        p = add(name, func, help_)
        p.add_argument("--model", choices=("setar2", "logistic", "combined"), default="setar2")
        p.add_argument("--data", type=Path, default=None, help="year,count CSV (bundled data by default)")
        p.add_argument("--max-terms", type=int, default=15)
        p.add_argument("--penalty", type=float, default=3.0)
        p.add_argument("--threshold", type=float, default=1e-3)
        p.add_argument("--endspan", type=int, default=0)
        p.add_argument("--minspan", type=int, default=1)
        if name == "lynx-skeleton":
            p.add_argument("--x0", default="3,3", help="X_{t-1},X_{t-2}")
            p.add_argument("--n-steps", type=int, default=2000)
        if name == "lynx-grid":
            p.add_argument("--x1", default="1.5,4.0,51", help="lo,hi,n for X_{t-1}")
            p.add_argument("--x2", default="1.5,4.0,51", help="lo,hi,n for X_{t-2}")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for flag in ("n_steps", "paths"):
        if getattr(args, flag, 1) is not None and getattr(args, flag, 1) < 1:
            parser.error(f"--{flag.replace('_', '-')} must be >= 1")
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"semibasis {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return 0


if __name__ == "__main__":
    sys.exit(main())

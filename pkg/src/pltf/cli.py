"""Command-line front end.

Subcommands: ``generate``, ``fit``, ``select``, ``eval-links``.

Model flags mirror the config-file keys (``--model``, ``--dims``, ``--rank``,
``--core-dims``, ``--a``/``prior_a``, ``--b``/``prior_b``,
``--custom-factors``, ``--latent-dims``).  Values from ``--config`` are read
first; flags given on the command line override them.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import PltfError, ShapeError, SingularModelError, ValidationError
from .evaluation import LINK_HEADER, evaluate_links, generate_cp, sweep_order
from .inference import FitConfig, fit
from .io import file_digest, model_from_config, read_config, read_coo, save_fit, write_coo
from .model import DEFAULT_A, DEFAULT_B, Observation, check_model

logger = logging.getLogger("pltf")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class Manifest:
    """Run record written before numeric work and refreshed after each phase."""

    def __init__(self, out_dir, command, config, seed):
        self.path = Path(out_dir) / "manifest.json"
        self.data = {
            "command": command,
            "version": __version__,
            "config": config,
            "seed": seed,
            "inputs": {},
            "artifacts": [],
            "timings": {},
            "status": "started",
        }
        self._t = time.perf_counter()

    def add_input(self, path):
        if path:
            self.data["inputs"][str(path)] = file_digest(path)

    def phase(self, name):
        now = time.perf_counter()
        self.data["timings"][name] = round(now - self._t, 6)
        self._t = now

    def artifacts(self, paths):
        self.data["artifacts"] += [str(p) for p in paths]

    def write(self, status=None):
        if status:
            self.data["status"] = status
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Argument plumbing
# ---------------------------------------------------------------------------

def _add_model_flags(p, rank=True):
    g = p.add_argument_group("model (flags override --config values)")
    g.add_argument("--config", type=Path, help="key = value model config file")
    g.add_argument("--model", choices=["cp", "tucker", "custom"])
    g.add_argument("--dims", nargs="+", help="visible index sizes, e.g. 50 50 50 or i:50 j:50")
    if rank:
        g.add_argument("--rank", type=int)
    g.add_argument("--core-dims", nargs=3, type=int, dest="core_dims")
    g.add_argument("--a", type=float, dest="prior_a", help=f"prior shape (default {DEFAULT_A})")
    g.add_argument("--b", type=float, dest="prior_b", help=f"prior mean (default {DEFAULT_B})")
    g.add_argument("--custom-factors", dest="custom_factors", help="e.g. 'i,r; j,r; k,r'")
    g.add_argument("--latent-dims", nargs="+", dest="latent_dims", help="e.g. r:7")


def _resolve_model_config(args, data_shape=None) -> dict:
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    for key in ("model", "dims", "rank", "core_dims", "prior_a", "prior_b", "custom_factors", "latent_dims"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = " ".join(map(str, value)) if isinstance(value, list) else str(value)
    cfg.setdefault("model", "cp")
    cfg.setdefault("prior_a", str(DEFAULT_A))
    cfg.setdefault("prior_b", str(DEFAULT_B))
    if "dims" not in cfg and data_shape is not None:
        cfg["dims"] = " ".join(map(str, data_shape))
    return cfg


def _load_observation(data_path, mask_path, manifest):
    if not Path(data_path).exists():
        raise ValidationError(f"data file not found: {data_path}")
    X = read_coo(data_path)
    manifest.add_input(data_path)
    M = None
    if mask_path:
        if not Path(mask_path).exists():
            raise ValidationError(f"mask file not found: {mask_path}")
        M = read_coo(mask_path)
        manifest.add_input(mask_path)
        if M.shape != X.shape:
            raise ValidationError(f"mask shape {M.shape} differs from data shape {X.shape}")
    return Observation(X, M)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(args):
    out = Path(args.out)
    config = {
        "dims": args.dims,
        "rank": args.rank,
        "prior_a": args.prior_a,
        "prior_b": args.prior_b,
        "poisson": not args.no_poisson,
    }
    manifest = Manifest(out, "generate", config, args.seed)
    manifest.write()
    X, factors = generate_cp(args.dims, args.rank, args.prior_a, args.prior_b, args.seed, not args.no_poisson)
    manifest.phase("generate")
    paths = [out / "data.coo"]
    write_coo(paths[0], X)
    for k, f in enumerate(factors):
        paths.append(out / f"truth_Z{k + 1}.coo")
        write_coo(paths[-1], f, keep_zeros=True)
    manifest.phase("write")
    manifest.artifacts(paths)
    manifest.write("done")
    print(f"generate: dims={'x'.join(map(str, args.dims))} rank={args.rank} "
          f"total={X.values.sum():g} nonzeros={int((X.values != 0).sum())} -> {paths[0]}")
    return EXIT_OK


def cmd_fit(args):
    out = Path(args.out)
    cfg = FitConfig(args.method, args.iters, args.tol, args.seed, args.em_mode)
    manifest = Manifest(out, "fit", {}, args.seed)
    obs = _load_observation(args.data, args.mask, manifest)
    model_cfg = _resolve_model_config(args, obs.shape)
    manifest.data["config"] = {**model_cfg, **vars(cfg), "mask": str(args.mask) if args.mask else "all-ones"}
    manifest.write()
    model = model_from_config(model_cfg)
    check_model(model)
    manifest.phase("load")
    result = fit(model, obs, cfg)
    manifest.phase("fit")
    paths = save_fit(result, model, out, include_L=args.save_L)
    manifest.artifacts(paths)
    manifest.phase("write")
    manifest.write("done")
    final = f"bound={result.bound!r}" if result.method == "vb" else f"divergence={result.divergence!r}"
    print(f"fit: method={result.method} iterations={result.iterations_run} "
          f"converged={result.converged} {final}")
    return EXIT_OK


def cmd_select(args):
    out = Path(args.out)
    manifest = Manifest(out, "select", {}, args.seed)
    obs = _load_observation(args.data, args.mask, manifest)
    model_cfg = _resolve_model_config(args, obs.shape)
    if model_cfg["model"] != "cp":
        raise ValidationError("select sweeps the CP rank; use --model cp")
    dims = [int(d) for d in model_cfg["dims"].split()]
    if tuple(dims) != obs.shape:
        raise ValidationError(f"config dims {dims} differ from data shape {obs.shape}")
    a, b = float(model_cfg["prior_a"]), float(model_cfg["prior_b"])
    cfg = FitConfig(args.method, args.iters, args.tol, args.seed)
    manifest.data["config"] = {**model_cfg, **vars(cfg), "rmin": args.rmin, "rmax": args.rmax,
                               "restarts": args.restarts}
    manifest.write()

    def family(rank):
        cfg_r = dict(model_cfg, rank=str(rank))
        return model_from_config(cfg_r)

    check_model(family(args.rmin))
    report = sweep_order(family, obs, args.rmin, args.rmax, args.restarts, cfg, n_jobs=args.jobs)
    manifest.phase("sweep")
    path = out / "sweep.csv"
    summary = f"# selected_order={report.selected_order}\n"
    path.write_text(report.to_csv() + summary)
    best = out / "best_bound.csv"
    best.write_text("order,best_bound\n" + "".join(
        f"{o},{v!r}\n" for o, v in zip(report.orders, report.best_bound)))
    manifest.artifacts([path, best])
    manifest.data["selected_order"] = report.selected_order
    manifest.write("done")
    print(report.selected_order)
    return EXIT_OK


def cmd_eval_links(args):
    out = Path(args.out)
    fractions = [p / 100.0 if p >= 1 else p for p in args.missing]
    seeds = list(range(args.seeds))
    config = {
        "missing_fractions": fractions,
        "methods": args.methods,
        "ranks": args.ranks,
        "seeds": seeds,
        "prior_a": args.prior_a,
        "prior_b": args.prior_b,
        "iters": args.iters,
    }
    manifest = Manifest(out, "eval-links", config, seeds)
    if not Path(args.data).exists():
        raise ValidationError(f"data file not found: {args.data}")
    X = read_coo(args.data)
    manifest.add_input(args.data)
    manifest.write()
    binary = (X.values > 0).astype(float)
    rows = evaluate_links(binary, fractions, args.methods, args.ranks, seeds,
                          args.prior_a, args.prior_b, args.iters)
    manifest.phase("evaluate")
    path = out / "auc.csv"
    path.write_text("\n".join([LINK_HEADER] + [r.csv() for r in rows]) + "\n")
    manifest.artifacts([path])
    manifest.write("done")
    finite = [r.auc for r in rows if not np.isnan(r.auc)]
    mean = f"{np.mean(finite):.4f}" if finite else "n/a"
    print(f"eval-links: rows={len(rows)} mean_auc={mean} -> {path}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="pltf", description="Poisson latent tensor factorization (EM and VB).")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("generate", help="sample a synthetic CP tensor")
    p.add_argument("--dims", nargs="+", type=int, required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--a", type=float, default=DEFAULT_A, dest="prior_a")
    p.add_argument("--b", type=float, default=DEFAULT_B, dest="prior_b")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-poisson", action="store_true", help="write the noiseless intensity")
    p.add_argument("--out", type=Path, default=Path("."))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit one model with EM or VB")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mask", type=Path, help="COO mask, 1 = observed (default: all observed)")
    _add_model_flags(p)
    p.add_argument("--method", choices=["vb", "em"], default="vb")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--em-mode", choices=["flat", "full"], default="flat")
    p.add_argument("--save-L", action="store_true", dest="save_L", help="also write the L views")
    p.add_argument("--out", type=Path, default=Path("fit_out"))
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="sweep the CP rank and pick the best bound")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mask", type=Path)
    _add_model_flags(p, rank=False)
    p.add_argument("--rmin", type=int, default=2)
    p.add_argument("--rmax", type=int, default=10)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--method", choices=["vb", "em"], default="vb")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="parallel fits")
    p.add_argument("--out", type=Path, default=Path("select_out"))
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("eval-links", help="AUC grid over missing fraction, method, rank, seed")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--missing", nargs="*", type=float, default=[40, 60, 80],
                   help="percent (or fraction < 1) of cells held out")
    p.add_argument("--methods", nargs="*", choices=["vb", "em"], default=["em", "vb"])
    p.add_argument("--ranks", nargs="*", type=int, default=[2])
    p.add_argument("--seeds", type=int, default=10, help="number of seeds, 0..N-1")
    p.add_argument("--a", type=float, default=DEFAULT_A, dest="prior_a")
    p.add_argument("--b", type=float, default=DEFAULT_B, dest="prior_b")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--out", type=Path, default=Path("links_out"))
    p.set_defaults(func=cmd_eval_links)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except SingularModelError as exc:
        print(f"pltf: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ShapeError) as exc:
        print(f"pltf: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PltfError as exc:
        print(f"pltf: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"pltf: I/O error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"pltf: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

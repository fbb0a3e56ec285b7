"""``privexp`` command line.

Exit codes: 0 success, 2 bad configuration or input, 3 release mechanism
error (e.g. an unbounded family without ``--bounds``), 4 incompatible inputs
(release and prior of different families).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, MustTruncateError, PrivexpError
from .evaluation import ExperimentConfig, run_experiment, write_chain
from .expfam import Dataset, family_from_dict, prior_from_dict
from .inference import run_gibbs
from .mechanisms import NoisyRelease, release
from .truncation import Interval

log = logging.getLogger("privexp")

EXIT_CONFIG = 2
EXIT_MECHANISM = 3
EXIT_COMPAT = 4

DEFAULT_ITERS = 7000
DEFAULT_BURNIN = 2000


class CompatibilityError(PrivexpError):
    pass


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: no such file") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _write_json(path, obj):
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def _require(d: dict, *keys):
    for key in keys:
        if key not in d:
            raise ConfigError(f"missing field {key!r}")


def cmd_simulate(args) -> int:
    cfg = _read_json(args.config)
    family = family_from_dict(cfg)
    _require(cfg, "n")
    if "theta" not in cfg and "theta_true" not in cfg:
        raise ConfigError("missing field 'theta'")
    theta = cfg.get("theta", cfg.get("theta_true"))
    theta = np.asarray(theta, dtype=float) if isinstance(theta, list) else float(theta)
    n = int(cfg["n"])
    if n < 1:
        raise ConfigError("n must be at least 1")
    family.check_theta(theta)
    values = family.sample_data(theta, n, rngmod.make_rng(args.seed))
    out = family.to_dict() | {
        "theta_true": np.asarray(theta).tolist(),
        "n": n,
        "seed": args.seed,
        "values": values.tolist(),
    }
    _write_json(args.out, out)
    return 0


def cmd_release(args) -> int:
    raw = _read_json(args.data)
    family = family_from_dict(raw)
    _require(raw, "values")
    data = Dataset(family, np.asarray(raw["values"], dtype=float))
    if args.epsilon is None:
        raise ConfigError("--epsilon is required")
    bounds = Interval(*args.bounds) if args.bounds else None
    if bounds is not None and family.bounded:
        raise ConfigError(f"{family.name} statistics are bounded; --bounds does not apply")
    rel = release(data, args.epsilon, rngmod.make_rng(args.seed), bounds=bounds)
    _write_json(args.out, rel.to_dict())
    return 0


def cmd_infer(args) -> int:
    rel = NoisyRelease.from_dict(_read_json(args.release))
    prior = prior_from_dict(_read_json(args.prior))
    if rel.family != prior.family:
        raise CompatibilityError(f"release family {rel.family.to_dict()} does not match prior family {prior.family.to_dict()}")
    iters = args.iters or DEFAULT_ITERS
    burnin = DEFAULT_BURNIN if args.burnin is None else args.burnin
    if not iters > burnin >= 0:
        raise ConfigError("need iters > burnin >= 0")
    chain = run_gibbs(rel, prior, iters, burnin, rngmod.make_rng(args.seed))
    write_chain(Path(args.out), chain, include_burnin=args.trace)
    log.info("rejection rate %.4f, exhausted %d", chain.rejection_rate, chain.exhausted)
    return 0


def _experiment(args, tasks) -> int:
    config = ExperimentConfig.load(args.config).with_overrides(seed=args.seed, iters=args.iters, burnin=args.burnin)
    summary = run_experiment(config, args.out, tasks=tasks, jobs=args.jobs)
    if "calibration" in summary:
        for cell in summary["calibration"]:
            print(f"{cell['method']:>10} n={cell['n']} eps={cell['epsilon']:g} D={cell['D']:.4f} p={cell['p']:.4f}")
    if "utility" in summary:
        for cell in summary["utility"]:
            print(f"{cell['method']:>10} n={cell['n']} eps={cell['epsilon']:g} median MMD2={cell['median_mmd2']:.5f}")
    if "traces" in summary:
        for row in summary["traces"]:
            print(f"run {row['run']}: mean={row['posterior_mean']:.4f} true={row['theta_true']:.4f} stabilized_at={row['stabilized_at']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privexp", description="Private Bayesian inference for exponential families.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=0):
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="draw a dataset from the model")
    p.add_argument("--config", required=True, help='JSON with family, theta and n, e.g. {"family": "bernoulli", "theta": 0.3, "n": 100}')
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("release", help="release noisy (truncated) sufficient statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--bounds", type=float, nargs=2, metavar=("A", "B"))
    common(p)
    p.set_defaults(func=cmd_release)

    p = sub.add_parser("infer", help="run the Gibbs sampler on a release")
    p.add_argument("--release", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--iters", type=int, help=f"total iterations including burn-in (default {DEFAULT_ITERS})")
    p.add_argument("--burnin", type=int, help=f"default {DEFAULT_BURNIN}")
    p.add_argument("--trace", action="store_true", help="also write burn-in iterations")
    common(p)
    p.set_defaults(func=cmd_infer)

    for name, tasks, help_ in (
        ("calibrate", ("calibration",), "calibration experiment"),
        ("utility", ("utility",), "MMD utility experiment"),
        ("trace", ("trace",), "convergence traces (burn-in included)"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--iters", type=int)
        p.add_argument("--burnin", type=int)
        p.add_argument("--jobs", type=int, default=1)
        p.set_defaults(func=lambda a, t=tasks: _experiment(a, t))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MustTruncateError as exc:
        print(f"error: {exc} (pass --bounds A B)", file=sys.stderr)
        return EXIT_MECHANISM
    except CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except (PrivexpError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

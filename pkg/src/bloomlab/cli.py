"""Command-line front end.

Exit codes: 0 every asserted invariant held, 1 an assertion failed,
2 the configuration or input document is malformed, 3 a file could not be
read or written.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import verify
from .dyadic import DomainError
from .sparse import verify_certificate_dict
from .verify import CHECKS, ConfigError, ExperimentConfig

EXIT_OK, EXIT_FAIL, EXIT_SCHEMA, EXIT_IO = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_SCHEMA, f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError(EXIT_SCHEMA, f"{path} must hold a JSON object")
    return data


def load_config(args) -> ExperimentConfig:
    try:
        data = _read_json(args.config) if args.config else {}
        config = ExperimentConfig.from_dict(data)
        return config.replace(seed=args.seed, depth=args.depth, trials=args.trials)
    except ConfigError as exc:
        raise CliError(EXIT_SCHEMA, f"config error: {exc}") from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create {out}: {exc}") from exc
    return out


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.6g}"


def run_check(name: str, args) -> int:
    config = load_config(args)
    out = _out_dir(args)
    try:
        reports = CHECKS[name](config)
    except ConfigError as exc:
        raise CliError(EXIT_SCHEMA, f"config error: {exc}") from exc
    try:
        doc = verify.write_report(out / "report.json", name, config, reports)
        verify.write_csv(out / "trials.csv", reports)
        if name == "check-domination":
            reports[0].artifacts["certificate"].save(out / "certificate.json")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write reports: {exc}") from exc
    s = doc["summary"]
    status = "PASS" if s["passed"] else "FAIL"
    if not args.quiet:
        print(f"{name}: {status} trials={s['trials']} skipped={s['skipped']} "
              f"max_ratio={_fmt(s['max_ratio'])} min_slack={_fmt(s['min_slack'])}"
              + (f" max_constant={_fmt(s['max_constant'])}" if s.get("max_constant") is not None else ""))
    if not s["passed"]:
        first = s["first_failure"]
        print(f"{name}: first failure in trial {first['trial']}: {first['message']}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def run_verify_certificate(args) -> int:
    path = args.path or args.config
    if not path:
        raise CliError(EXIT_SCHEMA, "verify-certificate needs a certificate path")
    data = _read_json(path)
    for key in ("schema", "dim", "depth", "eta", "cubes", "witness_bitsets"):
        if key not in data:
            raise CliError(EXIT_SCHEMA, f"certificate lacks the {key!r} field")
    try:
        check = verify_certificate_dict(data)
    except (KeyError, ValueError, TypeError) as exc:
        raise CliError(EXIT_SCHEMA, f"malformed certificate: {exc}") from exc
    if not args.quiet:
        print(f"verify-certificate: {'PASS' if check else 'FAIL'} cubes={len(data['cubes'])} "
              f"eta={data['eta']} constant={_fmt(data.get('constant'))} min_slack={_fmt(data.get('min_slack'))}")
    if not check:
        print(f"verify-certificate: {check.message}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def run_gen_instance(args) -> int:
    """Write one random instance (operator, symbols, inputs, weights) as JSON files."""
    config = load_config(args)
    out = _out_dir(args)
    rng = verify.trial_rng(config.seed, 0)
    try:
        T = verify.build_operator(config, rng)
        setup, _ = verify.random_bloom_setup(config, rng)
        bs = {i: verify.config_symbol(config, rng) for i in config.I}
        fs = verify.config_inputs(config, rng)
    except (ConfigError, DomainError) as exc:
        raise CliError(EXIT_SCHEMA, f"config error: {exc}") from exc
    try:
        _dump(out / "config.json", config.to_dict())
        _dump(out / "operator.json", T.to_dict())
        for j, f in enumerate(fs, start=1):
            _dump(out / f"f{j}.json", f.to_dict())
        for i, b in bs.items():
            _dump(out / f"b{i}.json", b.to_dict())
        for j, (mu, lam) in enumerate(zip(setup.mu.weights, setup.lam.weights), start=1):
            _dump(out / f"mu{j}.json", mu.to_dict())
            _dump(out / f"lambda{j}.json", lam.to_dict())
        _dump(out / "setup.json", {"p": list(setup.exponents.p_list), "I": list(setup.commuted),
                                   "mu": [f"mu{j}.json" for j in range(1, config.m + 1)],
                                   "lambda": [f"lambda{j}.json" for j in range(1, config.m + 1)]})
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write instance: {exc}") from exc
    if not args.quiet:
        print(f"gen-instance: wrote {config.m} inputs, {len(bs)} symbols and weights to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--depth", type=int, help="override the grid depth")
    common.add_argument("--trials", type=int, help="override the trial count")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress the summary line")
    parser = argparse.ArgumentParser(prog="bloomlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in CHECKS:
        sub.add_parser(name, parents=[common])
    vc = sub.add_parser("verify-certificate", parents=[common])
    vc.add_argument("path", nargs="?", help="certificate JSON (or pass --config)")
    sub.add_parser("gen-instance", parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SCHEMA if exc.code else EXIT_OK
    try:
        if args.command in CHECKS:
            return run_check(args.command, args)
        if args.command == "verify-certificate":
            return run_verify_certificate(args)
        return run_gen_instance(args)
    except CliError as exc:
        print(f"bloomlab: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``fogbridge <subcommand> [flags]``.

Exit codes: 0 all artifacts written, 1 runtime failure, 2 invalid config or
arguments, 3 missing input.
"""
from __future__ import annotations

import argparse
import os
import sys

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3


def _cap_threads():
    # must run before numpy is first imported
    n = os.environ.get("FOGBRIDGE_THREADS")
    if not n:
        return
    if not n.isdigit() or int(n) < 1:
        raise SystemExit(f"FOGBRIDGE_THREADS must be a positive integer, got {n!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = n


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fogbridge", description="Entropy-fusion RGB+lidar detector with domain adaptation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help):
        sp.add_argument("--config", help="experiment JSON (schema 1); defaults apply when omitted")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", default="out", help=out_help)

    sp = sub.add_parser("gen-data", help="render the synthetic dataset")
    common(sp, "output root; the dataset goes to <out>/data")
    sp.add_argument("--domains", help="comma-separated target domains (clear_day is always written)")

    sp = sub.add_parser("train", help="train one configuration")
    common(sp, "output root; runs go to <out>/runs/<name>")
    sp.add_argument("--mode", help="source_only | stda | mtda | oracle (overrides train.mode)")
    sp.add_argument("--domains", help="comma-separated target domains (overrides train.targets)")
    sp.add_argument("--data", help="dataset directory (default <out>/data)")
    sp.add_argument("--run", help="run name (default: the training mode)")
    sp.add_argument("--log-every", type=int, default=0)

    sp = sub.add_parser("eval", help="evaluate a trained run and write report.json / report.txt")
    common(sp, "output root")
    sp.add_argument("--mode", help="selects the run directory when --run is omitted")
    sp.add_argument("--domains", help="comma-separated domains to evaluate (default: all in the dataset)")
    sp.add_argument("--data", help="dataset directory (default <out>/data)")
    sp.add_argument("--run", help="run name (default: the training mode)")
    sp.add_argument("--allow-hash-mismatch", action="store_true",
                    help="evaluate even if the checkpoint was trained on a different dataset or config")

    sp = sub.add_parser("ablate", help="train and evaluate every row of a preset")
    common(sp, "output root; rows go to <out>/ablate/<preset>/<row>")
    sp.add_argument("--preset", required=True, help="table2 | table3 | table4")
    sp.add_argument("--data", help="dataset directory (default <out>/data)")

    for name, what in (("augment-preview", "augmented source frames"), ("pretext-preview", "pretext transforms")):
        sp = sub.add_parser(name, help=f"write {what} as PPM/PGM images")
        common(sp, f"output root; images go to <out>/{name}")
        sp.add_argument("--count", type=int, default=4)
    return p


def _split_list(s):
    return [x.strip() for x in s.split(",") if x.strip()] if s else None


def _resolve(args):
    from .experiment import ConfigError, ExperimentConfig, load_config, parse_config

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed", "must be non-negative")
        cfg = parse_config({**cfg.to_dict(), "seed": args.seed})
    if args.command == "train":
        train = {}
        if args.mode:
            train["mode"] = args.mode
            if args.mode == "source_only" and not args.domains:
                train["targets"] = []
        if args.domains:
            train["targets"] = _split_list(args.domains)
        if train:
            d = cfg.to_dict()
            d["train"] = {**d["train"], **train}
            cfg = parse_config(d)
    return cfg


def _run_dir(args, cfg, out):
    from pathlib import Path

    return Path(out) / "runs" / (args.run or args.mode or cfg.train.mode)


def _check_run_hash(run_dir, cfg, allow):
    from .experiment import ConfigError

    trained = _run_config(run_dir).config_hash
    if trained != cfg.config_hash and not allow:
        raise ConfigError("config", f"run {run_dir} was trained with config {trained}, not {cfg.config_hash}; "
                                    "pass --allow-hash-mismatch to evaluate anyway")


def _run_config(run_dir):
    import json

    from .experiment import parse_config

    path = run_dir / "config.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; train the run first")
    return parse_config(json.loads(path.read_text())["config"])


def run(argv=None) -> int:
    _cap_threads()
    args = build_parser().parse_args(argv)

    from pathlib import Path

    from . import experiment as ex
    from .trainer import TrainingDiverged

    out = Path(args.out)
    data_dir = Path(getattr(args, "data", None) or out / "data")
    try:
        cfg = _resolve(args)
        if args.command == "gen-data":
            index = ex.gen_data(cfg, data_dir, _split_list(args.domains))
            print(f"wrote {sum(c['train'] + c['test'] for c in index.to_json()['counts'].values())} frames "
                  f"to {data_dir} (dataset hash {index.config_hash})")
        elif args.command == "train":
            run_dir = _run_dir(args, cfg, out)
            tr = ex.train_run(cfg, data_dir, run_dir, log_every=args.log_every)
            print(f"trained {tr.step} steps -> {run_dir} (config hash {cfg.config_hash})")
        elif args.command == "eval":
            run_dir = _run_dir(args, cfg, out)
            if args.config or args.seed is not None:
                _check_run_hash(run_dir, cfg, args.allow_hash_mismatch)
            else:
                cfg = _run_config(run_dir)
            try:
                report = ex.eval_run(cfg, data_dir, run_dir, _split_list(args.domains), args.allow_hash_mismatch)
            except ValueError as exc:
                if "dataset" in str(exc):
                    raise ex.ConfigError("data", f"{exc}; pass --allow-hash-mismatch to evaluate anyway") from None
                raise
            print(report.table())
        elif args.command == "ablate":
            result = ex.ablate(args.preset, cfg, data_dir, out / "ablate" / args.preset)
            print(ex.comparison_table(result))
        elif args.command == "augment-preview":
            print(ex.augment_preview(cfg, out / "augment-preview", args.count))
        elif args.command == "pretext-preview":
            print(ex.pretext_preview(cfg, out / "pretext-preview", args.count))
    except ex.ConfigError as exc:
        print(f"fogbridge: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"fogbridge: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingDiverged as exc:
        print(f"fogbridge: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

"""Command-line interface.

Subcommands: train, eval-deviation, export-maps, oracle, generate.
Common flags: --config PATH, --seed N, --out DIR, --threads N (or the
SPGRU_THREADS environment variable; takes effect only if set before numpy
loads its BLAS).  Exit codes: 0 success, 1 config/usage error, 2 I/O
error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import os
import sys


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class UsageError(Exception):
    pass


def _setup_threads(argv) -> None:
    threads = None
    for i, tok in enumerate(argv):
        if tok == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif tok.startswith("--threads="):
            threads = tok.split("=", 1)[1]
    if threads is None:
        threads = os.environ.get("SPGRU_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spgru", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=False):
        sp.add_argument("--config", help="run configuration file")
        sp.add_argument("--seed", type=int, help="override the seed")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--threads", type=int, help="BLAS thread count")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, help="checkpoint file")

    sp = sub.add_parser("train", help="train a model, write checkpoint + metrics log")
    common(sp)
    sp.add_argument("--resume", help="checkpoint to resume from")

    sp = sub.add_parser("eval-deviation", help="uncertainty across deviation levels")
    common(sp, checkpoint=True)
    sp.add_argument("--suite", default="all",
                    help="angle, speed, noise, or all (default)")

    sp = sub.add_parser("export-maps", help="prediction mean/variance maps as PGM")
    common(sp, checkpoint=True)

    sp = sub.add_parser("oracle", help="verify closed forms against MC oracles")
    common(sp)
    sp.add_argument("--n", type=int, default=10**6, help="MC sample count")

    sp = sub.add_parser("generate", help="write dataset containers")
    common(sp)
    sp.add_argument("--suite", help="also write a deviation suite (angle|speed|noise)")
    sp.add_argument("--n", type=int, default=30, help="sequences per batch")
    sp.add_argument("--previews", action="store_true", help="dump PGM previews")
    return p


def _load_run_config(args):
    from .config import load_config, parse_config

    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = parse_config("")
    if args.seed is not None:
        cfg.values["train.seed"] = int(args.seed)
        cfg.values["data.seed"] = int(args.seed)
    return cfg


def _cmd_train(args) -> int:
    from .plots import save_loss_curve
    from .training import train

    cfg = _load_run_config(args)
    result = train(cfg.network_config(), cfg.trajectory_config(),
                   cfg.train_config(), args.out, resume=args.resume)
    if cfg["eval.figures"]:
        save_loss_curve(result.steps, result.losses,
                        os.path.join(args.out, "loss_curve.png"))
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    print(f"final loss: {result.final_loss:.6g}")
    return 0


def _check_checkpoint(args, cfg):
    from .checkpoint import config_fingerprint, load_checkpoint
    from .errors import ConfigError

    params, header, _ = load_checkpoint(args.checkpoint)
    net_cfg = cfg.network_config()
    expected_dim = cfg["data.frame_size"] ** 2
    if header.hidden != net_cfg.hidden or header.input_dim != expected_dim:
        raise ConfigError(
            f"checkpoint dims ({header.hidden}, {header.input_dim}) do not match "
            f"config ({net_cfg.hidden}, {expected_dim})"
        )
    if header.fingerprint != config_fingerprint(net_cfg):
        raise ConfigError("checkpoint network-config fingerprint does not match config")
    return params, net_cfg


def _cmd_eval_deviation(args) -> int:
    from .data import SUITES
    from .evaluation import evaluate_suite, write_suite_tables
    from .plots import save_deviation_figure

    cfg = _load_run_config(args)
    params, net_cfg = _check_checkpoint(args, cfg)
    suites = SUITES if args.suite == "all" else (args.suite,)
    data_cfg = cfg.trajectory_config()
    for suite in suites:
        result = evaluate_suite(params, net_cfg, data_cfg, suite,
                                cfg["eval.n_sequences"])
        files = write_suite_tables(result, args.out)
        if cfg["eval.figures"]:
            save_deviation_figure([lv.label for lv in result.levels],
                                  result.averages, suite,
                                  os.path.join(args.out, f"deviation_{suite}.png"))
        verdict = "yes" if result.monotonic else "no"
        print(f"{suite}: monotonic={verdict} "
              + " ".join(f"{lv.label}={lv.metric.average:.6g}" for lv in result.levels))
        for f in files:
            print(f"wrote {f}")
    return 0


def _cmd_export_maps(args) -> int:
    from .data import generate
    from .evaluation import export_maps
    from .plots import save_map_grid

    cfg = _load_run_config(args)
    params, net_cfg = _check_checkpoint(args, cfg)
    batch = generate(cfg.trajectory_config(), 1)
    out = export_maps(params, net_cfg, batch.flat, args.out)
    if cfg["eval.figures"]:
        save_map_grid(out["mean"], out["var"], os.path.join(args.out, "maps.png"))
    print(f"wrote {len(out['files'])} PGM maps to {args.out} "
          f"(scale {out['scale']:.6g}{', degenerate' if out['degenerate'] else ''})")
    return 0


def _cmd_oracle(args) -> int:
    from .errors import OracleFailure
    from .oracle import REPORT_HEADER, default_suite

    if args.n < 10**4:
        raise UsageError(f"--n must be >= 10000, got {args.n}")
    cfg = _load_run_config(args)
    constants = cfg.network_config().constants()
    seed = args.seed if args.seed is not None else 0
    reports = default_suite(n=args.n, seed=seed, constants=constants)
    os.makedirs(args.out, exist_ok=True)
    table = os.path.join(args.out, "oracle_report.tsv")
    with open(table, "w") as fh:
        fh.write("operation\tgrid_point\tquantity\tclosed\tmc\tmc_se\tabs_err\ttol\tpassed\n")
        for r in reports:
            fh.write(
                f"{r.operation}\t{r.grid_point}\t{r.quantity}\t{r.closed:.17g}\t"
                f"{r.mc:.17g}\t{r.mc_se:.17g}\t{r.abs_err:.17g}\t{r.tol:.17g}\t"
                f"{'yes' if r.passed else 'no'}\n"
            )
    print(REPORT_HEADER)
    failures = [r for r in reports if not r.passed]
    for r in reports:
        if not r.passed:
            print(r.row())
    print(f"{len(reports) - len(failures)}/{len(reports)} checks passed; table: {table}")
    if failures:
        raise OracleFailure(f"{len(failures)} oracle checks failed")
    return 0


def _cmd_generate(args) -> int:
    from .data import SUITES, deviation_suite, generate, save_dataset, write_pgm

    cfg = _load_run_config(args)
    data_cfg = cfg.trajectory_config()
    os.makedirs(args.out, exist_ok=True)
    written = []
    if args.suite:
        if args.suite not in SUITES:
            raise UsageError(f"--suite must be one of {SUITES}")
        levels = deviation_suite(data_cfg, args.suite, args.n)
        for lv in levels:
            path = os.path.join(args.out, f"{args.suite}_{lv.label}.dat")
            save_dataset(path, lv.batch)
            written.append((path, lv.batch))
    else:
        batch = generate(data_cfg, args.n)
        path = os.path.join(args.out, "batch.dat")
        save_dataset(path, batch)
        written.append((path, batch))
    if args.previews:
        first = written[0][1]
        for t in range(first.frames.shape[1]):
            write_pgm(os.path.join(args.out, f"preview_{t:03d}.pgm"),
                      first.frames[0, t])
    for path, batch in written:
        print(f"wrote {path} ({batch.frames.shape[0]} sequences)")
    return 0


_HANDLERS = {
    "train": _cmd_train,
    "eval-deviation": _cmd_eval_deviation,
    "export-maps": _cmd_export_maps,
    "oracle": _cmd_oracle,
    "generate": _cmd_generate,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_threads(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # map to documented exit codes
        from .errors import ConfigError, DomainError, FormatError, OracleFailure, ShapeError

        if isinstance(e, (ConfigError, DomainError, ShapeError)):
            print(f"config error: {e}", file=sys.stderr)
            return 1
        if isinstance(e, (OSError, FormatError)):
            print(f"i/o error: {e}", file=sys.stderr)
            return 2
        if isinstance(e, OracleFailure):
            print(f"verification failure: {e}", file=sys.stderr)
            return 3
        raise


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``vqib {train,verify-bounds,compare,eval}``.

Exit codes: 0 ok, 2 config/usage error, 3 training divergence, 4 bound violation.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from .config import RunConfig, build_config, parse_overrides
from .data import DatasetFormatError, load_csv
from .ib_oracle import bound_sweep
from .model import (
    METRIC_FIELDS,
    ConfigError,
    TrainingDiverged,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .textio import format_float

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_BOUND = 0, 2, 3, 4


def _fmt(v) -> str:
    return format_float(v) if isinstance(v, float) else str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _metric_rows(trace, log_every: int, prefix=()):
    for rec in trace.records:
        if rec.step % log_every == 0:
            yield (*prefix, *(getattr(rec, f) for f in METRIC_FIELDS))


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _err(msg: str) -> None:
    print(f"vqib: {msg}", file=sys.stderr)


def cmd_train(config_file: str | None, overrides: dict[str, str]) -> int:
    try:
        cfg = build_config(config_file, overrides)
        dataset = cfg.dataset()
        out = _out_dir(cfg)
    except (ConfigError, DatasetFormatError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    (out / "config_echo.txt").write_text(cfg.echo(), encoding="utf-8")
    try:
        result = train(cfg.train_config(), dataset)
    except TrainingDiverged as exc:
        _write_csv(out / "metrics.csv", METRIC_FIELDS, _metric_rows(exc.trace, cfg.log_every))
        _err(f"training diverged: {exc}")
        return EXIT_DIVERGED
    _write_csv(out / "metrics.csv", METRIC_FIELDS, _metric_rows(result.trace, cfg.log_every))
    save_checkpoint(out / "checkpoint.txt", result)
    return EXIT_OK


def cmd_verify_bounds(n_instances: int, seed: int, out_dir: str = ".", inject_violation: bool = False) -> int:
    if n_instances < 1:
        _err("--n must be >= 1")
        return EXIT_CONFIG
    rows = bound_sweep(n_instances, seed)
    if inject_violation:
        rows[0] = type(rows[0])(rows[0].instance_seed, rows[0].bound_name, -1.0)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows.sort(key=lambda r: r.instance_seed)
    _write_csv(out / "bounds.csv", ("instance_seed", "bound_name", "gap"),
               ((r.instance_seed, r.bound_name, r.gap) for r in rows))
    bad = [r for r in rows if not r.ok]
    print(f"# gaps in nats; {len(rows)} checks over {n_instances} instances, {len(bad)} violations")
    for r in bad[:10]:
        print(f"violation: instance {r.instance_seed} {r.bound_name} gap={r.gap!r}")
    return EXIT_BOUND if bad else EXIT_OK


COMPARE_HEADER = ("mode", *METRIC_FIELDS, "hard_perplexity")


def cmd_compare(config_file: str | None, overrides: dict[str, str], modes=("hard_vqvae", "soft_em")) -> int:
    if len(modes) != 2 or len(set(modes)) != 2 or not set(modes) <= {"hard_vqvae", "soft_em"}:
        _err(f"compare needs hard_vqvae and soft_em once each, got {','.join(modes)}")
        return EXIT_CONFIG
    try:
        cfg = build_config(config_file, overrides)
        dataset = cfg.dataset()
        out = _out_dir(cfg)
    except (ConfigError, DatasetFormatError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    (out / "config_echo.txt").write_text(cfg.echo(), encoding="utf-8")

    hard_kind = cfg.regularizer_kind if cfg.regularizer_kind == "vdib_cross_entropy" else "none"
    kinds = {"hard_vqvae": hard_kind, "soft_em": "vib_kl"}
    rows, finals = [], {}
    for mode in modes:
        try:
            result = train(cfg.train_config(mode=mode, regularizer_kind=kinds[mode]), dataset)
        except TrainingDiverged as exc:
            _err(f"{mode} training diverged: {exc}")
            return EXIT_DIVERGED
        rows += [(*r, "") for r in _metric_rows(result.trace, cfg.log_every, (mode,))]
        ev = evaluate(result.encoder, result.codebook, result.decoder, mode, dataset.rows)
        finals[mode] = ev
        rows.append((mode, "final", ev.recon, "", "", "", "", ev.perplexity, ev.cond_entropy, ev.hard_perplexity))
    _write_csv(out / "compare.csv", COMPARE_HEADER, rows)
    summary = "summary: " + "; ".join(
        f"{m} perplexity={finals[m].perplexity:.6f} cond_entropy={finals[m].cond_entropy:.6f} "
        f"recon={finals[m].recon:.6f}" for m in modes
    )
    (out / "compare_summary.txt").write_text(summary + "\n", encoding="utf-8")
    print(summary)
    return EXIT_OK


def cmd_eval(checkpoint: str, data: str | None, config_file: str | None, overrides: dict[str, str]) -> int:
    try:
        enc, cb, dec, echo = load_checkpoint(checkpoint)
        if data:
            dataset = load_csv(data)
        else:
            dataset = build_config(config_file, overrides).dataset()
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if dataset.dim != enc.widths[0]:
        _err(f"dataset has dim {dataset.dim}, checkpoint encoder expects {enc.widths[0]}")
        return EXIT_CONFIG
    ev = evaluate(enc, cb, dec, echo.get("mode", "hard_vqvae"), dataset.rows)
    print("recon,perplexity,cond_entropy,hard_perplexity")
    print(",".join(_fmt(v) for v in asdict(ev).values()))
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vqib", description="VQ autoencoders with information-bottleneck losses")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model; extra --key value pairs override the config")
    t.add_argument("--config")

    v = sub.add_parser("verify-bounds", help="randomized sweep of the variational bounds")
    v.add_argument("--n", type=int, default=1000)
    v.add_argument("--seed", type=int, default=1)
    v.add_argument("--out", default=".")
    v.add_argument("--inject-violation", action="store_true", help=argparse.SUPPRESS)

    c = sub.add_parser("compare", help="train hard and soft/EM models on the same data")
    c.add_argument("--config")
    c.add_argument("--modes", default="hard_vqvae,soft_em")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--config")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "verify-bounds":
            if rest:
                raise ConfigError(f"unexpected arguments: {' '.join(rest)}")
            return cmd_verify_bounds(args.n, args.seed, args.out, args.inject_violation)
        overrides = parse_overrides(rest)
        if "out" in overrides:
            overrides["out_dir"] = overrides.pop("out")
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if args.command == "train":
        return cmd_train(args.config, overrides)
    if args.command == "compare":
        return cmd_compare(args.config, overrides, tuple(m.strip() for m in args.modes.split(",")))
    return cmd_eval(args.checkpoint, args.data, args.config, overrides)


if __name__ == "__main__":
    sys.exit(main())

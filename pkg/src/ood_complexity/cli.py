"""Command-line entry point: ``ood-complexity <command> [options]``.

Every command writes its outputs plus a ``run_manifest.json`` into ``--out-dir``.
Options may also come from a TOML file given with ``--config``: top-level keys
apply to every command, a ``[<command>]`` table to that command only, and
explicit flags always win.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .codecs import BUILTIN, complexity_many, load_external_codecs, resolve_codec
from .data import (POOL_FACTORS, Dataset, NllRecord, avg_pool_upsample, read_nll_file,
                   synth_constant, synth_noise, write_nll_file)
from .density import ContextModel, fit, load_model, merge, nll_bpd_many, save_model
from .errors import ConfigError, OODError, ParseError, ValidationError
from .evaluation import (EvalReport, auroc, correlation_study, mean_loglik, pearson,
                         pooling_sweep, two_tail_score, write_histogram_csv,
                         write_pooling_csv, write_scatter_csv)
from .imageio import load_manifest, read_manifest, save_dataset
from .score import (Decision, ScoreRecord, apply_threshold, decide_sign, fpr_threshold,
                    null_threshold, rank_topk)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("ood_complexity")

SCORE_HEADER = ["id", "nll_bpd", "complexity_bpd", "s", "decision"]
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_run_manifest(args: argparse.Namespace, inputs: Sequence[Path], outputs: Sequence[Path]) -> Path:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
              if k not in ("func",)}
    manifest = {
        "tool": "ood-complexity",
        "tool_version": __version__,
        "command": args.command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs if p.is_file()},
        "outputs": {str(p): _sha256(p) for p in outputs if p.is_file()},
        "created_at": datetime.now(timezone.utc).isoformat(),
        "nondeterministic_fields": ["created_at"],
    }
    path = Path(args.out_dir) / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _codec_list(text: str | Sequence[str]) -> list[str]:
    names = [c.strip() for c in text.split(",")] if isinstance(text, str) else list(text)
    names = [c for c in names if c]
    if not names:
        raise UsageError("at least one codec is required")
    externals = load_external_codecs()
    for c in names:
        resolve_codec(c, externals)
    return names


def _load_dataset(manifest: str) -> Dataset:
    rows = read_manifest(manifest)
    missing = [str(p) for _, p in rows if not p.is_file()]
    if missing:
        raise FileNotFoundError("missing image files:\n  " + "\n  ".join(missing))
    return load_manifest(manifest)


def read_score_file(path: str | Path) -> list[ScoreRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "nll_bpd", "complexity_bpd", "s"} <= set(reader.fieldnames):
            raise ParseError(f"{path}: expected columns {','.join(SCORE_HEADER)}", line=1)
        for row in reader:
            try:
                dec = Decision(row["decision"]) if row.get("decision") else None
                records.append(ScoreRecord(row["id"], float(row["nll_bpd"]),
                                           float(row["complexity_bpd"]), float(row["s"]), dec))
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", line=reader.line_num) from None
    return records


def write_score_file(path: Path, records: Sequence[ScoreRecord]) -> Path:
    return _write_rows(path, SCORE_HEADER, (
        [r.id, r.nll_bpd, r.complexity_bpd, r.s, r.decision.value if r.decision else ""]
        for r in records))


def read_complexity_file(path: str | Path, column: str) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in reader.fieldnames:
            raise ParseError(f"{path}: missing 'id' column", line=1)
        if column not in reader.fieldnames:
            raise ConfigError(f"{path}: no column {column!r}; available: {reader.fieldnames[1:]}")
        out: dict[str, float] = {}
        for row in reader:
            if row["id"] in out:
                raise ValidationError(f"{path}: duplicate id {row['id']!r}")
            try:
                out[row["id"]] = float(row[column])
            except ValueError:
                raise ParseError(f"{path}: bad number {row[column]!r}", line=reader.line_num) from None
    return out


# ---------------------------------------------------------------- commands


def _require(args, *names: str) -> None:
    missing = ["--" + n.replace("_", "-") for n in names if getattr(args, n) in (None, [])]
    if missing:
        raise UsageError(f"{args.command} needs {', '.join(missing)}")


def cmd_synth(args) -> list[Path]:
    if args.n is None:
        raise UsageError("synth needs -n")
    if args.n < 1:
        raise UsageError(f"-n must be >= 1, got {args.n}")
    make = synth_noise if args.kind == "noise" else synth_constant
    name = args.kind if args.pool == 1 else f"{args.kind}-pool{args.pool}"
    ds = make(args.n, args.seed, name=name)
    if args.pool != 1:
        ds = ds.map(lambda im: avg_pool_upsample(im, args.pool))
    manifest = save_dataset(ds, args.out_dir)
    return [manifest]


def cmd_complexity(args) -> list[Path]:
    codecs = _codec_list(args.codecs)
    ds = _load_dataset(args.manifest)
    cols = {c: complexity_many(ds.images, c, args.workers) for c in codecs}
    rows = []
    for i, rid in enumerate(ds.ids):
        vals = [cols[c][i] for c in codecs]
        rows.append([rid, *vals, min(vals)])
    out = Path(args.out or Path(args.out_dir) / "complexity.csv")
    return [_write_rows(out, ["id", *(f"bpd_{c}" for c in codecs), "min_bpd"], rows)]


def cmd_fit(args) -> list[Path]:
    ds = _load_dataset(args.manifest)
    model = fit(ds, args.order, args.alpha, workers=args.workers)
    if args.resume:
        prior = load_model(args.resume)
        if (prior.k, prior.alpha) != (model.k, model.alpha):
            raise ConfigError(
                f"resume model has (k={prior.k}, alpha={prior.alpha}); requested (k={model.k}, alpha={model.alpha})")
        model = merge(prior, model)
    out = Path(args.model_out or Path(args.out_dir) / "model.oodm")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    return [out]


def cmd_nll(args) -> list[Path]:
    if args.untrained:
        model = ContextModel.empty(args.order, args.alpha)
    elif args.model:
        model = load_model(args.model)
    else:
        raise UsageError("nll needs --model or --untrained")
    ds = _load_dataset(args.manifest)
    nll = nll_bpd_many(model, ds)
    out = Path(args.out or Path(args.out_dir) / "nll.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_nll_file(out, [NllRecord(i, float(v)) for i, v in zip(ds.ids, nll)])
    return [out]


def join_scores(nll: Sequence[NllRecord], comp: dict[str, float]) -> list[ScoreRecord]:
    nll_ids = [r.id for r in nll]
    diff = sorted(set(nll_ids) ^ set(comp))
    if diff:
        shown = ", ".join(diff[:10]) + (f", ... ({len(diff)} in total)" if len(diff) > 10 else "")
        raise ValidationError("ids differ between NLL and complexity inputs: " + shown)
    return [ScoreRecord.build(r.id, r.nll_bpd, comp[r.id]) for r in nll]


def cmd_score(args) -> list[Path]:
    _require(args, "nll", "complexity")
    column = "min_bpd" if args.codec == "min" else f"bpd_{args.codec}"
    records = join_scores(read_nll_file(args.nll), read_complexity_file(args.complexity, column))
    strategy = args.strategy
    if strategy == "sign":
        records = [ScoreRecord(r.id, r.nll_bpd, r.complexity_bpd, r.s, decide_sign(r.s).decision)
                   for r in records]
    elif strategy == "rank":
        if args.k is None:
            raise UsageError("--strategy rank needs --k")
        top = set(rank_topk(records, args.k))
        records = [ScoreRecord(r.id, r.nll_bpd, r.complexity_bpd, r.s,
                               Decision.OOD if r.id in top else Decision.IN_DISTRIBUTION)
                   for r in records]
        records.sort(key=lambda r: (-r.s, r.id))
    elif strategy == "quantile":
        if not args.train_scores:
            raise UsageError("--strategy quantile needs --train-scores")
        t = null_threshold([r.s for r in read_score_file(args.train_scores)], args.quantile)
        log.info("null-distribution threshold at q=%s: %r", args.quantile, t)
        records = apply_threshold(records, t)
    elif strategy == "fpr":
        if not (args.train_scores and args.ood_scores):
            raise UsageError("--strategy fpr needs --train-scores and --ood-scores")
        res = fpr_threshold([r.s for r in read_score_file(args.train_scores)],
                            [r.s for r in read_score_file(args.ood_scores)], args.target_fpr)
        log.info("threshold %r: achieved FPR %.4f, TPR %.4f", res.threshold, res.achieved_fpr, res.achieved_tpr)
        records = apply_threshold(records, res.threshold)
    out = Path(args.out or Path(args.out_dir) / "scores.csv")
    return [write_score_file(out, records)]


def auroc_row(in_recs: Sequence[ScoreRecord], ood_recs: Sequence[ScoreRecord],
               mean_train_loglik: float) -> dict[str, float]:
    """AUROC of -loglik, L, T and S with in-distribution as negatives."""
    def col(get):
        return auroc(pos=[get(r) for r in ood_recs], neg=[get(r) for r in in_recs])

    return {
        "auroc_nll": col(lambda r: r.nll_bpd),
        "auroc_L": col(lambda r: r.complexity_bpd),
        "auroc_T": col(lambda r: two_tail_score(r.nll_bpd, mean_train_loglik)),
        "auroc_S": col(lambda r: r.s),
    }


def cmd_eval(args) -> list[Path]:
    _require(args, "in_scores", "ood_scores")
    in_recs = read_score_file(args.in_scores)
    if not in_recs:
        raise ValidationError(f"{args.in_scores}: no rows")
    if args.train_nll:
        mean_ll = mean_loglik(read_nll_file(args.train_nll))
    else:
        mean_ll = mean_loglik([r.nll_bpd for r in in_recs])
    out = Path(args.out_dir)
    report = EvalReport()
    report.mean_nll_by_dataset[Path(args.in_scores).stem] = mean_loglik([r.nll_bpd for r in in_recs])
    written: list[Path] = []
    rows = []
    pooled = list(in_recs)
    for spec in args.ood_scores:
        name, _, path = spec.rpartition("=") if "=" in spec else (Path(spec).stem, "", spec)
        ood = read_score_file(path)
        if not ood:
            raise ValidationError(f"{path}: no rows")
        pooled.extend(ood)
        cols = auroc_row(in_recs, ood, mean_ll)
        report.auroc_by_dataset[name] = cols
        report.t_baseline_auroc[name] = cols["auroc_T"]
        report.mean_nll_by_dataset[name] = mean_loglik([r.nll_bpd for r in ood])
        rows.append([name, cols["auroc_nll"], cols["auroc_L"], cols["auroc_T"], cols["auroc_S"]])
        for field in ("s", "nll_bpd"):
            written.append(write_histogram_csv(out / f"hist_{name}_{field}.csv", [getattr(r, field) for r in ood]))
    for field in ("s", "nll_bpd"):
        written.append(write_histogram_csv(out / f"hist_in_{field}.csv", [getattr(r, field) for r in in_recs]))
    try:
        report.pearson_by_codec[args.codec_label] = pearson(
            [r.complexity_bpd for r in pooled], [-r.nll_bpd for r in pooled])
    except OODError as exc:
        log.warning("correlation skipped: %s", exc)
    written.append(_write_rows(out / "auroc_table.csv", ["dataset", "auroc_nll", "auroc_L", "auroc_T", "auroc_S"], rows))
    written.extend(report.write(out))
    return written


def cmd_pooling(args) -> list[Path]:
    codecs = _codec_list(args.codecs)
    ds = _load_dataset(args.manifest)
    model = load_model(args.model) if args.model else ContextModel.empty(args.order, args.alpha)
    rows = pooling_sweep(ds, model, codecs, POOL_FACTORS, workers=args.workers)
    out = Path(args.out or Path(args.out_dir) / "pooling.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    return [write_pooling_csv(out, rows)]


def cmd_correlation(args) -> list[Path]:
    _require(args, "model")
    model = load_model(args.model)
    datasets = [_load_dataset(m) for m in args.manifests]
    r, points = correlation_study(datasets, model, args.codec, workers=args.workers)
    out = Path(args.out_dir)
    scatter = write_scatter_csv(out / "scatter.csv", points)
    summary = out / "correlation.json"
    summary.write_text(json.dumps({"codec": args.codec, "pearson_r": r, "n": len(points)}, indent=2) + "\n")
    print(f"pearson r = {r:.4f} over {len(points)} samples")
    return [scatter, summary]


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file of option defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--out-dir", default=".")
    common.add_argument("-v", "--verbose", action="store_true")

    model_opts = argparse.ArgumentParser(add_help=False)
    model_opts.add_argument("--order", "-k", type=int, default=2)
    model_opts.add_argument("--alpha", type=float, default=1.0)

    p = argparse.ArgumentParser(prog="ood-complexity", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate Noise or Constant images")
    s.add_argument("kind", choices=["noise", "constant"])
    s.add_argument("-n", type=int, help="number of images (required, may come from --config)")
    s.add_argument("--pool", type=int, default=1, choices=POOL_FACTORS,
                   help="average-pool and upsample each image by this factor")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("complexity", parents=[common], help="per-image compressed length (bits/dim)")
    s.add_argument("manifest")
    s.add_argument("--codecs", default=",".join(BUILTIN))
    s.add_argument("--out")
    s.set_defaults(func=cmd_complexity)

    s = sub.add_parser("fit", parents=[common, model_opts], help="fit the context model")
    s.add_argument("manifest")
    s.add_argument("--model-out")
    s.add_argument("--resume", help="existing model to add counts to")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("nll", parents=[common, model_opts], help="negative log-likelihood per image")
    s.add_argument("manifest")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--model")
    g.add_argument("--untrained", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_nll)

    s = sub.add_parser("score", parents=[common], help="join NLL and complexity into S")
    s.add_argument("--nll")
    s.add_argument("--complexity")
    s.add_argument("--codec", default="min", help="codec column to use, or 'min' for the best codec")
    s.add_argument("--strategy", choices=["none", "rank", "sign", "quantile", "fpr"], default="none")
    s.add_argument("--k", type=int)
    s.add_argument("--quantile", type=float, default=0.95)
    s.add_argument("--target-fpr", type=float, default=0.05)
    s.add_argument("--train-scores", help="score CSV of the training set")
    s.add_argument("--ood-scores", help="score CSV of known OOD data (fpr strategy)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("eval", parents=[common], help="AUROC of -loglik, L, T and S")
    s.add_argument("--in-scores")
    s.add_argument("--ood-scores", action="append", metavar="[NAME=]CSV")
    s.add_argument("--train-nll", help="NLL CSV of the training set (centre of T)")
    s.add_argument("--codec-label", default="L")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pooling", parents=[common, model_opts], help="pooling-factor sweep")
    s.add_argument("manifest")
    s.add_argument("--model")
    s.add_argument("--codecs", default=",".join(BUILTIN))
    s.add_argument("--out")
    s.set_defaults(func=cmd_pooling)

    s = sub.add_parser("correlation", parents=[common], help="pooled complexity/log-likelihood correlation")
    s.add_argument("manifests", nargs="+")
    s.add_argument("--model")
    s.add_argument("--codec", default="png_like")
    s.set_defaults(func=cmd_correlation)
    return p


def _config_defaults(path: str, command: str) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    flat = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)}
    section = cfg.get(command, {})
    if isinstance(section, dict):
        flat.update({k.replace("-", "_"): v for k, v in section.items()})
    return flat


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]  # type: ignore[union-attr]
        try:
            defaults = _config_defaults(args.config, args.command)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(defaults) - known)
        if unknown:
            print(f"error: unknown config keys for {args.command}: {', '.join(unknown)}", file=sys.stderr)
            return EXIT_USAGE
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    try:
        outputs = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OODError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    inputs = [Path(v) for k, v in vars(args).items()
              if k in ("manifest", "nll", "complexity", "train_scores", "ood_scores", "in_scores",
                       "model", "resume", "train_nll", "config") and isinstance(v, str)]
    for extra in ("ood_scores", "manifests"):
        v = getattr(args, extra, None)
        if isinstance(v, list):
            inputs.extend(Path(x.rpartition("=")[2]) for x in v)
    _write_run_manifest(args, inputs, outputs)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())

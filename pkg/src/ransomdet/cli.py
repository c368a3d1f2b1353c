"""Command-line interface.

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .dataset import (
    Dataset,
    class_balance,
    default_schema,
    format_real,
    load_csv,
    load_schema,
    load_unlabeled_csv,
    synth_generate,
    validate,
)
from .errors import ConfigInvalid, RansomdetError
from .metrics import pearson_corr_matrix
from .pe import parse_pe, to_feature_vector
from .pipeline import (
    KINDS,
    ExperimentConfig,
    HeuristicModel,
    evaluate_model,
    read_model,
    repeated_seeds,
    run_experiment,
    write_evaluation,
)
from .plots import confusion_svg, heatmap_svg, pr_curve_svg

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _positive(value: str) -> int:
    v = value.strip().lower()
    if v in ("0", "malware"):
        return 0
    if v in ("1", "legitimate", "benign"):
        return 1
    raise argparse.ArgumentTypeError("positive class must be 0/malware or 1/legitimate")


def _existing(path, what):
    if path is None:
        raise UsageError(f"{what} is required")
    if not Path(path).exists():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _schema(args):
    return load_schema(_existing(args.schema, "--schema")) if args.schema else default_schema()


def _emit(text: str, out=None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def cmd_ingest(args) -> int:
    ds = load_csv(_existing(args.data, "--data"), _schema(args))
    report = validate(ds, reference=args.reference)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["field", "value"])
        for k, v in report.to_dict().items():
            w.writerow([k, json.dumps(v) if isinstance(v, (dict, list)) else v])
        _emit(buf.getvalue(), args.out)
    else:
        _emit(report.to_text(), args.out)
    return EXIT_OK


def cmd_stats(args) -> int:
    ds = load_csv(_existing(args.data, "--data"), _schema(args))
    corr = pearson_corr_matrix(ds)
    c0, c1 = class_balance(ds)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "correlation.csv").write_text(corr.to_csv(), encoding="utf-8")
        (out / "correlation.svg").write_text(heatmap_svg(corr), encoding="utf-8")
        (out / "class_balance.csv").write_text(
            f"label,name,count\n0,malware,{c0}\n1,legitimate,{c1}\n", encoding="utf-8"
        )
    if args.format == "csv":
        sys.stdout.write(corr.to_csv())
    elif args.format == "svg":
        sys.stdout.write(heatmap_svg(corr))
    else:
        total = max(len(ds), 1)
        print(f"rows: {len(ds)}")
        print(f"malware (0): {c0} ({100 * c0 / total:.2f}%)")
        print(f"legitimate (1): {c1} ({100 * c1 / total:.2f}%)")
        if corr.constant:
            print("constant columns: " + ", ".join(corr.constant))
        pairs = []
        n = len(corr.names)
        for i in range(n):
            for j in range(i + 1, n):
                pairs.append((abs(corr.values[i, j]), corr.names[i], corr.names[j], corr.values[i, j]))
        pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
        print("strongest correlations:")
        for _, a, b, v in pairs[:10]:
            print(f"  {a} ~ {b}: {v:+.3f}")
    return EXIT_OK


def _train_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_toml(_existing(args.config, "--config"))
    else:
        if not args.data:
            raise UsageError("either --config or --data is required")
        cfg = ExperimentConfig(data=Path(args.data), model=args.kind or "forest")
    if args.data and args.config:
        cfg.data = Path(args.data)
    _existing(cfg.data, "dataset")
    if args.schema:
        cfg.schema = Path(args.schema)
    if cfg.schema is not None:
        _existing(cfg.schema, "schema")
    if args.kind:
        cfg.model = args.kind
    if args.seed is not None:
        cfg.seed = args.seed
    if args.split is not None:
        if not 0 < args.split < 1:
            raise UsageError("--split must lie in (0, 1)")
        cfg.train_fraction = args.split
    if args.no_stratify:
        cfg.stratified = False
    if args.positive_class is not None:
        cfg.positive = args.positive_class
    if args.out:
        cfg.out = Path(args.out)
    elif cfg.out is None:
        cfg.out = Path("runs") / cfg.model
    for item in args.param or []:
        if "=" not in item:
            raise UsageError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg.params[k.strip()] = _parse_value(v.strip())
    if args.timestamp:
        cfg.record_timestamp = True
    if args.jobs:
        cfg.n_jobs = args.jobs
    return cfg


def cmd_train(args) -> int:
    cfg = _train_config(args)
    if args.repeat and args.repeat > 1:
        seeds = [cfg.seed + i for i in range(args.repeat)]
        summary = repeated_seeds(cfg, seeds)
        sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        return EXIT_OK
    result = run_experiment(cfg, log=lambda m: print(m, file=sys.stderr))
    print(f"training time: {result.train_seconds:.2f}s ({_backend.name()} kernels)", file=sys.stderr)
    if args.format == "csv":
        sys.stdout.write(result.report.to_csv())
    else:
        sys.stdout.write(result.report.to_text())
    return EXIT_OK


def _load_eval_data(args, mf) -> Dataset:
    schema = load_schema(args.schema) if args.schema else mf.schema
    return load_csv(_existing(args.data, "--data"), schema)


def cmd_evaluate(args) -> int:
    mf = read_model(_existing(args.model, "--model"))
    ds = _load_eval_data(args, mf)
    positive = args.positive_class if args.positive_class is not None else 0
    ev = evaluate_model(mf.model, ds, positive)
    if args.out:
        write_evaluation(ev, Path(args.out), f"({mf.kind})")
    if args.format == "csv":
        sys.stdout.write(ev.report.to_csv())
    elif args.format == "svg":
        sys.stdout.write(pr_curve_svg(ev.curve) if ev.curve.points else confusion_svg(ev.report.confusion))
    else:
        sys.stdout.write(ev.report.to_text())
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.out:
        raise UsageError("report needs --out")
    mf = read_model(_existing(args.model, "--model"))
    ds = _load_eval_data(args, mf)
    positive = args.positive_class if args.positive_class is not None else 0
    ev = evaluate_model(mf.model, ds, positive)
    for p in write_evaluation(ev, Path(args.out), f"({mf.kind})"):
        print(p)
    return EXIT_OK


def cmd_predict(args) -> int:
    mf = read_model(_existing(args.model, "--model"))
    schema = load_schema(args.schema) if args.schema else mf.schema
    X, ids, _ = load_unlabeled_csv(_existing(args.data, "--data"), schema)
    labels = mf.predict(X)
    scores = mf.predict_proba(X)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "id", "label", "label_name", "score_legitimate"])
    for i, (sid, lab, s) in enumerate(zip(ids, labels, scores), start=1):
        w.writerow([i, sid, int(lab), "legitimate" if lab == 1 else "malware", repr(float(s))])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def _scan_targets(paths) -> list[Path]:
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(q for q in p.rglob("*") if q.is_file()))
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"no such file or directory: {p}")
    return sorted(set(files), key=lambda q: str(q))


def _scan_one(path: Path, schema):
    data = path.read_bytes()
    md5 = hashlib.md5(data).hexdigest()
    try:
        summary = parse_pe(data)
    except RansomdetError as exc:
        return path, md5, None, f"{type(exc).__name__}: {exc}"
    return path, md5, to_feature_vector(summary, schema).features, None


def cmd_scan(args) -> int:
    if args.model == "heuristic":
        schema = load_schema(args.schema) if args.schema else default_schema()
        model = HeuristicModel(schema)
        kind = "heuristic"
    else:
        mf = read_model(_existing(args.model, "--model"))
        schema, model, kind = mf.schema, mf.model, mf.kind
    targets = _scan_targets(args.paths)
    if not targets:
        raise UsageError("nothing to scan")
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        rows = list(pool.map(lambda p: _scan_one(p, schema), targets))

    ok = [r for r in rows if r[2] is not None]
    preds = {}
    if ok:
        X = np.array([r[2] for r in ok], dtype=np.float64)
        for r, lab, s in zip(ok, model.predict(X), model.predict_proba(X)):
            preds[r[0]] = (int(lab), float(s))

    vbuf = io.StringIO()
    vw = csv.writer(vbuf, lineterminator="\n")
    vw.writerow(["path", "md5", "status", "label", "label_name", "score_legitimate", "model", "error"])
    fbuf = io.StringIO()
    fw = csv.writer(fbuf, lineterminator="\n")
    fw.writerow(schema.names)
    for path, md5, feats, err in rows:
        if feats is None:
            vw.writerow([str(path), md5, "error", "", "", "", kind, err])
            continue
        lab, s = preds[path]
        vw.writerow([str(path), md5, "ok", lab, "legitimate" if lab else "malware", repr(s), kind, ""])
        fmap = dict(zip(schema.feature_names, feats))
        out_row = []
        for name, ckind in schema.columns:
            if ckind == "numeric":
                out_row.append(format_real(fmap[name]))
            elif ckind == "label":
                out_row.append(lab)
            elif "hash" in name.lower() or "md5" in name.lower():
                out_row.append(md5)
            else:
                out_row.append(path.name)
        fw.writerow(out_row)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verdicts.csv").write_text(vbuf.getvalue(), encoding="utf-8")
        (out / "features.csv").write_text(fbuf.getvalue(), encoding="utf-8")
    sys.stdout.write(vbuf.getvalue())
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    ds = synth_generate(args.n, args.seed if args.seed is not None else 0, label_noise=args.noise)
    _emit(ds.to_csv(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ransomdet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--backend", choices=["cython", "python"], help="force a kernel backend")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, schema=True, out=True, fmt=("text", "csv")):
        if data:
            p.add_argument("--data", help="dataset CSV")
        if schema:
            p.add_argument("--schema", help="schema TOML (default: bundled Kaggle layout)")
        if out:
            p.add_argument("--out", help="output file or directory")
        if fmt:
            p.add_argument("--format", choices=fmt, default="text")

    p = sub.add_parser("ingest", help="load and validate a dataset")
    common(p)
    p.add_argument("--reference", action="store_true",
                   help="compare row/class counts with the published Kaggle revision")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="class balance and feature correlation")
    common(p, fmt=("text", "csv", "svg"))
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="split, train, evaluate and save a model")
    common(p)
    p.add_argument("--config", help="experiment TOML")
    p.add_argument("--kind", choices=KINDS, help="model kind (overrides config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--split", type=float, help="train fraction (default 0.8)")
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--positive-class", type=_positive)
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="model parameter override")
    p.add_argument("--repeat", type=int, default=1, help="repeat over consecutive seeds and summarise")
    p.add_argument("--jobs", type=int, default=0, help="forest worker threads")
    p.add_argument("--timestamp", action="store_true", help="record wall-clock time in the model file")
    p.set_defaults(func=cmd_train)

    for name, func, fmts, help_ in (
        ("evaluate", cmd_evaluate, ("text", "csv", "svg"), "score a saved model on labelled data"),
        ("report", cmd_report, None, "write every evaluation artifact to --out"),
    ):
        p = sub.add_parser(name, help=help_)
        common(p, fmt=fmts)
        p.add_argument("--model", help="model file")
        p.add_argument("--positive-class", type=_positive)
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="label rows of a CSV (label column optional)")
    common(p, fmt=None)
    p.add_argument("--model", help="model file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("scan", help="extract PE header features from binaries and classify them")
    p.add_argument("paths", nargs="+", help="files or directories")
    p.add_argument("--model", default="heuristic", help="model file, or 'heuristic' for the rule baseline")
    p.add_argument("--schema", help="schema TOML for the heuristic")
    p.add_argument("--out", help="directory for verdicts.csv and features.csv")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("synth", help="generate a separable synthetic dataset from the header patterns")
    p.add_argument("--n", type=int, default=500, help="rows per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0, help="fraction of labels to flip")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.backend:
        try:
            _backend.set_backend(args.backend)
        except ValueError as exc:
            parser.error(str(exc))
    started = time.perf_counter()
    try:
        code = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ransomdet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigInvalid as exc:
        print(f"ransomdet {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RansomdetError, OSError) as exc:
        print(f"ransomdet {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if os.environ.get("RANSOMDET_TIMING"):
        print(f"[{args.command} took {time.perf_counter() - started:.2f}s]", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

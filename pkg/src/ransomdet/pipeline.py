"""Experiment orchestration and model persistence.

A run is: load -> validate -> split -> train -> evaluate on the held-out
rows -> persist. Model files are canonical JSON wrapped with a format
version and a SHA-256 checksum of the payload; floats are written with
``repr`` so they round-trip exactly.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import forest, gbdt
from .dataset import (
    Dataset,
    FeatureSchema,
    SplitSpec,
    default_schema,
    load_csv,
    load_schema,
    stratified_split,
    validate,
)
from .errors import ConfigInvalid, CorruptModelFile, DatasetError, UnmappedColumn, UnsupportedVersion
from .metrics import MetricsReport, PrCurve, evaluate, pr_curve
from .pe import DEFAULT_IAT_THRESHOLD, RULES, field_for_column
from .tree import GrowParams

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

FORMAT_NAME = "ransomdet-model"
FORMAT_VERSION = 1
KINDS = ("gbdt", "forest", "heuristic")


class HeuristicModel:
    """Header rules as a model: malware if any malware pattern fires."""

    kind = "heuristic"

    def __init__(self, schema: FeatureSchema, iat_threshold: float = DEFAULT_IAT_THRESHOLD):
        self.schema = schema
        self.iat_threshold = float(iat_threshold)
        cols = {}
        for i, name in enumerate(schema.feature_names):
            try:
                cols.setdefault(field_for_column(name), i)
            except UnmappedColumn:
                continue
        needed = ("major_image_version", "export_size", "debug_size", "iat_rva", "resource_size")
        missing = [f for f in needed if f not in cols]
        if missing:
            raise ConfigInvalid(f"heuristic needs columns for {missing}")
        self._cols = cols
        self.n_features = schema.n_features

    def fired(self, X) -> np.ndarray:
        """(n_samples, n_rules) boolean matrix in ``RULES`` order."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        c = self._cols
        iat = X[:, c["iat_rva"]]
        return np.column_stack([
            X[:, c["major_image_version"]] == 0,
            (X[:, c["export_size"]] == 0) & (X[:, c["debug_size"]] == 0),
            iat == 0,
            iat > self.iat_threshold,
            X[:, c["resource_size"]] == 0,
        ])

    def predict(self, X) -> np.ndarray:
        return np.where(self.fired(X).any(axis=1), 0, 1).astype(np.int8)

    def predict_proba(self, X) -> np.ndarray:
        # at most 4 rules can fire together (the two IAT rules exclude each other)
        return 1.0 - self.fired(X).sum(axis=1) / (len(RULES) - 1)

    def to_payload(self) -> dict:
        return {"params": {"iat_threshold": self.iat_threshold}}


@dataclass
class ModelFile:
    kind: str
    model: object
    schema: FeatureSchema
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def payload(self) -> dict:
        return {
            "kind": self.kind,
            "schema": self.schema.to_dict(),
            "model": self.model.to_payload(),
            "metadata": self.metadata,
        }

    def predict(self, X) -> np.ndarray:
        return self.model.predict(X)

    def predict_proba(self, X) -> np.ndarray:
        return self.model.predict_proba(X)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_model(mf: ModelFile) -> bytes:
    body = _canonical(mf.payload())
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    head = _canonical({"format": FORMAT_NAME, "format_version": mf.format_version,
                       "checksum": f"sha256:{digest}"})
    return (head[:-1] + ',"payload":' + body + "}\n").encode("utf-8")


def load_model(data: bytes) -> ModelFile:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModelFile(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise CorruptModelFile("not a ransomdet model file")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"model format version {version!r}; this build reads {FORMAT_VERSION}")
    payload = doc.get("payload")
    digest = hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()
    if doc.get("checksum") != f"sha256:{digest}":
        raise CorruptModelFile("checksum mismatch")
    try:
        schema = FeatureSchema.from_dict(payload["schema"])
        kind = payload["kind"]
        body = payload["model"]
        if kind == "gbdt":
            model = gbdt.GbdtModel.from_payload(body)
        elif kind == "forest":
            model = forest.ForestModel.from_payload(body)
        elif kind == "heuristic":
            model = HeuristicModel(schema, body["params"]["iat_threshold"])
        else:
            raise CorruptModelFile(f"unknown model kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelFile(f"malformed payload: {exc}") from exc
    return ModelFile(kind, model, schema, payload.get("metadata", {}), version)


def write_model(mf: ModelFile, path) -> None:
    Path(path).write_bytes(save_model(mf))


def read_model(path) -> ModelFile:
    return load_model(Path(path).read_bytes())


_GROW_KEYS = ("max_depth", "min_leaf", "min_gain", "feature_subsample")


def make_params(kind: str, params: dict, seed: int):
    """Build typed learner params from a flat config table."""
    params = dict(params or {})
    try:
        if kind == "gbdt":
            if "lambda" in params:
                params["reg_lambda"] = params.pop("lambda")
            grow_kw = {k: params.pop(k) for k in _GROW_KEYS if k in params}
            grow = GrowParams(**{"max_depth": 6, **grow_kw})
            return gbdt.GbdtParams(grow=grow, seed=seed, **params)
        if kind == "forest":
            grow_kw = {k: params.pop(k) for k in ("max_depth", "min_leaf", "min_gain") if k in params}
            grow = GrowParams(**{"max_depth": 32, **grow_kw})
            return forest.ForestParams(grow=grow, seed=seed, **params)
        if kind == "heuristic":
            extra = set(params) - {"iat_threshold"}
            if extra:
                raise TypeError(f"unexpected keys {sorted(extra)}")
            return {"iat_threshold": float(params.get("iat_threshold", DEFAULT_IAT_THRESHOLD))}
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad {kind} parameters: {exc}") from exc
    raise ConfigInvalid(f"unknown model kind {kind!r}; expected one of {KINDS}")


def fit(kind: str, ds: Dataset, params, n_jobs: int = 1):
    if kind == "gbdt":
        return gbdt.train(ds, params)
    if kind == "forest":
        return forest.train(ds, params, n_jobs=n_jobs)
    if kind == "heuristic":
        return HeuristicModel(ds.schema, params["iat_threshold"])
    raise ConfigInvalid(f"unknown model kind {kind!r}")


@dataclass
class ExperimentConfig:
    data: Path
    model: str = "forest"
    schema: Path | None = None
    params: dict = field(default_factory=dict)
    train_fraction: float = 0.8
    stratified: bool = True
    seed: int = 0
    out: Path | None = None
    positive: int = 0
    record_timestamp: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if self.model not in KINDS:
            raise ConfigInvalid(f"unknown model kind {self.model!r}; expected one of {KINDS}")
        if self.positive not in (0, 1):
            raise ConfigInvalid("positive class must be 0 or 1")
        try:
            self.split
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from exc

    @property
    def split(self) -> SplitSpec:
        return SplitSpec(self.train_fraction, self.stratified, self.seed)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        base_dir = Path(base_dir or ".")
        exp = dict(doc.get("experiment", {}))
        split = dict(doc.get("split", {}))
        params = dict(doc.get("params", {}))

        def path(v):
            if v is None:
                return None
            p = Path(v)
            return p if p.is_absolute() else base_dir / p

        if "data" not in exp:
            raise ConfigInvalid("config needs experiment.data")
        known = {"data", "schema", "model", "seed", "out", "positive_class", "record_timestamp", "n_jobs"}
        unknown = set(exp) - known
        if unknown:
            raise ConfigInvalid(f"unknown experiment keys {sorted(unknown)}")
        unknown = set(split) - {"train_fraction", "stratified"}
        if unknown:
            raise ConfigInvalid(f"unknown split keys {sorted(unknown)}")
        return cls(
            data=path(exp["data"]),
            model=exp.get("model", "forest"),
            schema=path(exp.get("schema")),
            params=params,
            train_fraction=float(split.get("train_fraction", 0.8)),
            stratified=bool(split.get("stratified", True)),
            seed=int(exp.get("seed", 0)),
            out=path(exp.get("out")),
            positive=int(exp.get("positive_class", 0)),
            record_timestamp=bool(exp.get("record_timestamp", False)),
            n_jobs=int(exp.get("n_jobs", 1)),
        )

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from exc
        return cls.from_dict(doc, path.parent)


@dataclass
class Evaluation:
    report: MetricsReport
    curve: PrCurve
    labels: np.ndarray
    scores: np.ndarray


def positive_scores(model, X, positive: int) -> np.ndarray:
    p1 = model.predict_proba(X)
    return p1 if positive == 1 else 1.0 - p1


def evaluate_model(model, ds: Dataset, positive: int = 0) -> Evaluation:
    pred = model.predict(ds.X)
    scores = positive_scores(model, ds.X, positive)
    report = evaluate(ds.y, pred, positive)
    curve = pr_curve(ds.y, scores, positive) if 0 < ds.y.sum() < len(ds) else PrCurve([], positive)
    return Evaluation(report, curve, pred, scores)


def write_evaluation(ev: Evaluation, out: Path, title: str = "") -> list[Path]:
    from .plots import confusion_svg, pr_curve_svg

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "metrics.txt": ev.report.to_text(),
        "metrics.csv": ev.report.to_csv(),
        "metrics.json": json.dumps(ev.report.to_dict(), indent=2, sort_keys=True) + "\n",
        "confusion.csv": ev.report.confusion.to_csv(),
        "confusion.svg": confusion_svg(ev.report.confusion, f"Confusion matrix {title}".strip()),
    }
    if ev.curve.points:
        files["pr_curve.csv"] = ev.curve.to_csv()
        files["pr_curve.svg"] = pr_curve_svg(ev.curve, f"Precision-Recall {title}".strip())
    written = []
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)
    return written


def _rows_digest(index: np.ndarray) -> str:
    return hashlib.sha256(np.sort(index).astype("<i8").tobytes()).hexdigest()


@dataclass
class ExperimentResult:
    model_file: ModelFile
    evaluation: Evaluation
    train_seconds: float
    train_index: np.ndarray
    test_index: np.ndarray

    @property
    def report(self) -> MetricsReport:
        return self.evaluation.report


def run_experiment(cfg: ExperimentConfig, log=None) -> ExperimentResult:
    log = log or (lambda msg: None)
    if not Path(cfg.data).exists():
        raise ConfigInvalid(f"dataset not found: {cfg.data}")
    if cfg.schema is not None and not Path(cfg.schema).exists():
        raise ConfigInvalid(f"schema not found: {cfg.schema}")
    schema = load_schema(cfg.schema) if cfg.schema else default_schema()
    ds = load_csv(cfg.data, schema)
    check = validate(ds)
    if not check.clean:
        raise DatasetError(f"dataset has {check.missing_total} missing and non-finite values; see `ingest`")
    log(f"loaded {len(ds)} rows, {schema.n_features} features")
    train_ds, test_ds = stratified_split(ds, cfg.split)
    log(f"split: {len(train_ds)} train / {len(test_ds)} test")

    params = make_params(cfg.model, cfg.params, cfg.seed)
    t0 = time.perf_counter()
    model = fit(cfg.model, train_ds, params, cfg.n_jobs)
    seconds = time.perf_counter() - t0
    log(f"trained {cfg.model} in {seconds:.2f}s")

    ev = evaluate_model(model, test_ds, cfg.positive)
    summary = {k: ev.report.to_dict()[k] for k in ("accuracy", "precision", "recall", "f1", "positive_class")}
    metadata = {
        "dataset_sha256": ds.fingerprint(),
        "dataset_rows": len(ds),
        "seed": cfg.seed,
        "split": {"train_fraction": cfg.train_fraction, "stratified": cfg.stratified},
        "train_rows": len(train_ds),
        "test_rows": len(test_ds),
        "train_rows_sha256": _rows_digest(train_ds.index),
        "test_rows_sha256": _rows_digest(test_ds.index),
        "metrics": summary,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds") if cfg.record_timestamp else None,
    }
    mf = ModelFile(cfg.model, model, schema, metadata)
    if cfg.out is not None:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        write_model(mf, out / "model.json")
        write_evaluation(ev, out, f"({cfg.model})")
        log(f"wrote {out / 'model.json'}")
    return ExperimentResult(mf, ev, seconds, train_ds.index, test_ds.index)


def repeated_seeds(cfg: ExperimentConfig, seeds) -> dict:
    """Mean and spread of the headline metrics over several split/model seeds."""
    rows = []
    for s in seeds:
        one = ExperimentConfig(**{**cfg.__dict__, "seed": int(s), "out": None})
        rows.append(run_experiment(one).report)
    out = {}
    for key in ("accuracy", "precision", "recall", "f1"):
        vals = np.array([getattr(r, key) for r in rows])
        out[key] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
                    "min": float(vals.min()), "max": float(vals.max())}
    out["runs"] = len(rows)
    return out

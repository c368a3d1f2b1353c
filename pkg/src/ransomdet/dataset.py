"""Tabular ransomware dataset: schema, CSV I/O, validation, splitting, synthesis.

Labels follow the Kaggle convention: 1 = legitimate, 0 = malware.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DuplicateHeader,
    EmptyClass,
    EmptyFile,
    MissingColumn,
    SchemaError,
    TooFewSamples,
    UnparsableValue,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

NUMERIC = "numeric"
IDENTIFIER = "identifier"
LABEL = "label"
KINDS = (NUMERIC, IDENTIFIER, LABEL)

MALWARE = 0
LEGITIMATE = 1
LABEL_NAMES = {MALWARE: "malware", LEGITIMATE: "legitimate"}

# Row count and class split of the published Kaggle revision.
REFERENCE_ROWS = 62485
REFERENCE_CLASS_COUNTS = (35367, 27118)

IDENTIFIER_HINTS = ("name", "hash", "md5", "sha1", "sha256", "path", "id")


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[tuple[str, str], ...]
    label_column: str
    positive_label_meaning: str = "legitimate=1, malware=0"

    def __post_init__(self):
        names = [n for n, _ in self.columns]
        if any(not n for n in names):
            raise SchemaError("column names must be non-empty")
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        bad = [k for _, k in self.columns if k not in KINDS]
        if bad:
            raise SchemaError(f"unknown column kind(s): {bad}")
        labels = [n for n, k in self.columns if k == LABEL]
        if len(labels) != 1:
            raise SchemaError(f"exactly one label column required, got {labels}")
        if labels[0] != self.label_column:
            raise SchemaError(
                f"label_column {self.label_column!r} does not match {labels[0]!r}"
            )

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]

    @property
    def feature_names(self) -> list[str]:
        return [n for n, k in self.columns if k == NUMERIC]

    @property
    def identifier_names(self) -> list[str]:
        return [n for n, k in self.columns if k == IDENTIFIER]

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise MissingColumn(name) from None

    def to_dict(self) -> dict:
        return {
            "columns": [[n, k] for n, k in self.columns],
            "label": self.label_column,
            "positive_label_meaning": self.positive_label_meaning,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            columns=tuple((n, k) for n, k in d["columns"]),
            label_column=d["label"],
            positive_label_meaning=d.get("positive_label_meaning", ""),
        )

    @classmethod
    def from_toml(cls, text: str) -> "FeatureSchema":
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise SchemaError(f"schema file is not valid TOML: {exc}") from exc
        if "label" not in doc or "columns" not in doc:
            raise SchemaError("schema needs a 'label' key and a [columns] table")
        columns = []
        for name, kind in doc["columns"].items():
            kind = str(kind).lower()
            if kind == "auto":
                kind = infer_kind(name, doc["label"])
            columns.append((name, kind))
        return cls(
            columns=tuple(columns),
            label_column=doc["label"],
            positive_label_meaning=doc.get(
                "positive_label_meaning", "legitimate=1, malware=0"
            ),
        )


def infer_kind(name: str, label: str) -> str:
    """Guess a column kind; file names and hashes never become features."""
    if name == label:
        return LABEL
    low = name.lower()
    if any(low == h or low.endswith(h) for h in IDENTIFIER_HINTS):
        return IDENTIFIER
    return NUMERIC


def load_schema(path: str | os.PathLike) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_toml(fh.read())


@lru_cache(maxsize=1)
def default_schema() -> FeatureSchema:
    text = resources.files("ransomdet.data").joinpath("default_schema.toml").read_text(
        encoding="utf-8"
    )
    return FeatureSchema.from_toml(text)


@dataclass(frozen=True)
class Sample:
    features: tuple[float, ...]
    label: int | None = None
    id: str | None = None


class Dataset:
    """Immutable table of samples backed by numpy arrays.

    ``index`` holds each row's canonical position in the file it was loaded
    from, so subsets produced by splitting keep their identity.
    """

    def __init__(self, schema: FeatureSchema, X, y, identifiers=None, index=None):
        X = np.array(X, dtype=np.float64, order="C", copy=True).reshape(-1, schema.n_features)
        y = np.array(y, dtype=np.int8, copy=True).reshape(-1)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} feature rows but {len(y)} labels")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        n = len(y)
        identifiers = identifiers or {}
        ids = {}
        for name in schema.identifier_names:
            col = tuple(identifiers.get(name, ("",) * n))
            if len(col) != n:
                raise ValueError(f"identifier column {name!r} has wrong length")
            ids[name] = col
        index = np.arange(n, dtype=np.int64) if index is None else np.asarray(index, np.int64)
        for arr in (X, y, index):
            arr.setflags(write=False)
        self.schema = schema
        self.X = X
        self.y = y
        self.identifiers = ids
        self.index = index

    def __len__(self):
        return len(self.y)

    def __repr__(self):
        c0, c1 = class_balance(self)
        return f"Dataset(n={len(self)}, features={self.schema.n_features}, malware={c0}, legitimate={c1})"

    def sample(self, i: int) -> Sample:
        sid = None
        if self.schema.identifier_names:
            sid = self.identifiers[self.schema.identifier_names[0]][i]
        return Sample(tuple(float(v) for v in self.X[i]), int(self.y[i]), sid)

    @property
    def samples(self) -> list[Sample]:
        return [self.sample(i) for i in range(len(self))]

    def subset(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        ids = {k: tuple(v[i] for i in rows) for k, v in self.identifiers.items()}
        return Dataset(self.schema, self.X[rows], self.y[rows], ids, self.index[rows])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.X).all())

    def to_csv(self, dest=None) -> str | None:
        """Write canonical CSV (schema column order). Returns the text if ``dest`` is None."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.schema.names)
        fidx = {n: i for i, n in enumerate(self.schema.feature_names)}
        for r in range(len(self)):
            row = []
            for name, kind in self.schema.columns:
                if kind == NUMERIC:
                    row.append(format_real(self.X[r, fidx[name]]))
                elif kind == IDENTIFIER:
                    row.append(self.identifiers[name][r])
                else:
                    row.append(str(int(self.y[r])))
            writer.writerow(row)
        text = buf.getvalue()
        if dest is None:
            return text
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return None

    def fingerprint(self) -> str:
        """SHA-256 of the canonical CSV serialization."""
        return hashlib.sha256(self.to_csv().encode("utf-8")).hexdigest()


def format_real(v: float) -> str:
    v = float(v)
    if math.isfinite(v) and v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(v)


def _parse_real(text: str) -> float:
    text = text.strip()
    if text == "" or text.lower() in ("nan", "na", "null", "none"):
        return math.nan
    return float(text)


def _parse_label(text: str) -> int:
    v = float(text)
    if v not in (0.0, 1.0):
        raise ValueError(text)
    return int(v)


def read_csv(stream: Iterable[str], schema: FeatureSchema, source: str = "<stream>") -> Dataset:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyFile(f"{source}: no header row") from None
    header = [h.strip().lstrip("\ufeff") for h in header]
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise DuplicateHeader(f"{source}: duplicate header column(s) {dupes}")
    pos = {h: i for i, h in enumerate(header)}
    for name in schema.names:
        if name not in pos:
            raise MissingColumn(name)

    fcols = [pos[n] for n in schema.feature_names]
    icols = [(n, pos[n]) for n in schema.identifier_names]
    lcol = pos[schema.label_column]

    X, y = [], []
    ids = {n: [] for n, _ in icols}
    for rownum, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) < len(header):
            row = row + [""] * (len(header) - len(row))
        feats = []
        for name, c in zip(schema.feature_names, fcols):
            try:
                feats.append(_parse_real(row[c]))
            except ValueError:
                raise UnparsableValue(rownum, name, row[c]) from None
        try:
            y.append(_parse_label(row[lcol]))
        except ValueError:
            raise UnparsableValue(rownum, schema.label_column, row[lcol]) from None
        X.append(feats)
        for n, c in icols:
            ids[n].append(row[c])
    if not y:
        raise EmptyFile(f"{source}: header but no data rows")
    return Dataset(schema, np.array(X, dtype=np.float64), y, {k: tuple(v) for k, v in ids.items()})


def load_csv(path: str | os.PathLike, schema: FeatureSchema | None = None) -> Dataset:
    schema = schema or default_schema()
    with open(path, encoding="utf-8", newline="") as fh:
        return read_csv(fh, schema, source=str(path))


def load_unlabeled_csv(path, schema: FeatureSchema | None = None):
    """Read feature columns (and the label, when present) from a CSV.

    Returns ``(X, ids, y)`` where ``y`` is None if the label column is absent.
    """
    schema = schema or default_schema()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lstrip("\ufeff") for h in next(reader)]
        except StopIteration:
            raise EmptyFile(f"{path}: no header row") from None
        pos = {h: i for i, h in enumerate(header)}
        for name in schema.feature_names:
            if name not in pos:
                raise MissingColumn(name)
        id_col = next((pos[n] for n in schema.identifier_names if n in pos), None)
        lcol = pos.get(schema.label_column)
        X, ids, y = [], [], []
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            feats = []
            for name in schema.feature_names:
                try:
                    feats.append(_parse_real(row[pos[name]]))
                except (ValueError, IndexError):
                    raise UnparsableValue(rownum, name, row[pos[name]] if pos[name] < len(row) else "") from None
            X.append(feats)
            ids.append(row[id_col] if id_col is not None else str(rownum))
            if lcol is not None:
                try:
                    y.append(_parse_label(row[lcol]))
                except (ValueError, IndexError):
                    raise UnparsableValue(rownum, schema.label_column, row[lcol] if lcol < len(row) else "") from None
    if not X:
        raise EmptyFile(f"{path}: header but no data rows")
    X = np.array(X, dtype=np.float64).reshape(-1, schema.n_features)
    return X, ids, (np.array(y, dtype=np.int8) if lcol is not None else None)


@dataclass
class ValidationReport:
    n_rows: int
    n_features: int
    missing: dict[str, int]
    nonfinite: dict[str, int]
    constant_columns: list[str]
    class_counts: tuple[int, int]
    single_class: bool
    reference_rows: int | None = None
    reference_class_counts: tuple[int, int] | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def missing_total(self) -> int:
        return sum(self.missing.values())

    @property
    def defects(self) -> int:
        return (
            self.missing_total
            + sum(self.nonfinite.values())
            + len(self.constant_columns)
            + int(self.single_class)
        )

    @property
    def clean(self) -> bool:
        return self.missing_total == 0 and not any(self.nonfinite.values())

    def to_dict(self) -> dict:
        d = {
            "n_rows": self.n_rows,
            "n_features": self.n_features,
            "missing_total": self.missing_total,
            "missing": dict(self.missing),
            "nonfinite": dict(self.nonfinite),
            "constant_columns": list(self.constant_columns),
            "class_count_malware": self.class_counts[0],
            "class_count_legitimate": self.class_counts[1],
            "single_class": self.single_class,
            "defects": self.defects,
        }
        if self.reference_rows is not None:
            d["reference_rows"] = self.reference_rows
            d["rows_delta"] = self.n_rows - self.reference_rows
        if self.reference_class_counts is not None:
            d["reference_class_count_malware"] = self.reference_class_counts[0]
            d["reference_class_count_legitimate"] = self.reference_class_counts[1]
            d["class_delta_malware"] = self.class_counts[0] - self.reference_class_counts[0]
            d["class_delta_legitimate"] = self.class_counts[1] - self.reference_class_counts[1]
        d["notes"] = list(self.notes)
        return d

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, dict):
                value = ";".join(f"{k}={v}" for k, v in value.items() if v) or "none"
            elif isinstance(value, list):
                value = ";".join(map(str, value)) or "none"
            lines.append(f"{key}: {value}")
        return "\n".join(lines) + "\n"


def validate(ds: Dataset, reference: bool = False) -> ValidationReport:
    """Report data defects. Never raises on dirty data.

    With ``reference=True`` the row and class counts are compared against the
    published Kaggle revision and any delta is noted.
    """
    names = ds.schema.feature_names
    X = ds.X
    nan = np.isnan(X)
    inf = np.isinf(X)
    missing = {n: int(c) for n, c in zip(names, nan.sum(axis=0))}
    nonfinite = {n: int(c) for n, c in zip(names, inf.sum(axis=0))}
    constant = []
    if len(ds):
        for j, n in enumerate(names):
            col = X[:, j][np.isfinite(X[:, j])]
            if len(col) and col.min() == col.max():
                constant.append(n)
    counts = class_balance(ds)
    report = ValidationReport(
        n_rows=len(ds),
        n_features=len(names),
        missing=missing,
        nonfinite=nonfinite,
        constant_columns=constant,
        class_counts=counts,
        single_class=len(ds) > 0 and min(counts) == 0,
    )
    if report.single_class:
        report.notes.append("single-class dataset")
    if reference:
        report.reference_rows = REFERENCE_ROWS
        report.reference_class_counts = REFERENCE_CLASS_COUNTS
        if len(ds) != REFERENCE_ROWS or counts != REFERENCE_CLASS_COUNTS:
            report.notes.append(
                f"differs from reference revision: rows {len(ds)} vs {REFERENCE_ROWS}, "
                f"classes {counts} vs {REFERENCE_CLASS_COUNTS}"
            )
    return report


def class_balance(ds: Dataset) -> tuple[int, int]:
    n1 = int(np.count_nonzero(ds.y))
    return len(ds) - n1, n1


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _allocate(sizes: Sequence[int], total: int, frac: float) -> list[int]:
    # largest remainder, ties go to the lower class label
    exact = [frac * s for s in sizes]
    base = [int(math.floor(e)) for e in exact]
    order = sorted(range(len(sizes)), key=lambda c: (-(exact[c] - base[c]), c))
    for c in order[: total - sum(base)]:
        base[c] += 1
    return base


def stratified_split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    """Seeded train/test partition. Rows keep their canonical order on each side."""
    n = len(ds)
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples to split, got {n}")
    n_train = _round_half_up(spec.train_fraction * n)
    n_train = min(max(n_train, 1), n - 1)
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        groups = [np.flatnonzero(ds.y == c) for c in (0, 1)]
        if any(len(g) == 0 for g in groups):
            raise EmptyClass("stratified split requested but a class has no samples")
        quotas = _allocate([len(g) for g in groups], n_train, spec.train_fraction)
        train_rows = []
        for g, q in zip(groups, quotas):
            train_rows.append(rng.permutation(g)[:q])
        train_rows = np.concatenate(train_rows)
    else:
        train_rows = rng.permutation(n)[:n_train]
    mask = np.zeros(n, dtype=bool)
    mask[train_rows] = True
    return ds.subset(np.flatnonzero(mask)), ds.subset(np.flatnonzero(~mask))


def synth_generate(
    n_per_class: int,
    seed: int = 0,
    label_noise: float = 0.0,
    iat_threshold: int = 2**28,
) -> Dataset:
    """Synthetic rows in the default schema that follow the malware header patterns.

    Legitimate rows: non-zero image version, export size and resource size,
    import table at 4096. Malware rows: zeros there and an import table RVA
    that is either 0 or above ``iat_threshold``. Remaining columns are drawn
    from the same bounded distributions for both classes.

    ``label_noise`` flips that fraction of labels afterwards (benchmarks only;
    noisy data is no longer separable).
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    schema = default_schema()
    rng = np.random.default_rng(seed)
    n = 2 * n_per_class
    y = np.repeat(np.array([LEGITIMATE, MALWARE], dtype=np.int8), n_per_class)
    legit = y == LEGITIMATE
    mal = ~legit
    nm = int(mal.sum())
    nl = int(legit.sum())

    cols: dict[str, np.ndarray] = {}
    cols["Machine"] = rng.choice([332.0, 34404.0], size=n)
    cols["MajorOSVersion"] = rng.integers(4, 11, size=n).astype(float)
    cols["MajorLinkerVersion"] = rng.integers(2, 15, size=n).astype(float)
    cols["MinorLinkerVersion"] = rng.integers(0, 50, size=n).astype(float)
    cols["NumberOfSections"] = rng.integers(1, 11, size=n).astype(float)
    cols["SizeOfStackReserve"] = 65536.0 * rng.integers(1, 33, size=n)
    cols["DllCharacteristics"] = rng.integers(0, 65536, size=n).astype(float)
    cols["BitcoinAddresses"] = (rng.random(n) < 0.05).astype(float)

    miv = np.zeros(n)
    miv[legit] = rng.integers(1, 11, size=nl)
    cols["MajorImageVersion"] = miv

    export_size = np.zeros(n)
    export_size[legit] = 40.0 * rng.integers(1, 51, size=nl)
    cols["ExportSize"] = export_size
    export_rva = np.zeros(n)
    export_rva[legit] = 4096.0 * rng.integers(1, 512, size=nl)
    cols["ExportRVA"] = export_rva

    resource = np.zeros(n)
    resource[legit] = 512.0 * rng.integers(1, 21, size=nl)
    cols["ResourceSize"] = resource

    iat = np.full(n, 4096.0)
    huge = rng.random(nm) < 0.5
    iat_mal = np.zeros(nm)
    iat_mal[huge] = rng.integers(iat_threshold + 1, 2**32, size=int(huge.sum()))
    iat[mal] = iat_mal
    cols["IatVRA"] = iat

    debug_size = 28.0 * rng.integers(1, 4, size=n)
    debug_size[mal & (rng.random(n) < 0.7)] = 0.0
    cols["DebugSize"] = debug_size
    debug_rva = np.where(debug_size > 0, 4096.0 * rng.integers(1, 512, size=n), 0.0)
    cols["DebugRVA"] = debug_rva

    X = np.column_stack([cols[name] for name in schema.feature_names])

    if label_noise > 0:
        flip = rng.random(n) < label_noise
        y = np.where(flip, 1 - y, y).astype(np.int8)

    names = tuple(f"synth_{i:06d}.exe" for i in range(n))
    hashes = tuple(hashlib.md5(f"{seed}:{i}".encode()).hexdigest() for i in range(n))
    return Dataset(schema, X, y, {"FileName": names, "md5Hash": hashes})

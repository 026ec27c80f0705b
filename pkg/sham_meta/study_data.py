""" Study records, dataset ingestion and the sham-arm diagnostics. """

import csv
import json
import math
from pathlib import Path

import numpy as np
from scipy import special, stats

from sham_meta import util
from sham_meta.util import ValidationError

SUMMARY_FIELDS = ["id", "x", "y1", "s1", "y0", "s0", "n1", "n0"]
COUNT_FIELDS = ["id", "n1", "N1", "n0", "N0"]
FORMATS = ["summary-csv", "count-csv", "json"]
LOG_ODDS_CONVENTIONS = ["total", "haldane"]


class StudyRecord:
    """ One paired active/sham experiment given as summary statistics.

    :param obj: fields id, y1, s1, y0, s0 and optional x, n1, n0
    :type obj: dict
    :raises ValidationError: if a field is missing or violates its range
    """

    def __init__(self, obj):
        keys = [
            ('id', str),
            ('y1', util.to_float),
            ('s1', util.to_float),
            ('y0', util.to_float),
            ('s0', util.to_float),
        ]
        optional_keys = [
            ('x', util.to_float, None),
            ('n1', util.to_int, None),
            ('n0', util.to_int, None),
        ]
        util.set_attr_from_dict(obj, self, keys, optional_keys)
        for name in ["x", "y1", "s1", "y0", "s0"]:
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                raise ValidationError(f"{name}: value must be finite")
        for name in ["s1", "s0"]:
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name}: standard error must be positive")
        for name in ["n1", "n0"]:
            n = getattr(self, name)
            if n is not None and n < 2:
                raise ValidationError(f"{name}: sample size must be at least 2")

    def to_dict(self):
        return {k: getattr(self, k) for k in SUMMARY_FIELDS}

    def __eq__(self, other):
        return isinstance(other, StudyRecord) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"StudyRecord({self.to_dict()})"


class CountRecord:
    """ One paired active/sham experiment given as event counts out of totals.

    :param obj: fields id, n1, N1, n0, N0
    :type obj: dict
    :raises ValidationError: if a count is out of range
    """

    def __init__(self, obj):
        keys = [
            ('id', str),
            ('n1', util.to_int),
            ('N1', util.to_int),
            ('n0', util.to_int),
            ('N0', util.to_int),
        ]
        util.set_attr_from_dict(obj, self, keys, [])
        for n, N in [("n1", "N1"), ("n0", "N0")]:
            if getattr(self, N) < 1:
                raise ValidationError(f"{N}: total must be at least 1")
            if not 0 <= getattr(self, n) <= getattr(self, N):
                raise ValidationError(f"{n}: count must lie between 0 and {N}")

    def to_dict(self):
        return {k: getattr(self, k) for k in COUNT_FIELDS}

    def __eq__(self, other):
        return isinstance(other, CountRecord) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"CountRecord({self.to_dict()})"


class Dataset:
    """ Ordered collection of records of a single kind.

    :param records: StudyRecord or CountRecord instances
    :type records: list
    :raises ValidationError: if empty, mixed or ids are not unique
    """

    def __init__(self, records):
        records = tuple(records)
        if len(records) == 0:
            raise ValidationError("dataset must contain at least one record")
        if all(isinstance(r, StudyRecord) for r in records):
            self.kind = "summary"
        elif all(isinstance(r, CountRecord) for r in records):
            self.kind = "count"
        else:
            raise ValidationError("records must all be summary or all be count records")
        seen = set()
        for r in records:
            if r.id in seen:
                raise ValidationError(f"id: duplicate id {r.id!r}")
            seen.add(r.id)
        self.records = records

    @property
    def J(self):
        return len(self.records)

    @property
    def ids(self):
        return [r.id for r in self.records]

    def column(self, name):
        """ Field values of all records as float array (None becomes NaN). """
        return np.array([
            np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records
        ], dtype=float)

    def has_column(self, name):
        return all(getattr(r, name, None) is not None for r in self.records)

    def require_kind(self, kind):
        if self.kind != kind:
            raise ValidationError(f"operation requires a {kind} dataset, got {self.kind} records")

    def subset(self, indices):
        return Dataset([self.records[i] for i in indices])

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return isinstance(other, Dataset) and self.records == other.records

    def __repr__(self):
        return f"Dataset(kind={self.kind}, J={self.J})"


def _record_from_dict(obj, kind):
    if kind == "summary":
        return StudyRecord(obj)
    return CountRecord(obj)


def _kind_from_fields(fields):
    if "N1" in fields or "N0" in fields:
        return "count"
    return "summary"


def _guess_format(path):
    if Path(path).suffix.lower() == ".json":
        return "json"
    with open(path, 'r', encoding='utf-8', newline='') as f:
        header = f.readline()
    return "count-csv" if "N1" in [h.strip() for h in header.split(',')] else "summary-csv"


def ingest(path, format=None):
    """ Read and validate a dataset file.

    :param path: input file
    :type path: str or Path
    :param format: one of summary-csv, count-csv, json (default: guessed from file)
    :type format: str
    :raises ValidationError: on unreadable files, parse errors (with row number),
        invariant violations (with field name) and duplicate ids
    :return: validated dataset in file order
    :rtype: Dataset
    """

    path = Path(path)
    if not path.exists():
        raise ValidationError(f"input file {path} does not exist")
    if format is None:
        format = _guess_format(path)
    if format not in FORMATS:
        raise ValidationError(f"unknown dataset format {format!r}, choose from {FORMATS}")

    if format == "json":
        try:
            with path.open('r', encoding='utf-8') as f:
                obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: invalid JSON ({e.msg}, line {e.lineno})")
        except UnicodeDecodeError:
            raise ValidationError(f"{path}: not UTF-8 encoded")
        if isinstance(obj, dict):
            util.check_schema_version(obj)
            rows = obj.get("records", [])
            kind = obj.get("kind")
        else:
            rows = obj
            kind = None
        if not isinstance(rows, list):
            raise ValidationError(f"{path}: records must be a list")
        for row_idx, row in enumerate(rows, start=1):
            if not isinstance(row, dict):
                raise ValidationError(f"{path}, row {row_idx}: expected an object")
        if kind is None:
            kind = _kind_from_fields(rows[0].keys()) if rows else "summary"
        if kind not in ["summary", "count"]:
            raise ValidationError(f"{path}: unknown record kind {kind!r}")
    else:
        kind = "count" if format == "count-csv" else "summary"
        expected = COUNT_FIELDS if kind == "count" else SUMMARY_FIELDS
        rows = []
        try:
            with path.open('r', encoding='utf-8', newline='') as f:
                reader = csv.DictReader(f)
                fields = [fn.strip() for fn in reader.fieldnames or []]
                required = [k for k in expected if k not in ["x", "n1", "n0"] or kind == "count"]
                missing = [k for k in required if k not in fields]
                if missing:
                    raise ValidationError(f"{path}: missing columns {', '.join(missing)}")
                for row in reader:
                    # DictReader keeps surplus fields under None
                    if None in row:
                        raise ValidationError(
                            f"{path}, line {reader.line_num}: more fields than columns")
                    rows.append({k.strip(): (v.strip() if isinstance(v, str) else v)
                                 for k, v in row.items()})
        except UnicodeDecodeError:
            raise ValidationError(f"{path}: not UTF-8 encoded")

    records = []
    for row_idx, row in enumerate(rows, start=1):
        try:
            records.append(_record_from_dict(row, kind))
        except ValidationError as e:
            raise ValidationError(f"{path}, row {row_idx}: {e}")
    try:
        return Dataset(records)
    except ValidationError as e:
        raise ValidationError(f"{path}: {e}")


def _format_value(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def write_dataset(d, path, format=None):
    """ Write dataset so that :func:`ingest` reproduces it exactly.

    :param d: dataset
    :type d: Dataset
    :param path: output file
    :type path: str or Path
    :param format: one of summary-csv, count-csv, json (default: by kind / suffix)
    :type format: str
    """

    path = Path(path)
    if format is None:
        if path.suffix.lower() == ".json":
            format = "json"
        else:
            format = "count-csv" if d.kind == "count" else "summary-csv"
    fields = COUNT_FIELDS if d.kind == "count" else SUMMARY_FIELDS
    if format == "json":
        content = {
            "schema_version": 1,
            "kind": d.kind,
            "records": [r.to_dict() for r in d.records],
        }
        with path.open('w', encoding='utf-8') as f:
            json.dump(content, f, indent=2)
    else:
        if (format == "count-csv") != (d.kind == "count"):
            raise ValidationError(f"can not write {d.kind} records as {format}")
        with path.open('w', encoding='utf-8', newline='') as f:
            f.write(','.join(fields))
            for r in d.records:
                f.write('\n' + ','.join(_format_value(getattr(r, k)) for k in fields))
            f.write('\n')


def log_odds_transform(c, convention="total"):
    """ Turn remission counts into log-scale estimates with standard errors.

    | total: y = log((n + 0.5) / (N + 1))
    | haldane: y = log((n + 0.5) / (N - n + 0.5))

    Both use s = sqrt(1 / (n + 0.5) + 1 / (N - n + 0.5)).

    :param c: count record
    :type c: CountRecord
    :param convention: total or haldane
    :type convention: str
    :return: summary record with the same id (sample sizes from totals when at least 2)
    :rtype: StudyRecord
    """

    if convention not in LOG_ODDS_CONVENTIONS:
        raise ValidationError(f"unknown log odds convention {convention!r}")

    def arm(n, N):
        if convention == "total":
            y = math.log((n + 0.5) / (N + 1))
        else:
            y = math.log((n + 0.5) / (N - n + 0.5))
        s = math.sqrt(1 / (n + 0.5) + 1 / (N - n + 0.5))
        return y, s

    y1, s1 = arm(c.n1, c.N1)
    y0, s0 = arm(c.n0, c.N0)
    return StudyRecord({
        "id": c.id, "y1": y1, "s1": s1, "y0": y0, "s0": s0,
        "n1": c.N1 if c.N1 >= 2 else None,
        "n0": c.N0 if c.N0 >= 2 else None,
    })


def transform_counts(d, convention="total"):
    """ Apply :func:`log_odds_transform` to every record of a count dataset. """
    d.require_kind("count")
    return Dataset([log_odds_transform(c, convention) for c in d.records])


def as_summary(d, convention="total"):
    """ Summary view of any dataset: count data is log-odds transformed. """
    if d.kind == "count":
        return transform_counts(d, convention)
    return d


def sham_chi_square(d):
    """ Compare the sham estimates with their standard errors.

    Under the null of no sham effect the statistic sum((y0 / s0)^2) follows a
    chi-square distribution with J degrees of freedom.

    :param d: summary dataset
    :type d: Dataset
    :return: statistic, degrees of freedom, chi-square CDF at the statistic
    :rtype: tuple
    """

    d.require_kind("summary")
    y0 = d.column("y0")
    s0 = d.column("s0")
    stat = float(np.sum((y0 / s0) ** 2))
    df = d.J
    cdf = float(special.gammainc(df / 2, stat / 2))
    return stat, df, cdf


def rescale_sham_ses(d, factor):
    """ Multiply every sham standard error by `factor`.

    :param d: summary dataset
    :type d: Dataset
    :param factor: positive finite scale
    :type factor: float
    :raises ValidationError: if factor is not positive and finite
    :return: new dataset
    :rtype: Dataset
    """

    d.require_kind("summary")
    factor = util.to_float(factor)
    if not math.isfinite(factor) or factor <= 0:
        raise ValidationError(f"rescale factor must be positive and finite, got {factor}")
    records = []
    for r in d.records:
        obj = r.to_dict()
        obj["s0"] = factor * r.s0
        records.append(StudyRecord(obj))
    return Dataset(records)


def sham_mean_test(d):
    """ z-test of the average sham estimate against zero.

    :param d: summary dataset
    :type d: Dataset
    :return: mean, standard error, z, two-sided p
    :rtype: tuple
    """

    d.require_kind("summary")
    y0 = d.column("y0")
    s0 = d.column("s0")
    mean = float(np.mean(y0))
    se = float(np.sqrt(np.sum(s0 ** 2)) / d.J)
    z = mean / se
    p = float(2 * stats.norm.sf(abs(z)))
    return mean, se, z, p


def sham_exposed_correlation(d):
    """ Pearson correlation between sham and exposed estimates.

    :param d: summary dataset
    :type d: Dataset
    :return: r and two-sided p, both NaN for fewer than 3 studies or constant columns
    :rtype: tuple
    """

    d.require_kind("summary")
    y0 = d.column("y0")
    y1 = d.column("y1")
    if d.J < 3 or np.ptp(y0) == 0 or np.ptp(y1) == 0:
        return math.nan, math.nan
    r, p = stats.pearsonr(y0, y1)
    return float(r), float(p)

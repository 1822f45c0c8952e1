"""Data ingestion, run configuration and result serialization.

Tabular inputs are CSV with a header row; configs and manifests are JSON.
Ingestion turns a declarative dataset spec (column roles, covariate
transforms, row filter, partition rule) into a typed sample and partition.
Every command's outputs travel with a manifest naming the resolved
configuration and seed so a run can be reproduced byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InputError
from .quantiles import Partition
from .transform import SurvivalSample

PACKAGED_DATASETS = {"veteran": "veteran.csv"}
PACKAGED_CONFIGS = {"veteran": "va_lung.json", "va_lung": "va_lung.json"}


def packaged_path(kind: str, name: str) -> Path:
    table = PACKAGED_DATASETS if kind == "data" else PACKAGED_CONFIGS
    try:
        filename = table[name]
    except KeyError:
        raise InputError(f"unknown packaged {kind} {name!r}") from None
    return Path(str(resources.files("quantsurv").joinpath("data", filename)))


@dataclass
class CovariateSpec:
    column: str
    transform: str = "identity"      # identity | standardize | dummy
    reference: str | None = None     # dummy coding reference level
    name: str | None = None

    def __post_init__(self):
        if self.transform not in ("identity", "standardize", "dummy"):
            raise InputError(f"unknown covariate transform {self.transform!r}")
        if self.transform == "dummy" and self.reference is None:
            raise InputError(f"dummy coding of {self.column!r} needs a reference level")


@dataclass
class PartitionSpec:
    by: str
    thresholds: list = None          # numeric cut points, ascending
    labels: list = None

    def __post_init__(self):
        if self.thresholds is not None:
            t = list(self.thresholds)
            if sorted(t) != t:
                raise InputError("partition thresholds must be ascending")


@dataclass
class DatasetSpec:
    """Declarative description of a CSV dataset."""

    path: str
    time: str = "time"
    status: str = "status"
    covariates: list = field(default_factory=list)
    filter: str | None = None
    partition: PartitionSpec | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "DatasetSpec":
        raw = dict(raw)
        covs = [CovariateSpec(**c) for c in raw.pop("covariates", [])]
        part = raw.pop("partition", None)
        if part is not None:
            part = PartitionSpec(**part)
        raw.pop("family", None)
        path = raw.pop("data", None) or raw.pop("path", None)
        if path is None:
            raise InputError("dataset spec needs a 'data' or 'path' entry")
        return cls(path=path, covariates=covs, partition=part, **raw)

    @classmethod
    def from_json(cls, path) -> "DatasetSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class RunConfig:
    """Resolved run options shared by the commands."""

    family: str = "po"
    phi_mode: str = "efficient"
    alpha: float = 0.05
    p_min: float = 0.25
    p_max: float = 0.75
    p_grid_size: int = 101
    replicates: int = 1000
    transform_g: str = "cloglog"
    tau: float | None = None
    tol: float = 1e-8
    max_iter: int = 50
    seed: int = 0
    workers: int | None = None

    def p_grid(self) -> np.ndarray:
        from .quantiles import default_p_grid

        return default_p_grid(self.p_min, self.p_max, self.p_grid_size)


def _resolve_data_path(name_or_path: str) -> Path:
    if name_or_path in PACKAGED_DATASETS:
        return packaged_path("data", name_or_path)
    path = Path(name_or_path)
    if not path.exists():
        raise InputError(f"data file not found: {name_or_path}")
    return path


def _read_csv(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except Exception as exc:
        raise InputError(f"could not parse {path}: {exc}") from exc


def _file_lines(df: pd.DataFrame, mask) -> str:
    # +2: header line plus 1-based numbering; survives row filtering
    rows = df["_source_row"] if "_source_row" in df.columns else df.index
    return ", ".join(str(int(i) + 2) for i in rows[mask][:10])


def _coerce_numeric(df: pd.DataFrame, column: str) -> pd.Series:
    series = pd.to_numeric(df[column], errors="coerce")
    bad = series.isna() & df[column].notna()
    if bad.any():
        raise InputError(
            f"column {column!r} has unparseable values at line(s) "
            f"{_file_lines(df, bad)}"
        )
    if series.isna().any():
        raise InputError(
            f"column {column!r} has missing values at line(s) "
            f"{_file_lines(df, series.isna())}"
        )
    return series


def ingest(spec: DatasetSpec, tau: float | None = None):
    """Read, filter, encode and partition a dataset.

    Returns ``(sample, partition, meta)`` where ``meta`` records the
    covariate names, dummy levels and standardization constants.
    """
    path = _resolve_data_path(spec.path)
    df = _read_csv(path)
    for col in (spec.time, spec.status):
        if col not in df.columns:
            raise InputError(f"missing required column {col!r} in {path.name}")

    if spec.filter:
        try:
            df = df.query(spec.filter)
        except Exception as exc:
            raise InputError(f"bad filter expression {spec.filter!r}: {exc}") from exc
        if df.empty:
            raise InputError(f"filter {spec.filter!r} removed every row")
    df = df.reset_index(drop=False).rename(columns={"index": "_source_row"})

    times = _coerce_numeric(df, spec.time).to_numpy()
    status = _coerce_numeric(df, spec.status).to_numpy()
    if not np.isin(status, (0, 1)).all():
        raise InputError(f"status column {spec.status!r} must contain only 0/1")
    if np.any(times < 0):
        raise InputError(f"time column {spec.time!r} has negative entries")

    columns, names, meta_cov = [], [], []
    for cov in spec.covariates:
        if cov.column not in df.columns:
            raise InputError(f"missing covariate column {cov.column!r}")
        if cov.transform == "dummy":
            values = df[cov.column].astype(str)
            levels = sorted(values.unique())
            if str(cov.reference) not in levels:
                raise InputError(
                    f"reference level {cov.reference!r} not found in "
                    f"{cov.column!r} (levels: {levels})"
                )
            for level in levels:
                if level == str(cov.reference):
                    continue
                columns.append((values == level).to_numpy(dtype=float))
                names.append(f"{cov.name or cov.column}:{level}")
            meta_cov.append(
                {"column": cov.column, "transform": "dummy",
                 "reference": str(cov.reference), "levels": levels}
            )
        else:
            raw = _coerce_numeric(df, cov.column).to_numpy()
            if cov.transform == "standardize":
                mean, sd = float(raw.mean()), float(raw.std(ddof=0))
                if sd == 0:
                    raise InputError(f"cannot standardize constant column {cov.column!r}")
                columns.append((raw - mean) / sd)
                meta_cov.append(
                    {"column": cov.column, "transform": "standardize",
                     "mean": mean, "sd": sd}
                )
            else:
                columns.append(raw)
                meta_cov.append({"column": cov.column, "transform": "identity"})
            names.append(cov.name or cov.column)
    if not columns:
        raise InputError("dataset spec declares no covariates")
    z = np.column_stack(columns)

    sample = SurvivalSample(times, status, z, tau=tau)
    partition = None
    if spec.partition is not None:
        partition = _build_partition(spec.partition, df, sample)
    meta = {
        "n": sample.n,
        "events": int(sample.status.sum()),
        "tau": sample.tau,
        "covariates": names,
        "encoding": meta_cov,
        "source": str(path),
        "filter": spec.filter,
    }
    return sample, partition, meta


def _build_partition(pspec: PartitionSpec, df: pd.DataFrame,
                     sample: SurvivalSample) -> Partition:
    if pspec.by not in df.columns:
        raise InputError(f"partition column {pspec.by!r} not in data")
    if pspec.thresholds:
        raw = _coerce_numeric(df, pspec.by).to_numpy()[sample.order]
        cuts = [-np.inf] + list(pspec.thresholds) + [np.inf]
        masks, labels = [], []
        for i in range(len(cuts) - 1):
            masks.append((raw >= cuts[i]) & (raw < cuts[i + 1]))
            if pspec.labels and i < len(pspec.labels):
                labels.append(pspec.labels[i])
            elif i == 0:
                labels.append(f"{pspec.by}<{cuts[1]:g}")
            elif i == len(cuts) - 2:
                labels.append(f"{pspec.by}>={cuts[i]:g}")
            else:
                labels.append(f"{cuts[i]:g}<={pspec.by}<{cuts[i+1]:g}")
    else:
        values = df[pspec.by].astype(str).to_numpy()[sample.order]
        levels = sorted(set(values))
        labels = list(pspec.labels) if pspec.labels else levels
        if len(labels) != len(levels):
            raise InputError("partition labels must match the number of levels")
        masks = [values == lev for lev in levels]
    return Partition(labels, masks, n_total=sample.n)


# -- serialization --------------------------------------------------------


def write_manifest(path, command: str, config: RunConfig, dataset: dict | None,
                   outputs: list, warnings_seen: list) -> None:
    """Write the reproduction manifest next to a command's outputs."""
    import quantsurv

    config_dict = asdict(config)
    config_dict.pop("workers", None)  # execution detail; outputs do not depend on it
    manifest = {
        "command": command,
        "config": config_dict,
        "dataset": dataset,
        "outputs": sorted(outputs),
        "warnings": list(warnings_seen),
        "versions": {
            "quantsurv": quantsurv.__version__,
            "numpy": np.__version__,
            "pandas": pd.__version__,
        },
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def coefficient_table(names, fit) -> pd.DataFrame:
    """Wald coefficient table with two-sided normal p-values."""
    from scipy.stats import norm

    theta = fit.theta
    se = fit.se
    with np.errstate(divide="ignore", invalid="ignore"):
        zval = theta / se
        pval = 2.0 * norm.sf(np.abs(zval))
    return pd.DataFrame(
        {"term": list(names), "estimate": theta, "se": se, "z": zval,
         "p_value": pval}
    )


def quantile_frame(curves_list) -> pd.DataFrame:
    """Long-format quantile output: one row per (group, p)."""
    rows = []
    for qc in curves_list:
        for i, p in enumerate(qc.p):
            rows.append(
                {
                    "group": qc.label,
                    "p": float(p),
                    "estimate": float(qc.q[i]),
                    "lower": float(qc.lower[i]),
                    "upper": float(qc.upper[i]),
                    "out_of_range": bool(qc.out_of_range[i]),
                    "clipped_upper": bool(qc.clipped_upper[i]),
                }
            )
    return pd.DataFrame(rows)


def parse_quantile_frame(df: pd.DataFrame):
    """Rebuild per-group quantile curves from a serialized frame."""
    from .quantiles import QuantileCurve

    out = []
    for label, sub in df.groupby("group", sort=False):
        out.append(
            QuantileCurve(
                label=str(label),
                p=sub["p"].to_numpy(),
                q=sub["estimate"].to_numpy(),
                lower=sub["lower"].to_numpy(),
                upper=sub["upper"].to_numpy(),
                l_hat=sub["estimate"].to_numpy(),
                u_hat=sub["estimate"].to_numpy(),
                out_of_range=sub["out_of_range"].to_numpy(dtype=bool),
                clipped_upper=sub["clipped_upper"].to_numpy(dtype=bool),
            )
        )
    return out


def load_config(path_or_name) -> tuple[DatasetSpec, dict]:
    """Load a dataset spec (packaged name or JSON path) plus raw extras."""
    name = str(path_or_name)
    if name in PACKAGED_CONFIGS:
        path = packaged_path("config", name)
    else:
        path = Path(name)
        if not path.exists():
            raise InputError(f"config file not found: {name}")
    with open(path) as fh:
        raw = json.load(fh)
    return DatasetSpec.from_dict(raw), raw

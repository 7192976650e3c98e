"""Panel data containers, long-format ingestion and design splitting.

A dataset is a collection of subject panels observed at times ``1..S_i``
where ``S_i`` is the dropout time (``S_i == T`` for completers).  Input files
are long format, one row per subject-time, comma- or tab-delimited.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

CHAIN_VARIANTS = ("parametric", "saturated")


class DataError(ValueError):
    """Raised for malformed panel input (missing columns, gaps, bad responses)."""


@dataclass(frozen=True, eq=False)
class SubjectPanel:
    """Observed sequence of one subject up to its dropout time.

    Parameters
    ----------
    subject_id : str
        Opaque identifier.
    responses : ndarray of shape (S_i,)
        Binary outcomes.
    x1 : ndarray of shape (S_i, p1)
        Covariates with effects shared across latent states.
    x2 : ndarray of shape (S_i, p2)
        Covariates with state-specific effects (intercept first, if any).
    dropout_time : int
        Number of observed occasions ``S_i``.
    """

    subject_id: str
    responses: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    dropout_time: int

    def __post_init__(self):
        y = np.asarray(self.responses, dtype=float)
        x1 = np.asarray(self.x1, dtype=float).reshape(len(y), -1)
        x2 = np.asarray(self.x2, dtype=float).reshape(len(y), -1)
        for arr in (y, x1, x2):
            arr.setflags(write=False)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "dropout_time", int(self.dropout_time))
        if self.dropout_time < 1:
            raise DataError(f"subject {self.subject_id}: dropout time must be >= 1")
        if len(y) != self.dropout_time:
            raise DataError(
                f"subject {self.subject_id}: {len(y)} responses but dropout time {self.dropout_time}"
            )
        if not np.all((y == 0) | (y == 1)):
            raise DataError(f"subject {self.subject_id}: responses must be 0/1")

    def __eq__(self, other):
        if not isinstance(other, SubjectPanel):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.dropout_time == other.dropout_time
            and np.array_equal(self.responses, other.responses)
            and np.array_equal(self.x1, other.x1)
            and np.array_equal(self.x2, other.x2)
        )

    __hash__ = None


@dataclass(frozen=True)
class PanelArrays:
    """Time-padded array view of a dataset, shared by the numerical engine."""

    y: np.ndarray  # (n, T)
    x1: np.ndarray  # (n, T, p1)
    x2: np.ndarray  # (n, T, p2)
    mask: np.ndarray  # (n, T) observed
    lengths: np.ndarray  # (n,)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of subject panels.

    ``fixed_names`` and ``state_names`` label the raw covariate columns; when
    ``random_intercept`` is set the first column of every ``x2`` is a
    constant one that is not written back to files.
    """

    panels: tuple
    horizon: int
    p1: int
    p2: int
    fixed_names: tuple = ()
    state_names: tuple = ()
    random_intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "panels", tuple(self.panels))
        if not self.panels:
            raise DataError("dataset needs at least one subject")
        for p in self.panels:
            if p.dropout_time > self.horizon:
                raise DataError(
                    f"subject {p.subject_id}: dropout time {p.dropout_time} exceeds horizon {self.horizon}"
                )
            if p.x1.shape[1] != self.p1 or p.x2.shape[1] != self.p2:
                raise DataError(f"subject {p.subject_id}: covariate dimensions do not match dataset")

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.p1 == other.p1
            and self.p2 == other.p2
            and tuple(self.fixed_names) == tuple(other.fixed_names)
            and tuple(self.state_names) == tuple(other.state_names)
            and self.random_intercept == other.random_intercept
            and len(self.panels) == len(other.panels)
            and all(a == b for a, b in zip(self.panels, other.panels))
        )

    __hash__ = None

    def __len__(self):
        return len(self.panels)

    @property
    def n(self) -> int:
        return len(self.panels)

    @cached_property
    def dropout_times(self) -> np.ndarray:
        s = np.array([p.dropout_time for p in self.panels], dtype=int)
        s.setflags(write=False)
        return s

    @property
    def n_observations(self) -> int:
        return int(self.dropout_times.sum())

    @property
    def x1_names(self) -> tuple:
        return tuple(self.fixed_names)

    @property
    def x2_names(self) -> tuple:
        names = tuple(self.state_names)
        return ("(intercept)",) + names if self.random_intercept else names

    @cached_property
    def arrays(self) -> PanelArrays:
        n, T = self.n, self.horizon
        y = np.zeros((n, T))
        x1 = np.zeros((n, T, self.p1))
        x2 = np.zeros((n, T, self.p2))
        mask = np.zeros((n, T), dtype=bool)
        for i, p in enumerate(self.panels):
            s = p.dropout_time
            y[i, :s] = p.responses
            x1[i, :s] = p.x1
            x2[i, :s] = p.x2
            mask[i, :s] = True
        lengths = self.dropout_times.copy()
        for arr in (y, x1, x2, mask, lengths):
            arr.setflags(write=False)
        return PanelArrays(y=y, x1=x1, x2=x2, mask=mask, lengths=lengths)

    @cached_property
    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Observed ``(y, x1, x2)`` stacked subject-major, time-minor."""
        a = self.arrays
        out = (a.y[a.mask], a.x1[a.mask], a.x2[a.mask])
        for arr in out:
            arr.setflags(write=False)
        return out

    def subset(self, index: Sequence[int]) -> "Dataset":
        """Dataset made of the panels at ``index`` (repeats allowed)."""
        return Dataset(
            panels=tuple(self.panels[i] for i in index),
            horizon=self.horizon,
            p1=self.p1,
            p2=self.p2,
            fixed_names=self.fixed_names,
            state_names=self.state_names,
            random_intercept=self.random_intercept,
        )

    def with_responses(self, responses: Sequence[np.ndarray]) -> "Dataset":
        """Copy of the dataset with each panel's responses replaced."""
        panels = tuple(
            SubjectPanel(p.subject_id, r, p.x1, p.x2, p.dropout_time)
            for p, r in zip(self.panels, responses)
        )
        return Dataset(
            panels=panels,
            horizon=self.horizon,
            p1=self.p1,
            p2=self.p2,
            fixed_names=self.fixed_names,
            state_names=self.state_names,
            random_intercept=self.random_intercept,
        )


@dataclass(frozen=True)
class ModelConfig:
    """Model structure: number of states, chain variant and covariate roles."""

    n_states: int = 2
    chain_variant: str = "parametric"
    fixed_columns: tuple = ()
    state_columns: tuple = ()
    random_intercept: bool = True
    horizon: int | None = None
    subject_column: str = "subject_id"
    time_column: str = "time"
    response_column: str = "response"
    response_family: str = field(default="bernoulli-logit", init=False)

    def __post_init__(self):
        object.__setattr__(self, "fixed_columns", tuple(self.fixed_columns))
        object.__setattr__(self, "state_columns", tuple(self.state_columns))
        if int(self.n_states) < 1:
            raise ValueError("n_states must be >= 1")
        object.__setattr__(self, "n_states", int(self.n_states))
        if self.chain_variant not in CHAIN_VARIANTS:
            raise ValueError(f"chain_variant must be one of {CHAIN_VARIANTS}")
        overlap = set(self.fixed_columns) & set(self.state_columns)
        if overlap:
            raise ValueError(f"columns both fixed and state-specific: {sorted(overlap)}")
        if self.horizon is not None and int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def p1(self) -> int:
        return len(self.fixed_columns)

    @property
    def p2(self) -> int:
        return len(self.state_columns) + int(self.random_intercept)

    def replace(self, **changes) -> "ModelConfig":
        kwargs = {k: getattr(self, k) for k in (
            "n_states", "chain_variant", "fixed_columns", "state_columns",
            "random_intercept", "horizon", "subject_column", "time_column", "response_column",
        )}
        kwargs.update(changes)
        return ModelConfig(**kwargs)


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_list(value: str) -> tuple:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def read_key_values(path) -> dict:
    """Read a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_key_values(path, items: Mapping | Iterable) -> None:
    pairs = items.items() if isinstance(items, Mapping) else items
    with open(path, "w") as fh:
        for key, value in pairs:
            if isinstance(value, float):
                value = repr(value)
            elif isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key} = {value}\n")


def load_config(path) -> ModelConfig:
    """Parse a model configuration file."""
    kv = read_key_values(path)
    known = {
        "n_states": int,
        "chain_variant": str,
        "fixed_columns": _parse_list,
        "state_columns": _parse_list,
        "random_intercept": _parse_bool,
        "horizon": int,
        "subject_column": str,
        "time_column": str,
        "response_column": str,
    }
    unknown = set(kv) - set(known)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ModelConfig(**{k: known[k](v) for k, v in kv.items()})


def save_config(path, config: ModelConfig) -> None:
    items = [
        ("n_states", config.n_states),
        ("chain_variant", config.chain_variant),
        ("fixed_columns", config.fixed_columns),
        ("state_columns", config.state_columns),
        ("random_intercept", str(config.random_intercept).lower()),
    ]
    if config.horizon is not None:
        items.append(("horizon", config.horizon))
    write_key_values(path, items)


def derive_dropout(indicators: Sequence[int]) -> int:
    """Dropout time ``T - sum(R)`` from monotone missingness indicators.

    >>> derive_dropout([0, 0, 0, 1, 1])
    3
    """
    r = [int(v) for v in indicators]
    if any(v not in (0, 1) for v in r):
        raise DataError("missingness indicators must be 0/1")
    seen_missing = False
    for v in r:
        if v == 1:
            seen_missing = True
        elif seen_missing:
            raise DataError("non-monotone missingness pattern")
    return len(r) - sum(r)


def dropout_indicators(dropout_time: int, horizon: int) -> np.ndarray:
    """Inverse of :func:`derive_dropout`."""
    if not 1 <= dropout_time <= horizon:
        raise DataError("dropout time outside 1..horizon")
    r = np.zeros(horizon, dtype=int)
    r[dropout_time:] = 1
    return r


def split_design(row: Mapping[str, float], config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Split one row of covariates into fixed-effect and state-effect vectors."""
    try:
        x1 = [float(row[c]) for c in config.fixed_columns]
        x2 = [float(row[c]) for c in config.state_columns]
    except KeyError as exc:
        raise DataError(f"unknown column {exc.args[0]!r}") from None
    if config.random_intercept:
        x2 = [1.0] + x2
    return np.array(x1, dtype=float), np.array(x2, dtype=float)


def _id_key(sid: str):
    return (0, int(sid), "") if sid.isdigit() else (1, 0, sid)


def load_dataset(path, config: ModelConfig) -> Dataset:
    """Read a long-format panel file.

    Rows need the subject, time and response columns named in ``config``
    plus every configured covariate.  Times must run ``1..S_i`` without gaps.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        header = fh.readline()
        delimiter = "\t" if "\t" in header else ","
        fh.seek(0)
        reader = csv.DictReader(fh, delimiter=delimiter)
        columns = [c.strip() for c in (reader.fieldnames or [])]
        reader.fieldnames = columns
        required = [config.subject_column, config.time_column, config.response_column]
        required += list(config.fixed_columns) + list(config.state_columns)
        missing = [c for c in required if c not in columns]
        if missing:
            raise DataError(f"missing column(s): {', '.join(missing)}")

        rows: dict[str, dict[int, tuple]] = {}
        for lineno, rec in enumerate(reader, 2):
            sid = rec[config.subject_column].strip()
            try:
                t = int(float(rec[config.time_column]))
                yv = float(rec[config.response_column])
            except (TypeError, ValueError):
                raise DataError(f"line {lineno}: unparsable time or response") from None
            if yv not in (0.0, 1.0):
                raise DataError(f"line {lineno}: non-binary response {rec[config.response_column]!r}")
            x1, x2 = split_design(rec, config)
            per = rows.setdefault(sid, {})
            if t in per:
                raise DataError(f"duplicate (subject, time) = ({sid}, {t})")
            per[t] = (yv, x1, x2)

    if not rows:
        raise DataError("no data rows")
    panels = []
    for sid in sorted(rows, key=_id_key):
        per = rows[sid]
        times = sorted(per)
        if times != list(range(1, len(times) + 1)):
            raise DataError(f"subject {sid}: non-monotone/gapped pattern, times {times}")
        panels.append(
            SubjectPanel(
                subject_id=sid,
                responses=np.array([per[t][0] for t in times]),
                x1=np.array([per[t][1] for t in times]).reshape(len(times), config.p1),
                x2=np.array([per[t][2] for t in times]).reshape(len(times), config.p2),
                dropout_time=len(times),
            )
        )
    max_t = max(p.dropout_time for p in panels)
    horizon = config.horizon if config.horizon is not None else max_t
    return Dataset(
        panels=tuple(panels),
        horizon=horizon,
        p1=config.p1,
        p2=config.p2,
        fixed_names=config.fixed_columns,
        state_names=config.state_columns,
        random_intercept=config.random_intercept,
    )


def write_dataset(path, data: Dataset, delimiter: str = ",") -> None:
    """Write ``data`` in the long format read by :func:`load_dataset`."""
    offset = 1 if data.random_intercept else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["subject_id", "time", "response", *data.fixed_names, *data.state_names])
        for p in data.panels:
            for t in range(p.dropout_time):
                w.writerow(
                    [p.subject_id, t + 1, int(p.responses[t])]
                    + [repr(float(v)) for v in p.x1[t]]
                    + [repr(float(v)) for v in p.x2[t, offset:]]
                )


def dataset_config(data: Dataset, n_states: int = 2, chain_variant: str = "parametric") -> ModelConfig:
    """Config that reloads ``data`` from the file written by :func:`write_dataset`."""
    return ModelConfig(
        n_states=n_states,
        chain_variant=chain_variant,
        fixed_columns=data.fixed_names,
        state_columns=data.state_names,
        random_intercept=data.random_intercept,
        horizon=data.horizon,
    )


def dropout_counts(data: Dataset) -> np.ndarray:
    """Number of subjects with ``S_i == t`` for ``t = 1..T``."""
    return np.bincount(data.dropout_times, minlength=data.horizon + 1)[1:]

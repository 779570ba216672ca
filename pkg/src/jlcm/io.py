"""CSV ingestion and emission.

Datasets are stored in long format: one row per visit, with the survival
outcome, hazard covariates and covariance design repeated on every row of
a subject.  A :class:`SchemaConfig` maps the logical roles to column names
and declares the 0/1 coding of categorical columns.  The token ``"1"`` in a
covariate list stands for a constant column.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import Dataset, ParameterSet, ValidationError
from .mcmc.chain import PARAM_FIELDS, ChainOutput

INTERCEPT = "1"

_ROLE_ATTR = {"membership": "X1", "fixed": "X2", "random": "Z",
              "hazard": "X3", "cov_a": "A", "cov_b": "B"}
_PER_SUBJECT = ("hazard", "cov_a", "cov_b")


@dataclass(frozen=True)
class SchemaConfig:
    """Column roles of a long-format CSV.

    Defaults follow the layout of the classic AIDS trial data (CD4 counts
    with ddC/ddI treatment), which is also what simulated datasets use
    apart from the covariate names.
    """

    id: str = "patient"
    time: str = "Time"
    event: str = "death"
    response: str = "CD4"
    obstime: str = "obstime"
    membership: tuple = ("gender", "obstime")
    fixed: tuple = ("gender", "obstime")
    random: tuple = (INTERCEPT, "obstime")
    hazard: tuple = ("drug",)
    cov_a: tuple = (INTERCEPT, "drug")
    cov_b: tuple = (INTERCEPT, "drug")
    codings: dict = field(default_factory=lambda: {
        "gender": {"female": 0, "male": 1},
        "prevOI": {"noAIDS": 0, "AIDS": 1},
        "AZT": {"intolerance": 0, "failure": 1},
        "drug": {"ddC": 0, "ddI": 1},
    })

    def roles(self) -> dict:
        return {r: list(getattr(self, r)) for r in _ROLE_ATTR}

    def columns(self) -> list:
        cols = [self.id, self.obstime, self.response, self.time, self.event]
        for names in self.roles().values():
            cols += [c for c in names if c != INTERCEPT]
        return list(dict.fromkeys(cols))


def simulation_schema() -> SchemaConfig:
    """Schema of files written for simulated datasets."""
    return SchemaConfig(
        id="id", time="time", event="event", response="y", obstime="obstime",
        membership=("X1", "obstime"), fixed=("X1", "obstime"), random=(INTERCEPT, "obstime"),
        hazard=("X3",), cov_a=(INTERCEPT, "X3"), cov_b=(INTERCEPT, "X3"), codings={})


# -- loading -------------------------------------------------------------------------

def _encode(frame: pd.DataFrame, schema: SchemaConfig, problems: list) -> pd.DataFrame:
    out = frame.copy()
    for col, coding in schema.codings.items():
        if col not in out.columns:
            continue
        raw = out[col]
        keys = {str(k): v for k, v in coding.items()}
        mapped = raw.astype(str).map(keys)
        bad = mapped.isna()
        for sid in pd.unique(out.loc[bad, schema.id]):
            levels = sorted(set(raw[bad & (out[schema.id] == sid)].astype(str)))
            problems.append(f"subject {sid}: unknown level(s) {levels} in column {col}")
        out[col] = mapped
    return out


def _to_float(v):
    # float() parses decimal strings exactly (round trip of repr output)
    try:
        return float(v)
    except (TypeError, ValueError):
        return np.nan


def _numeric(frame: pd.DataFrame, col: str, schema: SchemaConfig, problems: list, what: str):
    values = frame[col].map(_to_float).astype(float)
    bad = values.isna() & frame[col].notna()
    for sid in pd.unique(frame.loc[bad, schema.id]):
        problems.append(f"subject {sid}: non-numeric {what} in column {col}")
    missing = frame[col].isna()
    for sid in pd.unique(frame.loc[missing, schema.id]):
        problems.append(f"subject {sid}: missing {what} in column {col}")
    return values


def load_dataset(path, schema: SchemaConfig | None = None) -> Dataset:
    """Read a long-format CSV into a :class:`Dataset`.

    Rows are grouped by subject in order of first appearance and sorted by
    visit time.  Subject-level columns must agree across a subject's rows.

    Raises
    ------
    ValidationError
        Listing every problem found, each naming the offending subject or
        column.
    """
    schema = schema or SchemaConfig()
    frame = pd.read_csv(path, dtype=str, keep_default_na=True)
    missing = [c for c in schema.columns() if c not in frame.columns]
    if missing:
        raise ValidationError([f"missing column {c}" for c in missing])
    if frame.empty:
        raise ValidationError(["dataset has no rows"])
    frame[schema.id] = frame[schema.id].astype(str)
    problems: list = []
    frame = _encode(frame, schema, problems)
    numeric = {}
    for col in schema.columns():
        if col == schema.id:
            continue
        what = "response" if col == schema.response else "value"
        numeric[col] = _numeric(frame, col, schema, problems, what)
    if problems:
        raise ValidationError(problems)
    for col, values in numeric.items():
        frame[col] = values.astype(float)

    order = {sid: i for i, sid in enumerate(pd.unique(frame[schema.id]))}
    frame["_subject"] = frame[schema.id].map(order)
    frame = frame.sort_values(["_subject", schema.obstime], kind="stable").reset_index(drop=True)

    subj_cols = [schema.time, schema.event] + [
        c for r in _PER_SUBJECT for c in getattr(schema, r) if c != INTERCEPT]
    first = frame.groupby("_subject", sort=True).first()
    ids = list(order)
    for col in dict.fromkeys(subj_cols):
        varies = frame.groupby("_subject")[col].nunique(dropna=False) > 1
        for s in np.flatnonzero(varies.to_numpy()):
            problems.append(f"subject {ids[s]}: column {col} differs between rows of the same subject")
    if problems:
        raise ValidationError(problems)

    def design(rows: pd.DataFrame, names):
        cols = [np.ones(len(rows)) if c == INTERCEPT else rows[c].to_numpy(float) for c in names]
        return np.column_stack(cols) if cols else np.zeros((len(rows), 0))

    roles = schema.roles()
    data = Dataset(
        subject_ids=np.array(list(order), dtype=object),
        obs_subject=frame["_subject"].to_numpy(np.int64),
        obs_time=frame[schema.obstime].to_numpy(float),
        y=frame[schema.response].to_numpy(float),
        X1=design(frame, roles["membership"]),
        X2=design(frame, roles["fixed"]),
        Z=design(frame, roles["random"]),
        followup=first[schema.time].to_numpy(float),
        event=first[schema.event].to_numpy(float).astype(np.int64),
        X3=design(first, roles["hazard"]),
        A=design(first, roles["cov_a"]),
        B=design(first, roles["cov_b"]),
        covariate_names={_ROLE_ATTR[r]: names for r, names in roles.items()},
    )
    problems = data.check()
    if problems:
        raise ValidationError(problems)
    return data


# -- writing -------------------------------------------------------------------------

def _write_csv(frame: pd.DataFrame, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")


def dataset_frame(data: Dataset, schema: SchemaConfig | None = None) -> pd.DataFrame:
    """Long-format frame of ``data`` under ``schema`` (categories decoded)."""
    schema = schema or SchemaConfig()
    roles = schema.roles()
    n = data.n_obs
    subj = data.obs_subject
    cols = {schema.id: data.subject_ids[subj], schema.obstime: data.obs_time,
            schema.response: data.y}
    for role, names in roles.items():
        mat = getattr(data, _ROLE_ATTR[role])
        for j, name in enumerate(names):
            if name == INTERCEPT or name in cols:
                continue
            col = mat[:, j]
            cols[name] = col[subj] if role in _PER_SUBJECT else col
    cols[schema.time] = data.followup[subj]
    cols[schema.event] = data.event[subj]
    frame = pd.DataFrame(cols)
    for col, coding in schema.codings.items():
        if col in frame.columns:
            inverse = {v: k for k, v in coding.items()}
            frame[col] = frame[col].map(lambda v: inverse[int(v)])
    assert len(frame) == n
    return frame[[c for c in schema.columns() if c in frame.columns]]


def write_dataset(data: Dataset, path, schema: SchemaConfig | None = None):
    _write_csv(dataset_frame(data, schema), path)


def write_truth(data: Dataset, path):
    """Generating labels (1-based) per visit and W per subject."""
    if data.true_classes is None or data.true_W is None:
        raise ValueError("dataset carries no ground truth")
    subj = data.obs_subject
    cols = {"subject_id": data.subject_ids[subj], "visit": data.visit_index,
            "true_class": data.true_classes + 1}
    for g in range(data.true_W.shape[1]):
        cols[f"W{g + 1}"] = data.true_W[subj, g]
    _write_csv(pd.DataFrame(cols), path)


def read_truth(path, data: Dataset) -> np.ndarray:
    """0-based true labels aligned with the observations of ``data``."""
    frame = pd.read_csv(path, dtype={"subject_id": str})
    index = {str(s): i for i, s in enumerate(data.subject_ids)}
    key = pd.Series([index.get(s, -1) for s in frame["subject_id"]])
    if (key < 0).any():
        raise ValidationError([f"truth file names unknown subject {s}"
                               for s in frame["subject_id"][key < 0]])
    labels = np.full(data.n_obs, -1)
    key = key.to_numpy()
    visit = frame["visit"].to_numpy() - 1
    if np.any((visit < 0) | (visit >= data.visits_per_subject[key])):
        raise ValidationError(["truth file has visit numbers outside the dataset"])
    rows = data.offsets[key] + visit
    labels[rows] = frame["true_class"].to_numpy() - 1
    if (labels < 0).any():
        raise ValidationError(["truth file does not cover every visit"])
    return labels


# -- chains and summaries ----------------------------------------------------------------

def _param_columns(field_name, shape):
    if field_name in ParameterSet.CLASS_FIELDS:
        if len(shape) == 1:
            return [f"{field_name}[{k + 1}]" for k in range(shape[0])]
        return [f"{field_name}[{k + 1},{j + 1}]" for k in range(shape[0]) for j in range(shape[1])]
    return [f"{field_name}[{j + 1}]" for j in range(shape[0])]


def write_chain(chain: ChainOutput, outdir):
    """One CSV per parameter group plus labels, random effects and diagnostics."""
    for f in PARAM_FIELDS:
        v = chain.draws[f]
        frame = pd.DataFrame(v.reshape(v.shape[0], -1), columns=_param_columns(f, v.shape[1:]))
        frame.insert(0, "iteration", chain.iterations)
        _write_csv(frame, os.path.join(outdir, "draws", f"{f}.csv"))
    acc = pd.DataFrame(
        [(name, rates[0], rates[1]) for name, rates in chain.acceptance.items()],
        columns=["block", "acceptance_overall", "acceptance_post_burn_in"])
    _write_csv(acc, os.path.join(outdir, "acceptance.csv"))
    _write_csv(pd.DataFrame({"iteration": np.arange(1, len(chain.loglik) + 1),
                             "loglik": chain.loglik}),
               os.path.join(outdir, "loglik.csv"))


def read_parameter_draws(outdir) -> dict:
    """Parameter draws written by :func:`write_chain` as arrays (S, ...)."""
    draws = {}
    for f in PARAM_FIELDS:
        frame = pd.read_csv(os.path.join(outdir, "draws", f"{f}.csv"), float_precision="round_trip")
        cols = [c for c in frame.columns if c != "iteration"]
        values = frame[cols].to_numpy(float)
        if f in ParameterSet.CLASS_FIELDS:
            idx = [tuple(int(x) for x in re.search(r"\[(.*)\]", c).group(1).split(",")) for c in cols]
            K = max(i[0] for i in idx)
            values = values.reshape(len(frame), K, -1)
            if len(idx[0]) == 1:
                values = values[:, :, 0]
        draws[f] = values
    return draws


def write_summary(summary: pd.DataFrame, path):
    _write_csv(summary, path)


def write_random_effects(data: Dataset, W: np.ndarray, path):
    frame = pd.DataFrame(W, columns=[f"W{g + 1}" for g in range(W.shape[1])])
    frame.insert(0, "subject_id", data.subject_ids)
    _write_csv(frame, path)


def read_random_effects(path, data: Dataset) -> np.ndarray:
    frame = pd.read_csv(path, dtype={"subject_id": str}, float_precision="round_trip")
    if list(frame["subject_id"]) != [str(s) for s in data.subject_ids]:
        raise ValidationError(["random-effects file does not match the dataset subjects"])
    return frame.drop(columns="subject_id").to_numpy(float)


def write_membership(data: Dataset, probs, modal, path, chain_modal=None):
    cols = {"subject_id": data.subject_ids[data.obs_subject], "visit": data.visit_index}
    for k in range(probs.shape[1]):
        cols[f"p_class{k + 1}"] = probs[:, k]
    cols["modal_class"] = np.asarray(modal) + 1
    if chain_modal is not None:
        cols["chain_modal_class"] = np.asarray(chain_modal) + 1
    _write_csv(pd.DataFrame(cols), path)


def write_frame(frame: pd.DataFrame, path):
    _write_csv(frame, path)

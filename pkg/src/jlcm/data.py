"""Domain types for joint longitudinal/survival data and model parameters.

A :class:`Dataset` is stored in long (one row per visit) form as flat numpy
arrays grouped by subject, which is what the likelihood and sampler code
consume.  Per-subject record types are provided for construction and for
inspection of single subjects.

Class labels are 0-based everywhere in memory; files written by
:mod:`jlcm.io` use 1-based labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when data or parameters violate a model invariant.

    ``problems`` holds one message per violation.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class LongitudinalObservation:
    subject_id: object
    visit: int
    obs_time: float
    y: float
    x1: np.ndarray
    x2: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class SurvivalOutcome:
    subject_id: object
    followup_time: float
    event: int
    x3: np.ndarray


@dataclass(frozen=True)
class CovarianceDesign:
    """Subject-level covariates of the covariance regression.

    ``A`` drives the autoregressive coefficients and ``B`` the log innovation
    variances.  Both are shared across the (g, l) entries of a subject.
    """

    A: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class Subject:
    observations: Sequence[LongitudinalObservation]
    outcome: SurvivalOutcome
    design: CovarianceDesign


def _as2d(rows, width=None):
    arr = np.asarray(rows, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if width in (None, 1) else arr.reshape(-1, width)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Long-format dataset.

    Attributes
    ----------
    subject_ids : ndarray (N,)
        External identifiers, in subject order.
    obs_subject : ndarray of int (n,)
        Subject index of every observation; nondecreasing.
    obs_time, y : ndarray (n,)
    X1, X2, Z : ndarray (n, p1), (n, p2), (n, q)
        Membership, fixed-effect and random-effect covariates per visit.
    followup, event : ndarray (N,)
    X3 : ndarray (N, p3)
        Hazard covariates (baseline).
    A, B : ndarray (N, n_alpha1), (N, n_alpha2)
        Covariance regression designs.
    true_classes : ndarray of int (n,), optional
        0-based generating labels (simulation only).
    """

    subject_ids: np.ndarray
    obs_subject: np.ndarray
    obs_time: np.ndarray
    y: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    Z: np.ndarray
    followup: np.ndarray
    event: np.ndarray
    X3: np.ndarray
    A: np.ndarray
    B: np.ndarray
    true_classes: Optional[np.ndarray] = None
    true_W: Optional[np.ndarray] = None
    covariate_names: dict = field(default_factory=dict)

    def __post_init__(self):
        counts = np.bincount(self.obs_subject, minlength=self.n_subjects)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        object.__setattr__(self, "_counts", counts)
        object.__setattr__(self, "_offsets", offsets)
        for name in ("obs_time", "y", "X1", "X2", "Z", "followup", "event",
                     "X3", "A", "B"):
            getattr(self, name).setflags(write=False)

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_obs(self) -> int:
        return len(self.y)

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    @property
    def visits_per_subject(self) -> np.ndarray:
        return self._counts

    @property
    def offsets(self) -> np.ndarray:
        return self._offsets

    @property
    def last_obs(self) -> np.ndarray:
        """Index of every subject's final observation."""
        return self._offsets[1:] - 1

    @property
    def visit_index(self) -> np.ndarray:
        """1-based visit number of each observation."""
        return np.arange(self.n_obs) - self._offsets[self.obs_subject] + 1

    @property
    def is_last(self) -> np.ndarray:
        mask = np.zeros(self.n_obs, dtype=bool)
        mask[self.last_obs] = True
        return mask

    def subject(self, i: int) -> Subject:
        lo, hi = self._offsets[i], self._offsets[i + 1]
        sid = self.subject_ids[i]
        obs = [
            LongitudinalObservation(sid, j - lo + 1, float(self.obs_time[j]),
                                    float(self.y[j]), self.X1[j], self.X2[j],
                                    self.Z[j])
            for j in range(lo, hi)
        ]
        out = SurvivalOutcome(sid, float(self.followup[i]), int(self.event[i]),
                              self.X3[i])
        return Subject(obs, out, CovarianceDesign(self.A[i], self.B[i]))

    def take(self, subjects) -> "Dataset":
        """Sub-dataset restricted to the given subject indices (in order)."""
        subjects = np.asarray(subjects, dtype=int)
        rows = np.concatenate(
            [np.arange(self._offsets[i], self._offsets[i + 1]) for i in subjects]
        ) if len(subjects) else np.zeros(0, dtype=int)
        new_index = np.repeat(np.arange(len(subjects)), self._counts[subjects])
        return Dataset(
            subject_ids=self.subject_ids[subjects],
            obs_subject=new_index,
            obs_time=self.obs_time[rows].copy(),
            y=self.y[rows].copy(),
            X1=self.X1[rows].copy(),
            X2=self.X2[rows].copy(),
            Z=self.Z[rows].copy(),
            followup=self.followup[subjects].copy(),
            event=self.event[subjects].copy(),
            X3=self.X3[subjects].copy(),
            A=self.A[subjects].copy(),
            B=self.B[subjects].copy(),
            true_classes=None if self.true_classes is None else self.true_classes[rows].copy(),
            true_W=None if self.true_W is None else self.true_W[subjects].copy(),
            covariate_names=self.covariate_names,
        )

    def with_design(self, A, B) -> "Dataset":
        """Same data with a different covariance design."""
        A = _as2d(A)
        B = _as2d(B)
        return replace(self, A=A.copy(), B=B.copy())

    def intercept_only(self) -> "Dataset":
        """Homogeneous random-effects variant (A = B = (1))."""
        ones = np.ones((self.n_subjects, 1))
        names = dict(self.covariate_names)
        names["A"] = ["1"]
        names["B"] = ["1"]
        return replace(self.with_design(ones, ones), covariate_names=names)

    @classmethod
    def from_subjects(cls, subjects: Sequence[Subject], true_classes=None) -> "Dataset":
        if not subjects:
            raise ValidationError("dataset has no subjects")
        ids, obs_subject, rows = [], [], []
        for i, s in enumerate(subjects):
            if not s.observations:
                raise ValidationError(f"subject {s.outcome.subject_id}: no observations")
            ids.append(s.outcome.subject_id)
            for o in s.observations:
                obs_subject.append(i)
                rows.append(o)
        return cls(
            subject_ids=np.asarray(ids, dtype=object),
            obs_subject=np.asarray(obs_subject, dtype=int),
            obs_time=np.array([o.obs_time for o in rows], dtype=float),
            y=np.array([o.y for o in rows], dtype=float),
            X1=np.array([np.atleast_1d(o.x1) for o in rows], dtype=float),
            X2=np.array([np.atleast_1d(o.x2) for o in rows], dtype=float),
            Z=np.array([np.atleast_1d(o.z) for o in rows], dtype=float),
            followup=np.array([s.outcome.followup_time for s in subjects], dtype=float),
            event=np.array([s.outcome.event for s in subjects], dtype=int),
            X3=np.array([np.atleast_1d(s.outcome.x3) for s in subjects], dtype=float),
            A=np.array([np.atleast_1d(s.design.A) for s in subjects], dtype=float),
            B=np.array([np.atleast_1d(s.design.B) for s in subjects], dtype=float),
            true_classes=None if true_classes is None else np.asarray(true_classes, dtype=int),
        )

    def check(self) -> list[str]:
        """Return a list of invariant violations (empty when valid)."""
        problems = []
        n, N = self.n_obs, self.n_subjects
        if N == 0:
            return ["dataset has no subjects"]
        if np.any(np.diff(self.obs_subject) < 0):
            problems.append("observations are not grouped by subject")
        for name in ("X1", "X2", "Z"):
            if getattr(self, name).shape[0] != n:
                problems.append(f"{name} has {getattr(self, name).shape[0]} rows, expected {n}")
        for name in ("X3", "A", "B", "followup", "event"):
            if getattr(self, name).shape[0] != N:
                problems.append(f"{name} has {getattr(self, name).shape[0]} rows, expected {N}")
        if problems:
            return problems
        for name in ("obs_time", "y", "X1", "X2", "Z", "followup", "X3", "A", "B"):
            if not np.all(np.isfinite(getattr(self, name))):
                problems.append(f"non-finite values in {name}")
        empty = np.flatnonzero(self._counts == 0)
        for i in empty:
            problems.append(f"subject {self.subject_ids[i]}: no observations")
        same = self.obs_subject[1:] == self.obs_subject[:-1]
        bad = np.flatnonzero(same & (np.diff(self.obs_time) <= 0))
        for j in np.unique(self.obs_subject[1:][bad]):
            problems.append(f"subject {self.subject_ids[j]}: obs_time not strictly increasing")
        if np.any(self.obs_time < 0):
            problems.append("negative obs_time")
        if not np.all(np.isin(self.event, (0, 1))):
            problems.append("event indicator outside {0,1}")
        nonempty = self._counts > 0
        last_time = np.full(N, -np.inf)
        last_time[nonempty] = self.obs_time[self.last_obs[nonempty]]
        for i in np.flatnonzero(self.followup < last_time):
            problems.append(
                f"subject {self.subject_ids[i]}: followup time {self.followup[i]:g} "
                f"before last observation {last_time[i]:g}")
        for i in np.flatnonzero(self.followup <= 0):
            problems.append(f"subject {self.subject_ids[i]}: nonpositive followup time")
        return problems


@dataclass(frozen=True, eq=False)
class ParameterSet:
    """All class-specific and shared model parameters.

    Class-indexed arrays have the class on axis 0.  ``tau`` is the residual
    *variance* of the longitudinal submodel.
    """

    xi: np.ndarray  # (K, p1)
    beta: np.ndarray  # (K, p2)
    omega: np.ndarray  # (K, p3)
    gamma: np.ndarray  # (K,)
    tau: np.ndarray  # (K,)
    lam0: np.ndarray  # (K,)
    alpha1: np.ndarray  # (n_alpha1,)
    alpha2: np.ndarray  # (n_alpha2,)

    CLASS_FIELDS = ("xi", "beta", "omega", "gamma", "tau", "lam0")
    SHARED_FIELDS = ("alpha1", "alpha2")

    @property
    def K(self) -> int:
        return len(self.tau)

    def permute(self, perm) -> "ParameterSet":
        """Reorder classes so that new class ``k`` is old class ``perm[k]``."""
        perm = np.asarray(perm)
        return replace(self, **{f: getattr(self, f)[perm] for f in self.CLASS_FIELDS})

    def copy(self) -> "ParameterSet":
        return ParameterSet(**{f: np.array(getattr(self, f), dtype=float)
                               for f in self.CLASS_FIELDS + self.SHARED_FIELDS})

    def check(self, data: Optional[Dataset] = None) -> list[str]:
        problems = []
        K = self.K
        if K < 1:
            return ["K must be at least 1"]
        for f in self.CLASS_FIELDS:
            if np.shape(getattr(self, f))[0] != K:
                problems.append(f"{f} has {np.shape(getattr(self, f))[0]} classes, expected {K}")
        for f in self.CLASS_FIELDS + self.SHARED_FIELDS:
            if not np.all(np.isfinite(getattr(self, f))):
                problems.append(f"non-finite entries in {f}")
        if np.any(np.asarray(self.tau) <= 0):
            problems.append("nonpositive variance tau")
        if np.any(np.asarray(self.lam0) <= 0):
            problems.append("nonpositive baseline hazard scale lam0")
        if data is not None:
            dims = (("xi", self.xi.shape[-1], data.X1.shape[1]),
                    ("beta", self.beta.shape[-1], data.X2.shape[1]),
                    ("omega", self.omega.shape[-1], data.X3.shape[1]),
                    ("alpha1", len(self.alpha1), data.A.shape[1]),
                    ("alpha2", len(self.alpha2), data.B.shape[1]))
            for name, got, want in dims:
                if got != want:
                    problems.append(f"dimension mismatch: {name} has length {got}, design has {want}")
        return problems


@dataclass(frozen=True, eq=False)
class LatentState:
    """Class labels per visit (0-based) and random effects W = (U, upsilon)."""

    R: np.ndarray  # (n,)
    W: np.ndarray  # (N, q+1)

    @property
    def U(self) -> np.ndarray:
        return self.W[:, :-1]

    @property
    def upsilon(self) -> np.ndarray:
        return self.W[:, -1]

    def permute_labels(self, perm) -> "LatentState":
        """Relabel so that new label ``k`` corresponds to old label ``perm[k]``."""
        inverse = np.argsort(perm)
        return LatentState(R=inverse[self.R], W=self.W)


def validate(params: ParameterSet, data: Dataset, state: Optional[LatentState] = None) -> None:
    """Check parameters, data, and (optionally) a latent state together.

    Raises
    ------
    ValidationError
        Listing every violated invariant.
    """
    problems = data.check() + params.check(data)
    if state is not None:
        if state.R.shape != (data.n_obs,):
            problems.append("label array does not match the number of observations")
        elif np.any((state.R < 0) | (state.R >= params.K)):
            problems.append("class label out of range")
        if state.W.shape != (data.n_subjects, data.q + 1):
            problems.append(f"random effects must have shape ({data.n_subjects}, {data.q + 1})")
        elif not np.all(np.isfinite(state.W)):
            problems.append("non-finite random effects")
    if problems:
        raise ValidationError(problems)

"""Data model, validation and CSV ingestion shared by every estimator."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np

from .errors import DomainError, ParseError, SchemaError

KERNELS = ("triangular", "epanechnikov", "uniform")


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Sample:
    """Observations of an RD design.

    ``running`` is stored in its original units together with ``cutoff``;
    estimators only ever look at :attr:`x`, the recentred running variable.
    Observations with ``x == 0`` belong to the treated (right) side.
    """

    running: np.ndarray
    outcome: np.ndarray
    cutoff: float = 0.0
    treatment: Optional[np.ndarray] = None

    def __post_init__(self):
        running = _frozen(self.running).ravel()
        outcome = _frozen(self.outcome).ravel()
        if running.size < 1:
            raise DomainError("sample must contain at least one observation")
        if outcome.size != running.size:
            raise DomainError("running and outcome must have the same length")
        if not (np.all(np.isfinite(running)) and np.all(np.isfinite(outcome))):
            raise DomainError("running and outcome must be finite")
        if not math.isfinite(self.cutoff):
            raise DomainError("cutoff must be finite")
        object.__setattr__(self, "running", running)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "cutoff", float(self.cutoff))
        if self.treatment is not None:
            treatment = _frozen(self.treatment).ravel()
            if treatment.size != running.size:
                raise DomainError("treatment must have the same length as running")
            if not np.all((treatment == 0.0) | (treatment == 1.0)):
                raise DomainError("treatment values must be exactly 0 or 1", code="bad_treatment")
            object.__setattr__(self, "treatment", treatment)
        x = running - self.cutoff
        x.setflags(write=False)
        object.__setattr__(self, "_x", x)

    @property
    def n(self) -> int:
        return self.running.size

    @property
    def x(self) -> np.ndarray:
        """Running variable recentred at the cutoff."""
        return self._x

    @property
    def right(self) -> np.ndarray:
        return self._x >= 0.0

    @property
    def left(self) -> np.ndarray:
        return self._x < 0.0

    def response(self, selector: str = "y") -> np.ndarray:
        """Return the outcome (``"y"``) or the treatment indicator (``"t"``)."""
        if selector == "y":
            return self.outcome
        if selector == "t":
            if self.treatment is None:
                raise SchemaError("treatment column is required", code="missing_treatment")
            return self.treatment
        raise DomainError(f"unknown outcome selector {selector!r}")

    def with_outcome(self, outcome) -> "Sample":
        return Sample(self.running, outcome, self.cutoff, self.treatment)


@dataclass(frozen=True)
class FitSpec:
    """Estimation configuration.

    ``q`` defaults to ``p + 1``. ``delta_lo`` and ``delta_hi`` bound the
    extrapolation interval ``[-delta_lo, delta_hi]`` around the cutoff.
    """

    h: float
    b: float
    p: int = 1
    q: Optional[int] = None
    kernel: str = "triangular"
    alpha: float = 0.05
    delta_lo: float = 0.0
    delta_hi: float = 0.0
    nn_neighbors: int = 3

    def __post_init__(self):
        if self.q is None:
            object.__setattr__(self, "q", self.p + 1)
        if int(self.p) != self.p or self.p < 1:
            raise DomainError("p must be an integer >= 1", code="bad_order")
        if int(self.q) != self.q or self.q < self.p + 1:
            raise DomainError("q must be an integer >= p + 1", code="bad_order")
        if not (math.isfinite(self.h) and self.h > 0):
            raise DomainError("h must be positive", code="bad_bandwidth")
        if not (math.isfinite(self.b) and self.b > 0):
            raise DomainError("b must be positive", code="bad_bandwidth")
        if self.kernel not in KERNELS:
            raise DomainError(f"unknown kernel {self.kernel!r}", code="bad_kernel")
        if not (0.0 < self.alpha < 1.0):
            raise DomainError("alpha must lie in (0, 1)", code="bad_alpha")
        if not (self.delta_lo >= 0 and self.delta_hi >= 0):
            raise DomainError("extrapolation deltas must be >= 0", code="bad_delta")
        if int(self.nn_neighbors) != self.nn_neighbors or self.nn_neighbors < 1:
            raise DomainError("nn_neighbors must be an integer >= 1", code="bad_neighbors")
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "q", int(self.q))
        object.__setattr__(self, "nn_neighbors", int(self.nn_neighbors))


@dataclass(frozen=True)
class Issue:
    code: str
    message: str
    fatal: bool = True


@dataclass(frozen=True)
class ValidationReport:
    n_left: int
    n_right: int
    n_left_in_h: int
    n_right_in_h: int
    n_left_in_b: int
    n_right_in_b: int
    issues: tuple = field(default_factory=tuple)

    @property
    def fatal(self) -> bool:
        return any(issue.fatal for issue in self.issues)

    def first_fatal(self) -> Optional[Issue]:
        return next((issue for issue in self.issues if issue.fatal), None)


def _in_window(x, bandwidth, kernel):
    u = np.abs(x) / bandwidth
    # triangular and epanechnikov vanish on the boundary itself
    return u <= 1.0 if kernel == "uniform" else u < 1.0


def validate_sample(sample: Sample, spec: FitSpec) -> ValidationReport:
    """Count observations per side and window and flag unusable designs."""
    x = sample.x
    left, right = sample.left, sample.right
    in_h = _in_window(x, spec.h, spec.kernel)
    in_b = _in_window(x, spec.b, spec.kernel)
    issues = []
    if not right.any():
        issues.append(Issue("empty_treated_side", "empty treated side"))
    if not left.any():
        issues.append(Issue("empty_control_side", "empty control side"))
    for name, side in (("control", left), ("treated", right)):
        if not side.any():
            continue
        if np.unique(x[side & in_h]).size < spec.p + 1:
            issues.append(Issue(
                "singular_design",
                f"singular design: fewer than {spec.p + 1} distinct running values "
                f"within h on the {name} side",
            ))
        if np.unique(x[side & in_b]).size < spec.q + 1:
            issues.append(Issue(
                "singular_design",
                f"singular design: fewer than {spec.q + 1} distinct running values "
                f"within b on the {name} side",
            ))
    return ValidationReport(
        n_left=int(left.sum()),
        n_right=int(right.sum()),
        n_left_in_h=int((left & in_h).sum()),
        n_right_in_h=int((right & in_h).sum()),
        n_left_in_b=int((left & in_b).sum()),
        n_right_in_b=int((right & in_b).sum()),
        issues=tuple(issues),
    )


def _parse_cell(text, column, row):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"row {row}: cannot parse {text!r} in column {column!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}: non-finite value {text!r} in column {column!r}")
    return value


def load_sample(source: TextIO | str, schema: dict, cutoff: float) -> Sample:
    """Read a comma-separated table into a :class:`Sample`.

    Parameters
    ----------
    source : file-like or str
        Text stream (or the text itself) with a header row.
    schema : dict
        Maps ``"running"``, ``"outcome"`` and optionally ``"treatment"`` to
        column names.
    cutoff : float
        Threshold of the running variable.

    Any missing or unparsable required cell rejects the whole file.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = [name.strip() for name in next(reader)]
    except StopIteration:
        raise SchemaError("input has no header row", code="empty_input") from None
    wanted = {role: schema.get(role) for role in ("running", "outcome", "treatment")}
    index = {}
    for role, column in wanted.items():
        if column is None:
            if role != "treatment":
                raise SchemaError(f"schema does not name the {role} column", code="missing_column")
            continue
        if column not in header:
            raise SchemaError(f"column {column!r} not found in input", code="missing_column")
        index[role] = header.index(column)

    columns = {role: [] for role in index}
    for row_number, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        for role, pos in index.items():
            cell = row[pos].strip() if pos < len(row) else ""
            if cell == "":
                raise ParseError(f"row {row_number}: missing value in column {wanted[role]!r}")
            value = _parse_cell(cell, wanted[role], row_number)
            if role == "treatment" and value not in (0.0, 1.0):
                raise DomainError(
                    f"row {row_number}: treatment value {cell!r} is not 0 or 1",
                    code="bad_treatment",
                )
            columns[role].append(value)
    if not columns["running"]:
        raise SchemaError("input has no data rows", code="empty_input")
    return Sample(
        running=columns["running"],
        outcome=columns["outcome"],
        cutoff=cutoff,
        treatment=columns.get("treatment"),
    )


def dump_sample(sample: Sample, stream: TextIO, names=("x", "y", "t")) -> None:
    """Write a sample as CSV using round-trip float formatting."""
    writer = csv.writer(stream, lineterminator="\n")
    has_t = sample.treatment is not None
    writer.writerow(names if has_t else names[:2])
    for i in range(sample.n):
        row = [repr(float(sample.running[i])), repr(float(sample.outcome[i]))]
        if has_t:
            row.append(repr(int(sample.treatment[i])))
        writer.writerow(row)

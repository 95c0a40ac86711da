"""Dataset ingest for the three model families.

Car-following events, lane-change samples and flow samples are read from
pre-extracted CSV files (UTF-8, comma separated, header row required).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from trafficlab.errors import DataIntegrityError, SchemaError

DT = 0.1
REL_SPEED_TOL = 1e-3

CARFOLLOW_COLUMNS = (
    "event_id",
    "t_index",
    "spacing_m",
    "sv_speed_mps",
    "lv_speed_mps",
    "rel_speed_mps",
)
LANECHANGE_FEATURES = (
    "v",
    "s",
    "of_v",
    "or_v",
    "tf_v",
    "tr_v",
    "rtf_x",
    "rtr_x",
    "rr_x",
    "or_acc",
    "tr_acc",
)
LANECHANGE_COLUMNS = LANECHANGE_FEATURES + ("label",)
FLOW_COLUMNS = ("density_norm", "speed_norm")


# --------------------------------------------------------------------------
# Car following
# --------------------------------------------------------------------------


class CarFollowStep(NamedTuple):
    spacing: float
    sv_speed: float
    lv_speed: float
    rel_speed: float


@dataclass(eq=False)
class CarFollowEvent:
    """One following event sampled at a fixed ``dt``.

    Steps are stored column-wise as float arrays; ``steps`` gives the
    row-wise view.
    """

    event_id: str
    spacing: np.ndarray
    sv_speed: np.ndarray
    lv_speed: np.ndarray
    rel_speed: np.ndarray = None
    dt: float = DT

    def __post_init__(self):
        self.spacing = np.asarray(self.spacing, dtype=float)
        self.sv_speed = np.asarray(self.sv_speed, dtype=float)
        self.lv_speed = np.asarray(self.lv_speed, dtype=float)
        if self.rel_speed is None:
            self.rel_speed = self.sv_speed - self.lv_speed
        self.rel_speed = np.asarray(self.rel_speed, dtype=float)
        n = self.spacing.shape[0]
        for name in ("sv_speed", "lv_speed", "rel_speed"):
            if getattr(self, name).shape != (n,):
                raise DataIntegrityError(
                    f"event {self.event_id}: column {name} has length "
                    f"{getattr(self, name).shape[0]}, expected {n}"
                )
        if n < 2:
            raise DataIntegrityError(f"event {self.event_id}: needs at least 2 steps, got {n}")

    def __len__(self):
        return self.spacing.shape[0]

    @property
    def n_steps(self) -> int:
        return self.spacing.shape[0]

    @property
    def steps(self) -> list[CarFollowStep]:
        return [
            CarFollowStep(float(s), float(v), float(lv), float(dv))
            for s, v, lv, dv in zip(self.spacing, self.sv_speed, self.lv_speed, self.rel_speed)
        ]

    @classmethod
    def from_steps(cls, event_id: str, steps: Iterable[Sequence[float]], dt: float = DT):
        arr = np.asarray([tuple(s) for s in steps], dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise DataIntegrityError(f"event {event_id}: steps must be (spacing, sv, lv, rel) rows")
        return cls(event_id, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], dt=dt)

    @property
    def negative_spacing_steps(self) -> np.ndarray:
        """Indices of steps with spacing <= 0 (kept, only flagged)."""
        return np.flatnonzero(self.spacing <= 0)


class DrivingState(enum.IntEnum):
    FREE_DRIVING = 0
    FOLLOWING = 1
    CLOSING_IN = 2
    EMERGENCY_BRAKING = 3

    @property
    def label(self) -> str:
        return _STATE_LABELS[self]


_STATE_LABELS = {
    DrivingState.FREE_DRIVING: "free driving",
    DrivingState.FOLLOWING: "following",
    DrivingState.CLOSING_IN: "closing in",
    DrivingState.EMERGENCY_BRAKING: "emergency braking",
}


@dataclass(frozen=True)
class StateThresholds:
    """Thresholds for the four-way driving-state classifier."""

    free_headway_s: float = 3.0
    closing_dv_mps: float = 0.5
    emergency_ttc_s: float = 3.0
    speed_floor_mps: float = 1.0

    def __post_init__(self):
        for name in ("free_headway_s", "closing_dv_mps", "emergency_ttc_s", "speed_floor_mps"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"StateThresholds.{name} must be strictly positive, got {value}")


_TTC_EPS = 1e-9


def classify_arrays(spacing, sv_speed, lv_speed, th: StateThresholds = StateThresholds()) -> np.ndarray:
    """Vectorized state classification; returns an int array of DrivingState codes.

    Decision order: emergency braking (closing and time-to-collision below
    ``emergency_ttc_s``), then free driving (spacing beyond the headway
    reached at ``max(speed, speed_floor)``), then closing in, else following.
    """
    spacing = np.asarray(spacing, dtype=float)
    sv = np.asarray(sv_speed, dtype=float)
    dv = sv - np.asarray(lv_speed, dtype=float)
    closing = dv > 0
    ttc = spacing / np.maximum(dv, _TTC_EPS)
    emergency = closing & (ttc < th.emergency_ttc_s)
    free = spacing > np.maximum(sv, th.speed_floor_mps) * th.free_headway_s
    closing_in = dv > th.closing_dv_mps

    out = np.full(spacing.shape, int(DrivingState.FOLLOWING), dtype=np.int64)
    out[closing_in] = int(DrivingState.CLOSING_IN)
    out[free] = int(DrivingState.FREE_DRIVING)
    out[emergency] = int(DrivingState.EMERGENCY_BRAKING)
    return out


def classify_steps(event: CarFollowEvent, th: StateThresholds = StateThresholds()) -> list[DrivingState]:
    codes = classify_arrays(event.spacing, event.sv_speed, event.lv_speed, th)
    return [DrivingState(int(c)) for c in codes]


def state_shares(events: Sequence[CarFollowEvent], th: StateThresholds = StateThresholds()) -> dict:
    """Fraction of steps per driving state over a collection of events."""
    counts = np.zeros(len(DrivingState), dtype=np.int64)
    for ev in events:
        counts += np.bincount(classify_arrays(ev.spacing, ev.sv_speed, ev.lv_speed, th), minlength=len(DrivingState))
    total = counts.sum()
    return {s: (counts[s] / total if total else 0.0) for s in DrivingState}


def _open_csv(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    return path.open("r", encoding="utf-8", newline="")


def _check_header(header, expected, path):
    if header is None:
        raise SchemaError(f"{path}: empty file, expected header {','.join(expected)}")
    header = [h.strip() for h in header]
    missing = [c for c in expected if c not in header]
    if missing:
        raise SchemaError(
            f"{path}: missing column(s) {', '.join(missing)}; expected header {','.join(expected)}"
        )
    return {name: header.index(name) for name in expected}


def _parse_float(text, column, rowno, path):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataIntegrityError(f"{path}: row {rowno}: column {column} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise DataIntegrityError(f"{path}: row {rowno}: column {column} is not finite: {text!r}")
    return value


def load_carfollow_events(path) -> list[CarFollowEvent]:
    """Read car-following events; one row per (event, time index).

    Events keep the order in which their ids first appear; steps are sorted
    by ``t_index``. Row numbers in error messages count the header as row 1.
    """
    groups: dict[str, list] = {}
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        cols = _check_header(next(reader, None), CARFOLLOW_COLUMNS, path)
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            eid = row[cols["event_id"]].strip()
            t_text = row[cols["t_index"]].strip()
            try:
                t_index = int(t_text)
            except ValueError:
                raise DataIntegrityError(f"{path}: row {rowno}: t_index is not an integer: {t_text!r}") from None
            s = _parse_float(row[cols["spacing_m"]], "spacing_m", rowno, path)
            v = _parse_float(row[cols["sv_speed_mps"]], "sv_speed_mps", rowno, path)
            lv = _parse_float(row[cols["lv_speed_mps"]], "lv_speed_mps", rowno, path)
            dv = _parse_float(row[cols["rel_speed_mps"]], "rel_speed_mps", rowno, path)
            if v < 0 or lv < 0:
                raise DataIntegrityError(f"{path}: row {rowno}: negative speed (sv={v}, lv={lv})")
            if abs(dv - (v - lv)) > REL_SPEED_TOL:
                raise DataIntegrityError(
                    f"{path}: row {rowno}: rel_speed_mps={dv} inconsistent with "
                    f"sv_speed_mps - lv_speed_mps = {v - lv}"
                )
            groups.setdefault(eid, []).append((t_index, rowno, s, v, lv, dv))

    events = []
    for eid, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        for prev, cur in zip(rows, rows[1:]):
            if prev[0] == cur[0]:
                raise DataIntegrityError(f"{path}: row {cur[1]}: duplicate t_index {cur[0]} in event {eid}")
        arr = np.array([r[2:] for r in rows], dtype=float)
        events.append(CarFollowEvent(eid, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]))
    return events


def write_carfollow_events(events: Sequence[CarFollowEvent], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CARFOLLOW_COLUMNS)
        for ev in events:
            for t, (s, v, lv, dv) in enumerate(zip(ev.spacing, ev.sv_speed, ev.lv_speed, ev.rel_speed)):
                w.writerow([ev.event_id, t, repr(float(s)), repr(float(v)), repr(float(lv)), repr(float(dv))])


def split_events(items: Sequence, calib_fraction: float = 0.2, seed: int = 0):
    """Seeded random split into (calibration, validation).

    The calibration subset has ``round(M * calib_fraction)`` members (half
    rounded up). Both subsets keep the input order.
    """
    if not 0 < calib_fraction < 1:
        raise ValueError(f"calib_fraction must lie in (0, 1), got {calib_fraction}")
    items = list(items)
    m = len(items)
    if m == 0:
        raise ValueError("cannot split an empty collection")
    n_cal = int(math.floor(m * calib_fraction + 0.5))
    rng = np.random.default_rng(seed)
    chosen = np.zeros(m, dtype=bool)
    chosen[rng.permutation(m)[:n_cal]] = True
    calib = [it for it, c in zip(items, chosen) if c]
    valid = [it for it, c in zip(items, chosen) if not c]
    return calib, valid


# --------------------------------------------------------------------------
# Lane change
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LaneChangeSample:
    v: float
    s: float
    of_v: float
    or_v: float
    tf_v: float
    tr_v: float
    rtf_x: float
    rtr_x: float
    rr_x: float
    or_acc: float
    tr_acc: float
    label: int = 0

    def features(self) -> tuple:
        return tuple(getattr(self, name) for name in LANECHANGE_FEATURES)


def lanechange_matrix(samples: Sequence[LaneChangeSample]):
    """Stack samples into an ``(N, 11)`` feature matrix and an ``(N,)`` label vector."""
    x = np.array([s.features() for s in samples], dtype=float).reshape(len(samples), len(LANECHANGE_FEATURES))
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y


def load_lanechange_samples(path) -> list[LaneChangeSample]:
    samples = []
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        cols = _check_header(next(reader, None), LANECHANGE_COLUMNS, path)
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            values = {c: _parse_float(row[cols[c]], c, rowno, path) for c in LANECHANGE_FEATURES}
            label_text = row[cols["label"]].strip()
            try:
                label_f = float(label_text)
            except ValueError:
                label_f = float("nan")
            if label_f not in (0.0, 1.0):
                raise DataIntegrityError(f"{path}: row {rowno}: label must be 0 or 1, got {label_text!r}")
            samples.append(LaneChangeSample(**values, label=int(label_f)))
    return samples


def write_lanechange_samples(samples: Sequence[LaneChangeSample], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LANECHANGE_COLUMNS)
        for s in samples:
            w.writerow([repr(float(x)) for x in s.features()] + [s.label])


# --------------------------------------------------------------------------
# Flow
# --------------------------------------------------------------------------


class DensityBucket(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2

    @property
    def label(self) -> str:
        return _BUCKET_LABELS[self]


_BUCKET_LABELS = {
    DensityBucket.LOW: "low (0~0.3)",
    DensityBucket.MEDIUM: "medium (0.3~0.6)",
    DensityBucket.HIGH: "high (0.6~1.0)",
}

BUCKET_EDGES = (0.3, 0.6)


def density_bucket(density: float) -> DensityBucket:
    """Left-closed buckets [0, 0.3), [0.3, 0.6), [0.6, 1.0]."""
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {density}")
    if density < BUCKET_EDGES[0]:
        return DensityBucket.LOW
    if density < BUCKET_EDGES[1]:
        return DensityBucket.MEDIUM
    return DensityBucket.HIGH


def bucket_codes(density) -> np.ndarray:
    """Vectorized ``density_bucket`` returning int codes."""
    return np.searchsorted(np.asarray(BUCKET_EDGES), np.asarray(density, dtype=float), side="right")


@dataclass(frozen=True)
class FlowSample:
    density: float
    speed: float
    bucket: DensityBucket = field(init=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.density <= 1.0:
            raise DataIntegrityError(f"density must lie in [0, 1], got {self.density}")
        object.__setattr__(self, "bucket", density_bucket(self.density))


def flow_arrays(samples: Sequence[FlowSample]):
    density = np.array([s.density for s in samples], dtype=float)
    speed = np.array([s.speed for s in samples], dtype=float)
    return density, speed


def load_flow_samples(path) -> list[FlowSample]:
    samples = []
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        cols = _check_header(next(reader, None), FLOW_COLUMNS, path)
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            rho = _parse_float(row[cols["density_norm"]], "density_norm", rowno, path)
            v = _parse_float(row[cols["speed_norm"]], "speed_norm", rowno, path)
            if not 0.0 <= rho <= 1.0:
                raise DataIntegrityError(f"{path}: row {rowno}: density_norm={rho} outside [0, 1]")
            if v < 0:
                raise DataIntegrityError(f"{path}: row {rowno}: speed_norm={v} is negative")
            samples.append(FlowSample(rho, v))
    return samples


def write_flow_samples(samples: Sequence[FlowSample], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FLOW_COLUMNS)
        for s in samples:
            w.writerow([repr(float(s.density)), repr(float(s.speed))])


def normalize_by_max(values) -> np.ndarray:
    """Divide a raw column by its maximum (optional upstream helper)."""
    values = np.asarray(values, dtype=float)
    peak = values.max() if values.size else 0.0
    if peak <= 0:
        raise ValueError("cannot normalize a column whose maximum is not positive")
    return values / peak

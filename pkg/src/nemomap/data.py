"""Velocity samples: ingest, downsampling, velocity derivation, splitting.

Two on-disk formats are understood:

* ATC-style tracking logs: ``time [s], person id, x [mm], y [mm], z [mm],
  velocity [mm/s], motion angle [rad], facing angle [rad]`` (no header).
* The canonical sample CSV written by this package:
  ``date,person_id,t_sec,x_m,y_m,speed_mps,theta_rad``.
"""
from __future__ import annotations

import csv
import datetime as _dt
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .swgmm import wrap_angle

log = logging.getLogger(__name__)

CANONICAL_HEADER = ["date", "person_id", "t_sec", "x_m", "y_m", "speed_mps", "theta_rad"]
MIN_SPEED = 0.01
MALFORMED_LIMIT = 0.10
ATC_UTC_OFFSET_HOURS = 9.0


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class VelocitySample:
    x: float
    y: float
    t: float
    speed: float
    orientation: float
    person_id: int = 0
    date: str = ""

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be >= 0")
        if not 0.0 <= self.orientation < 2 * math.pi:
            raise ValueError("orientation must be wrapped to [0, 2pi)")
        if not 0.0 <= self.t < 86400.0:
            raise ValueError("t must be seconds of day in [0, 86400)")


@dataclass
class SampleSet:
    """Column store of velocity samples."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    speed: np.ndarray
    theta: np.ndarray
    person_id: np.ndarray
    date: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "t", "speed", "theta"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.person_id = np.asarray(self.person_id, dtype=np.int64)
        self.date = np.asarray(self.date, dtype=str)
        n = self.x.shape[0]
        for name in ("y", "t", "speed", "theta", "person_id", "date"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"column {name} has shape {getattr(self, name).shape}, expected ({n},)")

    def __len__(self):
        return int(self.x.shape[0])

    @classmethod
    def empty(cls) -> "SampleSet":
        z = np.zeros(0)
        return cls(z, z, z, z, z, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=str))

    @classmethod
    def from_samples(cls, samples) -> "SampleSet":
        samples = list(samples)
        if not samples:
            return cls.empty()
        return cls(
            [s.x for s in samples],
            [s.y for s in samples],
            [s.t for s in samples],
            [s.speed for s in samples],
            [s.orientation for s in samples],
            [s.person_id for s in samples],
            [s.date for s in samples],
        )

    def subset(self, idx) -> "SampleSet":
        return SampleSet(
            self.x[idx], self.y[idx], self.t[idx], self.speed[idx], self.theta[idx], self.person_id[idx], self.date[idx]
        )

    def __iter__(self):
        for i in range(len(self)):
            yield VelocitySample(
                float(self.x[i]), float(self.y[i]), float(self.t[i]), float(self.speed[i]),
                float(self.theta[i]), int(self.person_id[i]), str(self.date[i]),
            )

    @staticmethod
    def concat(sets) -> "SampleSet":
        sets = list(sets)
        if not sets:
            return SampleSet.empty()
        cols = ("x", "y", "t", "speed", "theta", "person_id", "date")
        return SampleSet(*[np.concatenate([getattr(s, c) for s in sets]) for c in cols])

    def bounds(self, margin: float = 0.0) -> tuple:
        return (
            float(self.x.min()) - margin,
            float(self.x.max()) + margin,
            float(self.y.min()) - margin,
            float(self.y.max()) + margin,
        )


# -- canonical CSV ------------------------------------------------------------


def write_canonical_csv(samples: SampleSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CANONICAL_HEADER)
        for i in range(len(samples)):
            w.writerow([
                samples.date[i], int(samples.person_id[i]), repr(float(samples.t[i])),
                repr(float(samples.x[i])), repr(float(samples.y[i])),
                repr(float(samples.speed[i])), repr(float(samples.theta[i])),
            ])


def read_canonical_csv(path) -> SampleSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return SampleSet.empty()
        if [h.strip() for h in header] != CANONICAL_HEADER:
            raise DataFormatError(f"{path}: unexpected header {header}")
        rows = [r for r in reader if r]
    if not rows:
        return SampleSet.empty()
    try:
        cols = list(zip(*rows))
        return SampleSet(
            x=np.array(cols[3], dtype=float),
            y=np.array(cols[4], dtype=float),
            t=np.array(cols[2], dtype=float),
            speed=np.array(cols[5], dtype=float),
            theta=wrap_angle(np.array(cols[6], dtype=float)),
            person_id=np.array(cols[1], dtype=np.int64),
            date=np.array(cols[0], dtype=str),
        )
    except (ValueError, IndexError) as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


# -- ATC logs -----------------------------------------------------------------


@dataclass
class TrackPoints:
    """Raw tracker output in SI units. ``speed``/``motion_angle`` are NaN when
    the source does not provide them."""

    time: np.ndarray  # absolute seconds (epoch)
    person_id: np.ndarray
    x: np.ndarray
    y: np.ndarray
    speed: np.ndarray
    motion_angle: np.ndarray
    malformed: int = 0
    utc_offset_hours: float = ATC_UTC_OFFSET_HOURS
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.time.shape[0])

    def subset(self, idx) -> "TrackPoints":
        return TrackPoints(
            self.time[idx], self.person_id[idx], self.x[idx], self.y[idx],
            self.speed[idx], self.motion_angle[idx], self.malformed, self.utc_offset_hours,
        )


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def parse_atc_csv(path, utc_offset_hours: float = ATC_UTC_OFFSET_HOURS) -> TrackPoints:
    """Read an ATC-style tracking CSV; millimetres become metres.

    A first row that is not numeric is taken to be a header. Rows with the
    wrong field count or unparsable numbers are skipped and counted; more
    than 10% malformed rows is a format error.
    """
    rows = []
    malformed = 0
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or all(not c.strip() for c in row):
                continue
            if i == 0 and not _is_number(row[0].strip()):
                continue
            if len(row) < 8:
                malformed += 1
                continue
            try:
                rows.append([float(c) for c in row[:8]])
            except ValueError:
                malformed += 1
    total = len(rows) + malformed
    if total and malformed / total > MALFORMED_LIMIT:
        raise DataFormatError(f"{path}: {malformed} of {total} rows malformed")
    if malformed:
        log.warning("%s: skipped %d malformed rows", path, malformed)
    a = np.array(rows, dtype=float).reshape(-1, 8)
    return TrackPoints(
        time=a[:, 0],
        person_id=a[:, 1].astype(np.int64),
        x=a[:, 2] / 1000.0,
        y=a[:, 3] / 1000.0,
        speed=a[:, 5] / 1000.0,
        motion_angle=a[:, 6],
        malformed=malformed,
        utc_offset_hours=utc_offset_hours,
    )


def downsample(track: TrackPoints, rate: float = 1.0) -> TrackPoints:
    """Keep the first point of each person in every 1/rate-second window.

    Windows are aligned to integer multiples of 1/rate on the absolute clock,
    which (for whole-hour UTC offsets) also aligns them with seconds of day.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if len(track) == 0:
        return track
    window = np.floor(track.time * rate + 1e-9).astype(np.int64)
    order = np.lexsort((track.time, window, track.person_id))
    pid, win = track.person_id[order], window[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = (pid[1:] != pid[:-1]) | (win[1:] != win[:-1])
    keep = np.sort(order[first])
    return track.subset(keep)


def local_day_time(epoch_seconds, utc_offset_hours: float):
    """Absolute seconds -> (ISO dates, seconds of day) in the given offset."""
    local = np.asarray(epoch_seconds, dtype=float) + utc_offset_hours * 3600.0
    day = np.floor(local / 86400.0)
    tod = local - day * 86400.0
    epoch = _dt.date(1970, 1, 1)
    dates = np.array([(epoch + _dt.timedelta(days=int(d))).isoformat() for d in day], dtype=str)
    return dates, tod


def derive_velocity(track: TrackPoints, min_speed: float = MIN_SPEED) -> SampleSet:
    """Velocity samples from a track.

    Provided speed/motion-angle columns win; otherwise forward differences
    between consecutive points of the same person are used (the last point of
    each person then has no velocity and is dropped). Samples slower than
    ``min_speed`` have no defined orientation and are dropped.
    """
    if len(track) == 0:
        return SampleSet.empty()
    order = np.lexsort((track.time, track.person_id))
    tr = track.subset(order)
    speed = tr.speed.copy()
    angle = tr.motion_angle.copy()
    missing = ~(np.isfinite(speed) & np.isfinite(angle))
    if np.any(missing):
        same = np.zeros(len(tr), dtype=bool)
        same[:-1] = tr.person_id[1:] == tr.person_id[:-1]
        dt = np.full(len(tr), np.nan)
        dx = np.full(len(tr), np.nan)
        dy = np.full(len(tr), np.nan)
        dt[:-1] = tr.time[1:] - tr.time[:-1]
        dx[:-1] = tr.x[1:] - tr.x[:-1]
        dy[:-1] = tr.y[1:] - tr.y[:-1]
        ok = same & (dt > 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            fd_speed = np.where(ok, np.hypot(dx, dy) / dt, np.nan)
            fd_angle = np.where(ok, np.arctan2(dy, dx), np.nan)
        speed = np.where(missing, fd_speed, speed)
        angle = np.where(missing, fd_angle, angle)
    keep = np.isfinite(speed) & np.isfinite(angle) & (speed >= min_speed)
    dates, tod = local_day_time(tr.time[keep], tr.utc_offset_hours)
    return SampleSet(
        x=tr.x[keep],
        y=tr.y[keep],
        t=tod,
        speed=speed[keep],
        theta=wrap_angle(angle[keep]),
        person_id=tr.person_id[keep],
        date=dates,
    )


@dataclass
class SplitResult:
    train: SampleSet
    test: SampleSet
    excluded: int


def split_by_date(samples: SampleSet, train_dates, test_dates) -> SplitResult:
    train_dates = {str(d) for d in train_dates}
    test_dates = {str(d) for d in test_dates}
    overlap = train_dates & test_dates
    if overlap:
        raise ValueError(f"train and test dates overlap: {sorted(overlap)}")
    in_train = np.isin(samples.date, sorted(train_dates))
    in_test = np.isin(samples.date, sorted(test_dates))
    excluded = int(np.count_nonzero(~(in_train | in_test)))
    if excluded:
        log.info("split_by_date: %d samples with unlisted dates excluded", excluded)
    return SplitResult(samples.subset(in_train), samples.subset(in_test), excluded)


def load_samples(path) -> SampleSet:
    """Canonical CSV, or an ATC log (downsampled to 1 Hz) when the header
    does not match the canonical layout."""
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline().strip()
    if first.split(",") == CANONICAL_HEADER or not first:
        return read_canonical_csv(path)
    return derive_velocity(downsample(parse_atc_csv(path), 1.0))

"""Multi-centre recruitment data: centres, interim snapshots and CSV I/O.

Days are integers on a global trial clock (day 0 is the trial start).  A
centre initiated on day ``d`` and observed up to a census on day ``s`` has
``tau = s - d`` daily counts; ``counts[i]`` is the number recruited during
global day ``d + i``.
"""

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import InsufficientDataError, ParseError, ValidationError

LONG_COLUMNS = ("centre_id", "day", "count")
EVENT_COLUMNS = ("centre_id", "event_day")


@dataclass(frozen=True)
class RecruitmentSeries:
    centre_id: str
    initiation_day: int
    counts: tuple = ()

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "initiation_day", int(self.initiation_day))
        if self.initiation_day < 0:
            raise ValidationError(
                f"centre {self.centre_id!r}: initiation_day must be >= 0")
        if any(c < 0 for c in counts):
            raise ValidationError(
                f"centre {self.centre_id!r}: counts must be non-negative")

    @property
    def tau(self):
        return len(self.counts)

    @property
    def total(self):
        return sum(self.counts)

    def as_array(self):
        return np.asarray(self.counts, dtype=np.int64)


@dataclass(frozen=True)
class CountSplit:
    x1: int
    x2: int
    dropped_middle_days: int = 0
    dropped_count: int = 0


@dataclass(frozen=True)
class TrialSnapshot:
    """All centres observed up to ``census_day`` plus the future plan.

    ``target`` is the total number of recruits the trial requires (or None).
    When ``deterministic_first_recruitment`` is set, every open centre's
    first local day holds one deterministic recruit on top of the
    stochastic process; see :meth:`model_centres`.
    """

    census_day: int
    centres: tuple = ()
    planned_initiations: tuple = ()
    target: int = None
    deterministic_first_recruitment: bool = False
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "census_day", int(self.census_day))
        object.__setattr__(self, "centres", tuple(self.centres))
        planned = tuple(sorted(int(d) for d in self.planned_initiations))
        object.__setattr__(self, "planned_initiations", planned)
        if self.census_day < 0:
            raise ValidationError("census_day must be >= 0")
        seen = set()
        for c in self.centres:
            if not isinstance(c, RecruitmentSeries):
                raise ValidationError("centres must be RecruitmentSeries")
            if c.centre_id in seen:
                raise ValidationError(f"duplicate centre id {c.centre_id!r}")
            seen.add(c.centre_id)
            if c.initiation_day + c.tau != self.census_day:
                raise ValidationError(
                    f"centre {c.centre_id!r}: initiation_day + tau "
                    f"({c.initiation_day} + {c.tau}) must equal the census "
                    f"day {self.census_day}")
        if any(d <= self.census_day for d in planned):
            raise ValidationError(
                "planned initiations must be strictly after the census day")
        if self.target is not None:
            object.__setattr__(self, "target", int(self.target))
            if self.target <= 0:
                raise ValidationError("target must be a positive integer")
        if self.deterministic_first_recruitment:
            for c in self.centres:
                if c.tau >= 1 and c.counts[0] < 1:
                    raise ValidationError(
                        f"centre {c.centre_id!r}: deterministic first "
                        "recruitment requires a recruit on the first day")

    @property
    def n_centres(self):
        return len(self.centres)

    @property
    def total_recruits(self):
        return sum(c.total for c in self.centres)

    @property
    def taus(self):
        return np.array([c.tau for c in self.centres], dtype=np.int64)

    @property
    def initiation_days(self):
        return np.array([c.initiation_day for c in self.centres], dtype=np.int64)

    def remaining(self):
        """Recruits still required to reach ``target``."""
        if self.target is None:
            raise ValidationError("snapshot has no recruitment target")
        return max(self.target - self.total_recruits, 0)

    def model_centres(self):
        """Centres as seen by the stochastic model.

        With deterministic first recruitment the first-day count of each
        opened centre is reduced by one.
        """
        if not self.deterministic_first_recruitment:
            return self.centres
        out = []
        for c in self.centres:
            if c.tau >= 1:
                counts = (c.counts[0] - 1,) + c.counts[1:]
                c = replace(c, counts=counts)
            out.append(c)
        return tuple(out)

    def mean_open_duration(self):
        """Mean tau over centres that have been open at least one day."""
        taus = self.taus
        taus = taus[taus > 0]
        if taus.size == 0:
            raise InsufficientDataError("no centre has been open for a day")
        return float(taus.mean())

    def at_census(self, day):
        """Truncate to an earlier census.

        Centres initiated after ``day`` become planned initiations; a centre
        initiated exactly on ``day`` stays open with ``tau = 0``.
        """
        day = int(day)
        if day > self.census_day:
            raise ValidationError("cannot extend a snapshot past its census")
        centres, planned = [], [d for d in self.planned_initiations]
        for c in self.centres:
            if c.initiation_day <= day:
                centres.append(replace(c, counts=c.counts[:day - c.initiation_day]))
            else:
                planned.append(c.initiation_day)
        return replace(self, census_day=day, centres=tuple(centres),
                       planned_initiations=tuple(planned), extra={})

    def accrual(self, day):
        """Recruits observed before global day ``day`` (``day <= census``)."""
        if day > self.census_day:
            raise ValidationError("accrual requested beyond the census day")
        total = 0
        for c in self.centres:
            upto = day - c.initiation_day
            if upto > 0:
                total += sum(c.counts[:upto])
        return total

    def accrual_curve(self):
        """Cumulative accrual for global days ``0..census_day`` inclusive."""
        daily = np.zeros(self.census_day, dtype=np.int64)
        for c in self.centres:
            daily[c.initiation_day:c.initiation_day + c.tau] += c.as_array()
        return np.concatenate([[0], np.cumsum(daily)])


def split_counts(series):
    """Split each centre's series into first and second halves and total them.

    A centre open for an odd number of days loses its middle day; centres
    open for fewer than two days are skipped.
    """
    x1 = x2 = dropped = dropped_count = 0
    used = 0
    for s in series:
        tau = s.tau
        if tau < 2:
            continue
        used += 1
        h = tau // 2
        x1 += sum(s.counts[:h])
        x2 += sum(s.counts[tau - h:])
        if tau % 2:
            dropped += 1
            dropped_count += s.counts[h]
    if used == 0:
        raise InsufficientDataError(
            "split_counts needs at least one centre open for two or more days")
    return CountSplit(x1=x1, x2=x2, dropped_middle_days=dropped,
                      dropped_count=dropped_count)


# --------------------------------------------------------------------------
# CSV / JSON I/O
# --------------------------------------------------------------------------

def _parse_int(value, what, line):
    try:
        out = int(value.strip())
    except (ValueError, AttributeError):
        raise ParseError(f"{what} {value!r} is not an integer", line) from None
    return out


def _numbered_rows(fh):
    """Yield ``(line_number, fields)``, skipping ``#`` comment lines."""
    for lineno, line in enumerate(fh, start=1):
        if line.startswith("#"):
            continue
        yield lineno, next(csv.reader([line]), [])


def _read_rows(path, columns):
    with open(path, newline="") as fh:
        reader = _numbered_rows(fh)
        try:
            hline, header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        header = [h.strip() for h in header]
        mapping = dict(zip(LONG_COLUMNS + EVENT_COLUMNS[1:],
                           LONG_COLUMNS + EVENT_COLUMNS[1:]))
        mapping.update(columns or {})
        inverse = {v: k for k, v in mapping.items()}
        names = [inverse.get(h, h) for h in header]
        if set(LONG_COLUMNS) <= set(names):
            layout = "long"
        elif set(EVENT_COLUMNS) <= set(names):
            layout = "event"
        else:
            raise ParseError(
                f"header {header} matches neither {LONG_COLUMNS} nor "
                f"{EVENT_COLUMNS}", hline)
        idx = {n: i for i, n in enumerate(names)}
        rows = []
        for lineno, row in reader:
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}", lineno)
            rows.append((lineno, {n: row[idx[n]] for n in idx}))
    return layout, rows


def ingest_csv(path, census_day, initiations=None, columns=None,
               planned_initiations=(), target=None,
               deterministic_first_recruitment=False):
    """Read a long-format or event-list CSV into a validated snapshot.

    Long format has columns ``centre_id,day,count``; event lists have
    ``centre_id,event_day`` with one row per recruit.  ``columns`` maps the
    canonical names to the file's header names.  ``initiations`` maps centre
    ids to initiation days; centres missing from it start on their first
    recorded day, and centres present only there get all-zero counts.
    Missing days are zero-filled.
    """
    census_day = int(census_day)
    layout, rows = _read_rows(path, columns)
    counts = {}
    lines = {}
    order = []
    for lineno, row in rows:
        cid = row["centre_id"].strip()
        if not cid:
            raise ParseError("empty centre_id", lineno)
        if layout == "long":
            day = _parse_int(row["day"], "day", lineno)
            n = _parse_int(row["count"], "count", lineno)
            if n < 0:
                raise ValidationError(f"line {lineno}: negative count {n}")
        else:
            day = _parse_int(row["event_day"], "event_day", lineno)
            n = 1
        if day < 0:
            raise ValidationError(f"line {lineno}: negative day {day}")
        per = counts.setdefault(cid, {})
        if cid not in order:
            order.append(cid)
        if day in per and layout == "long":
            raise ValidationError(
                f"line {lineno}: duplicate (centre, day) = ({cid}, {day})")
        per[day] = per.get(day, 0) + n
        lines.setdefault(cid, {})[day] = lineno

    initiations = {str(k): int(v) for k, v in (initiations or {}).items()}
    for cid in initiations:
        if cid not in order:
            order.append(cid)
            counts[cid] = {}
    centres = []
    for cid in order:
        per = counts[cid]
        if cid in initiations:
            start = initiations[cid]
        elif per:
            start = min(per)
        else:
            raise ValidationError(f"centre {cid!r} has no initiation day")
        if start > census_day:
            raise ValidationError(
                f"centre {cid!r} initiates after the census; list it as a "
                "planned initiation instead")
        dense = [0] * (census_day - start)
        for day, n in per.items():
            if not start <= day < census_day:
                raise ValidationError(
                    f"line {lines.get(cid, {}).get(day, '?')}: day {day} for centre {cid!r} "
                    f"outside its observation window [{start}, {census_day})")
            dense[day - start] = n
        centres.append(RecruitmentSeries(cid, start, tuple(dense)))
    return TrialSnapshot(
        census_day=census_day, centres=tuple(centres),
        planned_initiations=tuple(planned_initiations), target=target,
        deterministic_first_recruitment=bool(deterministic_first_recruitment))


def read_metadata(path):
    with open(path) as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if "census_day" not in meta:
        raise ValidationError("metadata must contain census_day")
    return meta


def load_snapshot(csv_path, meta_path, columns=None):
    """Load a snapshot from a CSV file plus its metadata JSON."""
    meta = read_metadata(meta_path)
    return ingest_csv(
        csv_path, meta["census_day"], initiations=meta.get("initiations"),
        columns=columns,
        planned_initiations=meta.get("planned_initiations", ()),
        target=meta.get("target"),
        deterministic_first_recruitment=meta.get(
            "deterministic_first_recruitment", False))


def snapshot_metadata(snapshot):
    return {
        "census_day": snapshot.census_day,
        "target": snapshot.target,
        "planned_initiations": list(snapshot.planned_initiations),
        "deterministic_first_recruitment":
            bool(snapshot.deterministic_first_recruitment),
        "initiations": {c.centre_id: c.initiation_day for c in snapshot.centres},
    }


def write_snapshot(snapshot, csv_path, meta_path=None, comment=None):
    """Write a snapshot as dense long-format CSV (and metadata JSON).

    ``comment`` is written as a leading ``#`` line, which readers skip.
    """
    with open(csv_path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LONG_COLUMNS)
        for c in snapshot.centres:
            for i, n in enumerate(c.counts):
                w.writerow((c.centre_id, c.initiation_day + i, n))
    if meta_path is not None:
        with open(meta_path, "w") as fh:
            meta = snapshot_metadata(snapshot)
            if comment:
                meta["_provenance"] = comment
            json.dump(meta, fh, indent=2)
            fh.write("\n")


def snapshot_to_dict(snapshot):
    out = snapshot_metadata(snapshot)
    out["centres"] = [
        {"centre_id": c.centre_id, "initiation_day": c.initiation_day,
         "counts": list(c.counts)} for c in snapshot.centres]
    return out


def snapshot_from_dict(d):
    centres = tuple(RecruitmentSeries(c["centre_id"], c["initiation_day"],
                                      tuple(c["counts"]))
                    for c in d["centres"])
    return TrialSnapshot(
        census_day=d["census_day"], centres=centres,
        planned_initiations=tuple(d.get("planned_initiations", ())),
        target=d.get("target"),
        deterministic_first_recruitment=d.get(
            "deterministic_first_recruitment", False))

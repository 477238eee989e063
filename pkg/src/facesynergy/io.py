"""Readers and writers for EMG CSV, OpenFace CSV, human label files, tracks and reports.

Every reader rejects malformed input with a :class:`ParseError` carrying the
1-based line number of the offending row (the header is line 1).
"""
from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .core import Block, Condition, Kind, LabelTrack, Modality, Recording, canonical_au
from .errors import InvalidArgumentError, MissingColumnError, ParseError

EMG_HEADER = ("t_ms", "ch1", "ch2", "ch3", "ch4")
HUMAN_HEADER = ("au", "onset_ms", "offset_ms")
_UNIFORM_RTOL = 1e-6


def _fmt(v: float) -> str:
    return repr(float(v))


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_rows(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ParseError("file is empty", line=1, path=path)
    header = [h.strip() for h in rows[0]]
    body = [(i + 2, r) for i, r in enumerate(rows[1:]) if any(c.strip() for c in r)]
    return header, body


def _float(cell: str, line: int, path, column: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric value {cell.strip()!r} in column {column}",
                         line=line, path=path) from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value in column {column}", line=line, path=path)
    return v


def _numeric_table(header, body, path) -> np.ndarray:
    # vectorised fast path; the cell-by-cell loop below locates any failure
    if all(len(row) == len(header) for _, row in body):
        try:
            out = np.array([row for _, row in body], dtype=np.float64)
        except ValueError:
            pass
        else:
            if np.all(np.isfinite(out)):
                return out
    out = np.empty((len(body), len(header)))
    for i, (line, row) in enumerate(body):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(row)}", line=line, path=path)
        for j, (cell, name) in enumerate(zip(row, header)):
            out[i, j] = _float(cell, line, path, name)
    return out


def _clean_rate(rate: float) -> float:
    # undo last-bit noise from printed timestamps (1000 / 33.333... -> 30)
    snapped = round(rate, 6)
    return snapped if abs(rate - snapped) <= 1e-12 * rate else rate


def _uniform_rate(t_ms: np.ndarray, body, path) -> float:
    if t_ms.shape[0] < 2:
        return 1000.0
    d = np.diff(t_ms)
    step = d[0]
    bad = np.flatnonzero((d <= 0) | (np.abs(d - step) > _UNIFORM_RTOL * abs(step)))
    if bad.size:
        i = int(bad[0])
        if d[i] <= 0:
            raise ParseError("time is not strictly increasing", line=body[i + 1][0], path=path)
        raise ParseError(f"non-uniform time step ({d[i]:g} ms after {step:g} ms)",
                         line=body[i + 1][0], path=path)
    return _clean_rate(1000.0 * (t_ms.shape[0] - 1) / (t_ms[-1] - t_ms[0]))


# ---------------------------------------------------------------- EMG


def read_emg_csv(path) -> Recording:
    """``t_ms,ch1,...`` at a uniform step; the rate is inferred from the step."""
    header, body = _read_rows(path)
    if tuple(header[:1]) != ("t_ms",) or len(header) < 2:
        missing = [c for c in EMG_HEADER if c not in header]
        raise MissingColumnError(f"missing columns {missing}", line=1, path=path)
    if not body:
        raise ParseError("recording has no samples", line=2, path=path)
    table = _numeric_table(header, body, path)
    rate = _uniform_rate(table[:, 0], body, path)
    return Recording(table[:, 1:].T, rate, tuple(header[1:]), float(table[0, 0]))


def write_emg_csv(rec: Recording, path) -> None:
    t = rec.start_time_ms + np.arange(rec.n_samples) * 1000.0 / rec.rate_hz
    lines = [",".join(("t_ms",) + rec.channel_names)]
    cols = np.vstack([t, rec.samples]).T
    lines += [",".join(_fmt(v) for v in row) for row in cols]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------- OpenFace


def read_openface_csv(path, required=("AU6", "AU12")) -> list[LabelTrack]:
    """OpenFace 2.0 output: one CONTINUOUS track per ``AUxx_r``, one BINARY per ``AUxx_c``.

    Header tokens are trimmed (OpenFace writes ``", "`` separators). The rate
    comes from the median timestamp step. Intensities are clamped at zero.
    """
    header, body = _read_rows(path)
    for col in ("frame", "timestamp"):
        if col not in header:
            raise MissingColumnError(f"missing column {col!r}", line=1, path=path)
    au_cols = [(j, h) for j, h in enumerate(header)
               if h.upper().startswith("AU") and h[-2:].lower() in ("_r", "_c")]
    present = {canonical_au(h[:-2]) for _, h in au_cols}
    missing = [au for au in required if canonical_au(au) not in present]
    if missing:
        raise MissingColumnError(f"missing required AU columns for {missing}", line=1, path=path)
    if not body:
        raise ParseError("no frames", line=2, path=path)
    ts = np.empty(len(body))
    values = np.empty((len(au_cols), len(body)))
    t_col = header.index("timestamp")
    for i, (line, row) in enumerate(body):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(row)}", line=line, path=path)
        ts[i] = _float(row[t_col], line, path, "timestamp")
        for a, (j, name) in enumerate(au_cols):
            v = _float(row[j], line, path, name)
            if name[-2:].lower() == "_c" and v not in (0.0, 1.0):
                raise ParseError(f"{name} must be 0 or 1, found {row[j].strip()!r}",
                                 line=line, path=path)
            values[a, i] = v
    if len(body) > 1:
        steps = np.diff(ts)
        bad = np.flatnonzero(steps <= 0)
        if bad.size:
            raise ParseError("timestamps are not increasing", line=body[bad[0] + 1][0], path=path)
        median = float(np.median(steps))
        mean = (ts[-1] - ts[0]) / (len(ts) - 1)
        # OpenFace rounds timestamps to 1 ms; the mean step undoes that unless frames were dropped
        rate = _clean_rate(1.0 / (mean if abs(mean - median) <= 0.05 * median else median))
    else:
        rate = 30.0
    tracks = []
    for (_, name), v in zip(au_cols, values):
        au = canonical_au(name[:-2])
        if name[-2:].lower() == "_r":
            tracks.append(LabelTrack(np.clip(v, 0.0, None), rate, au, Modality.CV, Kind.CONTINUOUS))
        else:
            tracks.append(LabelTrack(v, rate, au, Modality.CV, Kind.BINARY))
    return tracks


def openface_name(au_id: str) -> str:
    return f"AU{int(au_id[2:]):02d}"


def write_openface_csv(tracks, path) -> None:
    """Write CV tracks in OpenFace column layout (``frame, timestamp, AUxx_r..., AUxx_c...``)."""
    tracks = list(tracks)
    rate = tracks[0].rate_hz
    n = len(tracks[0])
    cont = [t for t in tracks if t.kind is Kind.CONTINUOUS]
    binary = [t for t in tracks if t.kind is Kind.BINARY]
    names = ([f"{openface_name(t.au_id)}_r" for t in cont]
             + [f"{openface_name(t.au_id)}_c" for t in binary])
    lines = [", ".join(["frame", "timestamp"] + names)]
    for i in range(n):
        cells = [str(i + 1), _fmt(i / rate)]
        cells += [_fmt(t.values[i]) for t in cont]
        cells += [str(int(t.values[i])) for t in binary]
        lines.append(", ".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------- human labels


def _sample_times_ms(n, rate_hz: float) -> np.ndarray:
    # one formula for both directions so interval files round-trip exactly
    return np.arange(n) * 1000.0 / rate_hz


def intervals_to_track(intervals, duration_ms: float, rate_hz: float, au: str,
                       modality=Modality.HUMAN) -> LabelTrack:
    """Sample ``i`` (at ``i / rate`` s) is active iff it lies in some [onset, offset)."""
    n = int(round(duration_ms * rate_hz / 1000.0))
    t_ms = _sample_times_ms(n, rate_hz)
    v = np.zeros(n)
    for on, off in intervals:
        v[(t_ms >= on) & (t_ms < off)] = 1.0
    return LabelTrack(v, rate_hz, au, modality, Kind.BINARY)


def read_human_intervals(path) -> dict:
    header, body = _read_rows(path)
    if tuple(header) != HUMAN_HEADER:
        raise MissingColumnError(f"expected header {','.join(HUMAN_HEADER)}", line=1, path=path)
    out: dict = {}
    for line, row in body:
        if len(row) != 3:
            raise ParseError(f"expected 3 cells, found {len(row)}", line=line, path=path)
        au = canonical_au(row[0])
        on = _float(row[1], line, path, "onset_ms")
        off = _float(row[2], line, path, "offset_ms")
        if off <= on:
            raise ParseError(f"offset {off:g} ms is not after onset {on:g} ms", line=line, path=path)
        out.setdefault(au, []).append((on, off))
    return out


def read_human_labels_csv(path, duration_ms: float, rate_hz: float,
                          aus=("AU6", "AU12"), modality=Modality.HUMAN) -> list[LabelTrack]:
    """Interval file ``au,onset_ms,offset_ms`` rendered as binary tracks.

    Overlapping rows of one AU are unioned, so either coder marking a frame
    makes it active. Every AU in ``aus`` gets a track, all-zero if absent.
    """
    intervals = read_human_intervals(path)
    names = list(dict.fromkeys([canonical_au(a) for a in aus] + sorted(intervals)))
    return [intervals_to_track(intervals.get(au, []), duration_ms, rate_hz, au, modality)
            for au in names]


def track_intervals(track: LabelTrack) -> list[tuple[float, float]]:
    from .core import runs

    t = _sample_times_ms(len(track) + 1, track.rate_hz)
    return [(float(t[s]), float(t[e])) for s, e in runs(track.values)]


def write_intervals_csv(rows, path) -> None:
    """``rows`` are (au, onset_ms, offset_ms) triples."""
    lines = [",".join(HUMAN_HEADER)]
    lines += [f"{au},{_fmt(on)},{_fmt(off)}" for au, on, off in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_human_labels_csv(tracks, path) -> None:
    write_intervals_csv([(t.au_id, on, off) for t in tracks for on, off in track_intervals(t)], path)


# ---------------------------------------------------------------- generic tracks / matrices


def write_tracks_csv(tracks, path) -> None:
    """Equal-rate tracks as columns: ``t_ms,<au>,...``."""
    tracks = list(tracks)
    rate = tracks[0].rate_hz
    n = len(tracks[0])
    if any(t.rate_hz != rate or len(t) != n for t in tracks):
        raise InvalidArgumentError("tracks must share rate and length")
    lines = [",".join(["t_ms"] + [t.au_id for t in tracks])]
    for i in range(n):
        cells = [_fmt(i * 1000.0 / rate)]
        cells += [str(int(t.values[i])) if t.is_binary else _fmt(t.values[i]) for t in tracks]
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_tracks_csv(path, modality=Modality.EMG) -> list[LabelTrack]:
    """Inverse of :func:`write_tracks_csv`; all-0/1 columns load as BINARY."""
    header, body = _read_rows(path)
    if not header or header[0] != "t_ms" or len(header) < 2:
        raise MissingColumnError("expected header t_ms,<track>...", line=1, path=path)
    if not body:
        raise ParseError("no samples", line=2, path=path)
    table = _numeric_table(header, body, path)
    rate = _uniform_rate(table[:, 0], body, path)
    tracks = []
    for j, name in enumerate(header[1:], start=1):
        col = table[:, j]
        kind = Kind.BINARY if np.all((col == 0) | (col == 1)) else Kind.CONTINUOUS
        tracks.append(LabelTrack(col, rate, name, modality, kind))
    return tracks


def read_label_file(path, rate_hz: float = 30.0, duration_ms: float | None = None,
                    modality=Modality.EMG) -> list[LabelTrack]:
    """Load a track CSV, an OpenFace CSV or an interval file, sniffing the header."""
    with open(path, newline="") as f:
        first = f.readline()
    header = [h.strip() for h in first.split(",")]
    if tuple(header) == HUMAN_HEADER:
        intervals = read_human_intervals(path)
        if duration_ms is None:
            duration_ms = max((off for ivs in intervals.values() for _, off in ivs), default=0.0)
        return read_human_labels_csv(path, duration_ms, rate_hz, aus=(), modality=modality)
    if "frame" in header and "timestamp" in header:
        return read_openface_csv(path, required=())
    return read_tracks_csv(path, modality)


def write_matrix_csv(matrix, path, columns, index=None, index_name="row") -> None:
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    head = ([index_name] if index is not None else []) + list(columns)
    lines = [",".join(head)]
    for i, row in enumerate(m):
        cells = ([str(index[i])] if index is not None else []) + [_fmt(v) for v in row]
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_matrix_csv(path, index: bool = False) -> tuple[np.ndarray, list, list]:
    """Numeric table with a header; with ``index`` the first column holds row labels."""
    header, body = _read_rows(path)
    if not body:
        raise ParseError("no rows", line=2, path=path)
    labels = []
    rows = []
    cols = header[1:] if index else header
    for line, row in body:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(row)}", line=line, path=path)
        if index:
            labels.append(row[0].strip())
            row = row[1:]
        rows.append([_float(c, line, path, name) for c, name in zip(row, cols)])
    return np.array(rows), cols, labels


# ---------------------------------------------------------------- reports


@dataclass
class ReportDocument:
    """Self-describing analysis report; every section is a list of plain records.

    ``manifest`` records the command, its flags and seeds so the report can be
    regenerated. Agreement entries are keyed by ``(modality_pair, au_id)``.
    """

    tool_version: str = __version__
    seeds: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    blocks: list = field(default_factory=list)
    agreements: list = field(default_factory=list)
    cooccurrence: list = field(default_factory=list)
    onset_profiles: list = field(default_factory=list)
    vaf_curves: list = field(default_factory=list)
    synergy_weights: list = field(default_factory=list)
    matches: list = field(default_factory=list)
    delays: list = field(default_factory=list)
    assignments: list = field(default_factory=list)
    tests: list = field(default_factory=list)
    figure_data: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ReportDocument":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParseError(f"unknown report sections {sorted(unknown)}")
        return cls(**d)

    def agreement(self, modality_pair: str, au_id: str, block: str | None = None) -> dict:
        for e in self.agreements:
            if (e["modality_pair"] == modality_pair and e["au_id"] == canonical_au(au_id)
                    and (block is None or e.get("block") == block)):
                return e
        raise KeyError((modality_pair, au_id, block))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (Modality, Kind, Condition)):
        return obj.value
    return obj


def dumps_report(doc: ReportDocument) -> str:
    return json.dumps(doc.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(doc: ReportDocument, path) -> None:
    atomic_write_text(path, dumps_report(doc))


def read_report(path) -> ReportDocument:
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid report JSON: {e.msg}", line=e.lineno, path=path) from None
    return ReportDocument.from_dict(data)


# ---------------------------------------------------------------- record builders


def agreement_entry(report, modality_pair: str, au_id: str, block: str | None = None,
                    rate_hz: float | None = None) -> dict:
    c = report.counts
    return {
        "block": block,
        "modality_pair": modality_pair,
        "au_id": canonical_au(au_id),
        "rate_hz": rate_hz,
        "kappa": report.kappa,
        "accuracy": report.accuracy,
        "precision": report.precision,
        "recall": report.recall,
        "precision_defined": report.precision_defined,
        "recall_defined": report.recall_defined,
        "p_o": report.p_o,
        "p_e": report.p_e,
        "n": report.n,
        "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
    }


def cooccurrence_entry(summary, block: str | None = None, source: str | None = None) -> dict:
    return {
        "block": block,
        "condition": summary.condition.value if summary.condition else None,
        "modality": summary.modality.value if summary.modality else source,
        "counts": dict(summary.counts),
        "percentages": summary.percentages(),
        "total_events": summary.total,
        "ties": summary.ties,
    }


def profile_entry(profile, block=None, condition=None, modality=None) -> dict:
    return {
        "block": block,
        "condition": condition,
        "modality": modality,
        "pre_s": profile.pre_s,
        "dur_s": profile.dur_s,
        "rate_hz": profile.rate_hz,
        "n_events": profile.n_events,
        "probabilities": _plain(profile.probabilities),
    }


def vaf_entry(curve, name: str, block=None) -> dict:
    return {
        "name": name,
        "block": block,
        "per_k": [[k, v] for k, v in curve.per_k],
        "selected_k": curve.selected_k,
        "threshold": curve.threshold,
        "reached": curve.reached,
    }


def match_entry(match, name: str, block=None) -> dict:
    return {
        "name": name,
        "block": block,
        "method": match.method,
        "pairing": [[i, j] for i, j in sorted(match.pairing.items())],
        "scores": _plain(match.scores),
    }


def delay_entry(delay, name: str, block=None) -> dict:
    return {
        "name": name,
        "block": block,
        "lag_ms": delay.lag_ms,
        "peak_correlation": delay.peak_correlation,
        "search_window_ms": delay.search_window_ms,
    }


# ---------------------------------------------------------------- session directories


def write_session(session, directory) -> None:
    """``emg.csv``, ``openface.csv``, ``truth.csv`` and ``events.csv`` plus ``block.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    b = session.block
    write_emg_csv(b.emg, d / "emg.csv")
    write_openface_csv(b.cv_tracks, d / "openface.csv")
    write_human_labels_csv(b.truth_tracks, d / "truth.csv")
    lines = ["pattern,onset_ms,offset_ms"]
    lines += [f"{e.pattern},{_fmt(e.onset_ms)},{_fmt(e.offset_ms)}" for e in session.event_log]
    atomic_write_text(d / "events.csv", "\n".join(lines) + "\n")
    meta = {"id": b.id, "condition": b.condition.value,
            "true_mixing": _plain(session.true_mixing)}
    atomic_write_text(d / "block.json", json.dumps(meta, sort_keys=True, indent=2) + "\n")


def read_block(directory, block_id: str | None = None, condition=None) -> Block:
    """Load a block directory written by :func:`write_session` (or assembled by hand).

    ``human.csv`` (interval format) is loaded into ``human_tracks`` when present.
    """
    d = Path(directory)
    meta = {}
    if (d / "block.json").exists():
        meta = json.loads((d / "block.json").read_text())
    emg = read_emg_csv(d / "emg.csv")
    cv = read_openface_csv(d / "openface.csv")
    duration = emg.duration_ms
    truth = ()
    if (d / "truth.csv").exists():
        truth = tuple(read_human_labels_csv(d / "truth.csv", duration, emg.rate_hz,
                                            modality=Modality.SYNTH_TRUTH))
    human = ()
    if (d / "human.csv").exists():
        human = tuple(read_human_labels_csv(d / "human.csv", duration, 30.0))
    return Block(block_id or meta.get("id", d.name),
                 Condition(condition or meta.get("condition", "SPONTANEOUS")),
                 emg, tuple(cv), human, truth)

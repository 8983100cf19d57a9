"""Sliding-window inference, alarms, and event-based evaluation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .eeg_io import Recording, segment_recording, window_labels
from .net import Checkpoint
from .train import binary_metrics, predict_proba


@dataclass
class AlarmTimeline:
    t_end: np.ndarray       # seconds, strictly increasing
    p1: np.ndarray
    threshold: float = 0.5
    stride_s: float = 7.5

    @property
    def alarm(self) -> np.ndarray:
        return self.p1 >= self.threshold

    def with_threshold(self, threshold: float) -> "AlarmTimeline":
        return AlarmTimeline(self.t_end, self.p1, threshold, self.stride_s)


def infer_timeline(rec: Recording, model: Checkpoint, overlap: float = 0.75, threshold: float = 0.5,
                   seg_dur_s: float = 30.0) -> AlarmTimeline:
    if model.classifier is None or model.tokenizer is None:
        raise ValueError("checkpoint lacks a classifier head or tokenizer state")
    wins = segment_recording(rec, seg_dur_s, overlap)
    if not wins:
        raise ValueError(f"recording of {rec.duration_s:.1f} s is shorter than one {seg_dur_s} s window")
    p1 = predict_proba([w for _, _, w in wins], model.tokenizer, model.params, model.classifier, model.config)
    t_end = np.array([t1 for _, t1, _ in wins])
    return AlarmTimeline(t_end, p1, threshold, seg_dur_s * (1.0 - overlap))


@dataclass
class EventOutcome:
    onset_s: float
    detected: bool
    first_alarm_s: Optional[float]
    delay_from_horizon_start: Optional[float]
    warning_time: Optional[float]


@dataclass
class EventReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    far_per_h: float
    mean_delay_s: Optional[float]
    sensitivity_pct: Optional[float]
    per_event: list = field(default_factory=list)
    mean_warning_time_s: Optional[float] = None
    n_false_alarms: int = 0
    n_windows: int = 0
    recording_hours: float = 0.0
    confusion: dict = field(default_factory=dict)


def match_events(timeline: AlarmTimeline, onsets, duration_s: float, horizon_s: float = 30.0) -> EventReport:
    """Score alarms against merged onsets.

    An alarm at window end t is true iff some onset s satisfies
    s - horizon <= t <= s. Entries are re-sorted and deduplicated by t.
    """
    t_all = np.asarray(timeline.t_end, dtype=np.float64)
    p_all = np.asarray(timeline.p1, dtype=np.float64)
    order = np.argsort(t_all, kind="stable")
    t_sorted = t_all[order]
    keep = np.ones(len(t_sorted), dtype=bool)
    keep[1:] = t_sorted[1:] != t_sorted[:-1]
    t = t_sorted[keep]
    alarm = p_all[order][keep] >= timeline.threshold
    onsets = np.sort(np.asarray(onsets, dtype=np.float64))

    labels = window_labels(t, onsets, horizon_s)
    seg = binary_metrics(labels, alarm)

    alarm_t = t[alarm]
    is_true = window_labels(alarm_t, onsets, horizon_s).astype(bool)
    n_false = int(np.sum(~is_true))
    hours = duration_s / 3600.0
    far = n_false / hours if hours > 0 else 0.0

    per_event = []
    for s in onsets:
        hits = alarm_t[(alarm_t >= s - horizon_s) & (alarm_t <= s)]
        if hits.size:
            first = float(hits.min())
            delay = first - (s - horizon_s)
            per_event.append(EventOutcome(float(s), True, first, delay, horizon_s - delay))
        else:
            per_event.append(EventOutcome(float(s), False, None, None, None))
    detected = [e for e in per_event if e.detected]
    sens = 100.0 * len(detected) / len(onsets) if len(onsets) else None
    mean_delay = float(np.mean([e.delay_from_horizon_start for e in detected])) if detected else None
    mean_warn = float(np.mean([e.warning_time for e in detected])) if detected else None
    return EventReport(
        accuracy=seg["acc"], precision=seg["prec"], recall=seg["rec"], f1=seg["f1"],
        far_per_h=far, mean_delay_s=mean_delay, sensitivity_pct=sens, per_event=per_event,
        mean_warning_time_s=mean_warn, n_false_alarms=n_false, n_windows=int(len(t)),
        recording_hours=hours,
        confusion={k: seg[k] for k in ("tp", "fp", "fn", "tn")},
    )


# ---------------------------------------------------------------- artifacts

def timeline_csv(timeline: AlarmTimeline) -> str:
    lines = ["t_end_s,p1,alarm"]
    for t, p, a in zip(timeline.t_end, timeline.p1, timeline.alarm):
        lines.append(f"{t:.3f},{p:.6f},{int(a)}")
    return "\n".join(lines) + "\n"


def parse_timeline_csv(text: str, threshold: float = 0.5) -> AlarmTimeline:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["t_end_s", "p1", "alarm"]:
        raise ValueError("timeline CSV header must be t_end_s,p1,alarm")
    t = np.array([float(r[0]) for r in rows[1:] if r])
    p = np.array([float(r[1]) for r in rows[1:] if r])
    stride = float(np.median(np.diff(t))) if len(t) > 1 else 0.0
    return AlarmTimeline(t, p, threshold, stride)


def report_to_dict(report: EventReport) -> dict:
    return {
        "accuracy": report.accuracy,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "far_per_h": report.far_per_h,
        "mean_delay_s": report.mean_delay_s,
        "sensitivity_pct": report.sensitivity_pct,
        "per_event": [
            {"onset_s": e.onset_s, "detected": e.detected, "first_alarm_s": e.first_alarm_s,
             "delay_from_horizon_start": e.delay_from_horizon_start, "warning_time": e.warning_time}
            for e in report.per_event
        ],
        "mean_warning_time_s": report.mean_warning_time_s,
        "n_false_alarms": report.n_false_alarms,
        "n_windows": report.n_windows,
        "recording_hours": report.recording_hours,
        "confusion": dict(report.confusion),
    }


def report_from_dict(d: dict) -> EventReport:
    events = [EventOutcome(**e) for e in d["per_event"]]
    return EventReport(
        accuracy=d["accuracy"], precision=d["precision"], recall=d["recall"], f1=d["f1"],
        far_per_h=d["far_per_h"], mean_delay_s=d["mean_delay_s"], sensitivity_pct=d["sensitivity_pct"],
        per_event=events, mean_warning_time_s=d.get("mean_warning_time_s"),
        n_false_alarms=d.get("n_false_alarms", 0), n_windows=d.get("n_windows", 0),
        recording_hours=d.get("recording_hours", 0.0), confusion=d.get("confusion", {}),
    )


def report_json(report: EventReport, extra: Optional[dict] = None) -> str:
    d = report_to_dict(report)
    if extra:
        d.update(extra)
    return json.dumps(d, indent=2) + "\n"


def emit_timeline_artifacts(timeline: AlarmTimeline, onsets, duration_s: float, horizon_s: float = 30.0):
    """Returns ``(timeline_csv_text, summary_json_text)``."""
    report = match_events(timeline, onsets, duration_s, horizon_s)
    return timeline_csv(timeline), report_json(report)


# ---------------------------------------------------------------- per-patient table

TABLE_COLUMNS = ("patient", "train_acc", "val_acc", "precision", "recall", "f1",
                 "far_per_h", "pdelay_s", "sens_pct")


def _fmt(value, digits):
    return "N/A" if value is None else f"{value:.{digits}f}"


def table_row(patient: str, train_acc, val_acc, precision, recall, f1, far_per_h, pdelay_s, sens_pct) -> str:
    return ",".join([
        patient, _fmt(train_acc, 4), _fmt(val_acc, 4), _fmt(precision, 4), _fmt(recall, 4),
        _fmt(f1, 4), _fmt(far_per_h, 2), _fmt(pdelay_s, 2), _fmt(sens_pct, 1),
    ])


def table_csv(rows) -> str:
    return "\n".join([",".join(TABLE_COLUMNS)] + list(rows)) + "\n"


def parse_table_csv(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != TABLE_COLUMNS:
        raise ValueError(f"table header must be {','.join(TABLE_COLUMNS)}")
    out = []
    for row in reader:
        out.append({k: (row[k] if k == "patient" else (None if row[k] == "N/A" else float(row[k])))
                    for k in TABLE_COLUMNS})
    return out

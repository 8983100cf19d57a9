"""Recording container, EDF / raw-container I/O, resampling, windowing and labels."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np


class FormatError(ValueError):
    """Raised when an input file does not follow its declared layout."""


@dataclass
class Recording:
    """Multichannel EEG, ``samples`` is (C, T) in microvolts."""

    samples: np.ndarray
    fs: float
    channel_names: tuple[str, ...]
    # per-channel (physical_min, physical_max) remembered from an EDF header
    phys_range: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be 2-D (C, T), got shape {self.samples.shape}")
        if not (self.fs > 0 and math.isfinite(self.fs)):
            raise ValueError(f"fs must be positive, got {self.fs}")
        self.channel_names = tuple(self.channel_names)
        if len(self.channel_names) != self.samples.shape[0]:
            raise ValueError("one channel name per row of samples required")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("recording contains NaN or Inf samples")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs


@dataclass(frozen=True)
class SeizureAnnotation:
    onset_s: float
    offset_s: float
    channel_hint: Optional[str] = None

    def __post_init__(self):
        if not self.offset_s > self.onset_s:
            raise ValueError(f"offset {self.offset_s} must exceed onset {self.onset_s}")


@dataclass
class Segment:
    window: np.ndarray
    t_start: float
    t_end: float
    label: int


# ---------------------------------------------------------------- EDF

EDF_DIGITAL_MIN = -32768
EDF_DIGITAL_MAX = 32767
_SIGNAL_FIELDS = (  # (name, width) in on-disk order
    ("label", 16), ("transducer", 80), ("dimension", 8), ("phys_min", 8),
    ("phys_max", 8), ("dig_min", 8), ("dig_max", 8), ("prefilter", 80),
    ("n_samples", 8), ("reserved", 32),
)


def _field(value: str, width: int) -> bytes:
    raw = value.encode("ascii", errors="replace")[:width]
    return raw.ljust(width, b" ")


def _fmt_number(x: float, direction: int = 0) -> str:
    """Format ``x`` into at most 8 ASCII chars.

    ``direction`` -1 / +1 rounds toward -inf / +inf so the written bound
    still encloses ``x``.
    """
    for dec in range(6, -1, -1):
        v = round(x, dec)
        if direction < 0 and v > x:
            v = round(v - 10.0 ** -dec, dec)
        elif direction > 0 and v < x:
            v = round(v + 10.0 ** -dec, dec)
        s = f"{v:.{dec}f}"
        if "." in s:
            s = s.rstrip("0").rstrip(".")
        if s == "-0":
            s = "0"
        if len(s) <= 8:
            return s
    raise ValueError(f"{x} does not fit an 8-character EDF field")


def _parse_ascii(raw: bytes, what: str) -> str:
    try:
        return raw.decode("ascii").strip()
    except UnicodeDecodeError:
        raise FormatError(f"non-ASCII bytes in header field {what!r}") from None


def _parse_num(raw: bytes, what: str, kind=float):
    text = _parse_ascii(raw, what)
    try:
        return kind(text)
    except ValueError:
        raise FormatError(f"cannot parse header field {what!r}: {text!r}") from None


def _record_layout(fs: float) -> tuple[int, Fraction]:
    """Samples per data record and record duration for rate ``fs``."""
    frac = Fraction(fs).limit_denominator(1000)
    if float(frac) != fs:
        raise ValueError(f"sampling rate {fs} has no exact EDF record layout")
    duration = Fraction(frac.denominator)  # seconds; makes spr an integer
    return int(frac * duration), duration


def write_edf(rec: Recording) -> bytes:
    """Serialize to plain continuous EDF with 16-bit samples.

    The last data record is padded by repeating the final sample when T is
    not a multiple of the record length.
    """
    C, T = rec.samples.shape
    if C == 0:
        raise ValueError("cannot write a recording with zero channels")
    if T == 0:
        raise ValueError("cannot write a recording with zero samples")
    spr, rec_dur = _record_layout(rec.fs)
    n_records = -(-T // spr)
    data = rec.samples
    if n_records * spr != T:
        pad = np.repeat(data[:, -1:], n_records * spr - T, axis=1)
        data = np.concatenate([data, pad], axis=1)

    pmins, pmaxs = [], []
    for c in range(C):
        lo, hi = float(data[c].min()), float(data[c].max())
        if rec.phys_range is not None and rec.phys_range[c, 0] <= lo and hi <= rec.phys_range[c, 1]:
            lo, hi = float(rec.phys_range[c, 0]), float(rec.phys_range[c, 1])
        elif lo == hi:
            lo, hi = lo - 1.0, hi + 1.0
        pmins.append(_fmt_number(lo, -1))
        pmaxs.append(_fmt_number(hi, +1))

    header_bytes = 256 * (1 + C)
    hdr = b"".join([
        _field("0", 8), _field("X", 80), _field("X", 80),
        _field("01.01.00", 8), _field("00.00.00", 8),
        _field(str(header_bytes), 8), _field("", 44),
        _field(str(n_records), 8), _field(_fmt_number(float(rec_dur)), 8),
        _field(str(C), 4),
    ])
    columns = {
        "label": [name for name in rec.channel_names],
        "transducer": [""] * C,
        "dimension": ["uV"] * C,
        "phys_min": pmins,
        "phys_max": pmaxs,
        "dig_min": [str(EDF_DIGITAL_MIN)] * C,
        "dig_max": [str(EDF_DIGITAL_MAX)] * C,
        "prefilter": [""] * C,
        "n_samples": [str(spr)] * C,
        "reserved": [""] * C,
    }
    sig_hdr = b"".join(_field(v, width) for name, width in _SIGNAL_FIELDS for v in columns[name])

    digital = np.empty_like(data, dtype="<i2")
    for c in range(C):
        lo, hi = float(pmins[c]), float(pmaxs[c])
        scaled = (data[c] - lo) / (hi - lo) * (EDF_DIGITAL_MAX - EDF_DIGITAL_MIN) + EDF_DIGITAL_MIN
        digital[c] = np.clip(np.round(scaled), EDF_DIGITAL_MIN, EDF_DIGITAL_MAX)
    # (C, n_records, spr) -> (n_records, C, spr)
    body = digital.reshape(C, n_records, spr).transpose(1, 0, 2).tobytes()
    return hdr + sig_hdr + body


def read_edf(raw: bytes) -> Recording:
    """Parse plain continuous EDF bytes into a :class:`Recording`.

    Annotation signals are dropped. Signals at a lower rate than the fastest
    one are linearly interpolated up to it.
    """
    if len(raw) < 256:
        raise FormatError("file shorter than the 256-byte EDF header")
    version = _parse_ascii(raw[0:8], "version")
    if version != "0":
        raise FormatError(f"unsupported EDF version {version!r}")
    for off, width, name in ((8, 80, "patient"), (88, 80, "recording"),
                             (168, 8, "startdate"), (176, 8, "starttime")):
        _parse_ascii(raw[off:off + width], name)
    header_bytes = _parse_num(raw[184:192], "header_bytes", int)
    reserved = _parse_ascii(raw[192:236], "reserved")
    if reserved.startswith("EDF+D"):
        raise FormatError("discontinuous EDF+ recordings are not supported")
    n_records = _parse_num(raw[236:244], "n_records", int)
    rec_dur = _parse_num(raw[244:252], "record_duration")
    ns = _parse_num(raw[252:256], "n_signals", int)
    if ns < 1:
        raise FormatError(f"invalid signal count {ns}")
    if rec_dur <= 0:
        raise FormatError(f"invalid data record duration {rec_dur}")
    if header_bytes != 256 * (ns + 1):
        raise FormatError(f"header size {header_bytes} inconsistent with {ns} signals")
    if len(raw) < header_bytes:
        raise FormatError("truncated signal headers")

    fields: dict[str, list[bytes]] = {}
    off = 256
    for name, width in _SIGNAL_FIELDS:
        fields[name] = [raw[off + i * width: off + (i + 1) * width] for i in range(ns)]
        off += ns * width

    labels = [_parse_ascii(b, "label") for b in fields["label"]]
    spr = [_parse_num(b, "n_samples", int) for b in fields["n_samples"]]
    pmin = [_parse_num(b, "phys_min") for b in fields["phys_min"]]
    pmax = [_parse_num(b, "phys_max") for b in fields["phys_max"]]
    dmin = [_parse_num(b, "dig_min", int) for b in fields["dig_min"]]
    dmax = [_parse_num(b, "dig_max", int) for b in fields["dig_max"]]
    for i in range(ns):
        _parse_ascii(fields["transducer"][i], "transducer")
        _parse_ascii(fields["dimension"][i], "dimension")
        if dmin[i] == dmax[i]:
            raise FormatError(f"signal {labels[i]!r}: digital_min equals digital_max")
        if spr[i] < 1:
            raise FormatError(f"signal {labels[i]!r}: invalid samples per record")

    record_size = 2 * sum(spr)
    available = len(raw) - header_bytes
    if n_records == -1:
        n_records = available // record_size
    if available < n_records * record_size:
        raise FormatError(f"truncated data: expected {n_records} records of {record_size} bytes")

    flat = np.frombuffer(raw, dtype="<i2", count=n_records * record_size // 2, offset=header_bytes)
    flat = flat.reshape(n_records, record_size // 2)
    keep = [i for i in range(ns) if labels[i] not in ("EDF Annotations", "BDF Annotations")]
    if not keep:
        raise FormatError("no data signals in file")

    bounds = np.cumsum([0] + spr)
    rates = {i: spr[i] / rec_dur for i in keep}
    fs = max(rates.values())
    channels = []
    for i in keep:
        dig = flat[:, bounds[i]:bounds[i + 1]].reshape(-1).astype(np.float64)
        gain = (pmax[i] - pmin[i]) / (dmax[i] - dmin[i])
        channels.append(pmin[i] + (dig - dmin[i]) * gain)
    if len({len(ch) for ch in channels}) > 1 or any(rates[i] != fs for i in keep):
        target_len = round(n_records * rec_dur * fs)
        channels = [_interp_to(ch, rates[i], fs, target_len) for ch, i in zip(channels, keep)]
    return Recording(
        samples=np.vstack(channels),
        fs=fs,
        channel_names=tuple(labels[i] for i in keep),
        phys_range=np.array([[pmin[i], pmax[i]] for i in keep]),
    )


# ---------------------------------------------------------------- raw container + CSV

RAW_MAGIC = "EEGRAW1"


def write_eegraw(rec: Recording) -> bytes:
    header = f"{RAW_MAGIC} {rec.n_channels} {rec.fs!r} {rec.n_samples}\n".encode("ascii")
    names = ("\t".join(rec.channel_names) + "\n").encode("ascii", errors="replace")
    return header + names + rec.samples.T.astype("<f4").tobytes()


def read_eegraw(raw: bytes) -> Recording:
    """Parse the ``EEGRAW1`` container (sample-major, channel-interleaved float32)."""
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("missing EEGRAW1 header line")
    parts = _parse_ascii(raw[:nl], "header").split()
    if len(parts) != 4 or parts[0] != RAW_MAGIC:
        raise FormatError(f"bad raw container header: {raw[:nl]!r}")
    try:
        C, fs, T = int(parts[1]), float(parts[2]), int(parts[3])
    except ValueError:
        raise FormatError(f"bad raw container header: {raw[:nl]!r}") from None
    nl2 = raw.find(b"\n", nl + 1)
    if nl2 < 0:
        raise FormatError("missing channel-name line")
    names = _parse_ascii(raw[nl + 1:nl2], "channel_names").split("\t") if C else []
    body = raw[nl2 + 1:]
    if len(body) != 4 * C * T or len(names) != C:
        raise FormatError(f"raw container body does not hold {C}x{T} float32 samples")
    samples = np.frombuffer(body, dtype="<f4").reshape(T, C).T.astype(np.float64)
    return Recording(samples, fs, names)


def load_recording(path) -> Recording:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw.startswith(RAW_MAGIC.encode()):
        return read_eegraw(raw)
    return read_edf(raw)


def write_annotations_csv(annotations: Iterable[SeizureAnnotation]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["onset_s", "offset_s", "channel"])
    for a in annotations:
        writer.writerow([repr(float(a.onset_s)), repr(float(a.offset_s)), a.channel_hint or ""])
    return buf.getvalue()


def read_annotations_csv(text: str) -> list[SeizureAnnotation]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["onset_s", "offset_s", "channel"]:
        raise FormatError(f"annotation CSV header must be onset_s,offset_s,channel; got {header}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise FormatError(f"annotation CSV line {lineno}: expected 3 fields")
        try:
            out.append(SeizureAnnotation(float(row[0]), float(row[1]), row[2].strip() or None))
        except ValueError as exc:
            raise FormatError(f"annotation CSV line {lineno}: {exc}") from None
    return out


# ---------------------------------------------------------------- resampling / windows / labels

def _interp_to(x: np.ndarray, fs: float, target_fs: float, n_out: int) -> np.ndarray:
    pos = np.arange(n_out) * (fs / target_fs)
    return np.interp(pos, np.arange(x.shape[-1]), x)


def resample(rec: Recording, target_fs: float) -> Recording:
    """Linear-interpolation resampling to ``target_fs``."""
    if not target_fs > 0:
        raise ValueError(f"target_fs must be positive, got {target_fs}")
    if target_fs == rec.fs:
        return Recording(rec.samples.copy(), rec.fs, rec.channel_names, rec.phys_range)
    n_out = round(rec.n_samples * target_fs / rec.fs)
    out = np.vstack([_interp_to(ch, rec.fs, target_fs, n_out) for ch in rec.samples])
    return Recording(out, target_fs, rec.channel_names, rec.phys_range)


def window_starts(duration_s: float, seg_dur_s: float, overlap_frac: float) -> np.ndarray:
    if not 0 <= overlap_frac < 1:
        raise ValueError(f"overlap_frac must be in [0, 1), got {overlap_frac}")
    if seg_dur_s > duration_s:
        return np.empty(0)
    stride = seg_dur_s * (1.0 - overlap_frac)
    count = math.floor((duration_s - seg_dur_s) / stride + 1e-9) + 1
    return np.arange(count) * stride


def segment_recording(rec: Recording, seg_dur_s: float = 30.0, overlap_frac: float = 0.5):
    """Fixed-length sliding windows; returns ``[(t_start, t_end, window)]``.

    Windows are views into ``rec.samples``. Trailing partial windows are dropped.
    """
    width = round(seg_dur_s * rec.fs)
    out = []
    for t0 in window_starts(rec.duration_s, seg_dur_s, overlap_frac):
        i0 = round(t0 * rec.fs)
        if i0 + width > rec.n_samples:
            break
        out.append((float(t0), float(t0 + seg_dur_s), rec.samples[:, i0:i0 + width]))
    return out


def merge_annotations(annotations: Iterable[SeizureAnnotation]) -> list[tuple[float, float]]:
    """Union of overlapping (or touching) ictal intervals across channels."""
    merged: list[list[float]] = []
    for a in sorted(annotations, key=lambda a: (a.onset_s, a.offset_s)):
        if merged and a.onset_s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], a.offset_s)
        else:
            merged.append([a.onset_s, a.offset_s])
    return [(lo, hi) for lo, hi in merged]


def merged_onsets(annotations: Iterable[SeizureAnnotation]) -> np.ndarray:
    return np.array([lo for lo, _ in merge_annotations(annotations)], dtype=np.float64)


def window_labels(t_ends: Sequence[float], onsets: Sequence[float], horizon_s: float = 30.0) -> np.ndarray:
    """1 where some onset lies in the closed interval [t_end, t_end + horizon]."""
    t = np.asarray(t_ends, dtype=np.float64)[:, None]
    s = np.asarray(onsets, dtype=np.float64)[None, :]
    if s.size == 0:
        return np.zeros(t.shape[0], dtype=np.int64)
    return np.any((s >= t) & (s <= t + horizon_s), axis=1).astype(np.int64)


def label_segments(segments, annotations: Iterable[SeizureAnnotation], horizon_s: float = 30.0) -> list[Segment]:
    onsets = merged_onsets(annotations)
    labels = window_labels([t1 for _, t1, _ in segments], onsets, horizon_s)
    return [Segment(w, t0, t1, int(y)) for (t0, t1, w), y in zip(segments, labels)]


# ---------------------------------------------------------------- synthetic patient

BACKGROUND_RMS_UV = 20.0
PREICTAL_S = 30.0
ICTAL_S = 20.0
MIN_GAP_S = 60.0


def _spike_wave(t: np.ndarray, freq: float = 3.0) -> np.ndarray:
    """Unit-peak 3 Hz spike-and-wave complex."""
    phase = np.mod(t * freq, 1.0)
    spike = np.exp(-0.5 * ((phase - 0.15) / 0.035) ** 2)
    wave = -0.6 * np.sin(np.pi * np.clip((phase - 0.3) / 0.7, 0.0, 1.0))
    w = spike + wave
    return w / np.max(np.abs(w)) if w.size else w


def _shaped_noise(rng: np.random.Generator, C: int, T: int, fs: float, gain) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal((C, T)), axis=1)
    freqs = np.fft.rfftfreq(T, 1.0 / fs)
    spec *= gain(freqs)
    x = np.fft.irfft(spec, n=T, axis=1)
    return x / x.std(axis=1, keepdims=True)


def synth_patient(seed: int, duration_s: float = 3600.0, C: int = 8, fs: float = 250.0,
                  n_seizures: int = 6) -> tuple[Recording, list[SeizureAnnotation]]:
    """Deterministic synthetic patient with pre-ictal ramps and ictal discharges.

    Background is 1/f noise plus an 8-12 Hz alpha rhythm at 20% of the
    background power. Each event is a 30 s pre-ictal 3 Hz spike-wave ramp
    (0 -> 3x background RMS) on a random channel subset, then a 20 s ictal
    discharge at 5x RMS on every channel. Annotations mark the ictal spans.
    """
    if C < 1:
        raise ValueError(f"C must be >= 1, got {C}")
    if n_seizures < 0:
        raise ValueError(f"n_seizures must be >= 0, got {n_seizures}")
    if duration_s < n_seizures * 90:
        raise ValueError(f"duration_s={duration_s} violates duration_s >= n_seizures*90 = {n_seizures * 90}")
    rng = np.random.default_rng(seed)
    T = round(duration_s * fs)
    duration_s = T / fs

    pink = _shaped_noise(rng, C, T, fs, lambda f: np.where(f > 0, 1.0 / np.sqrt(np.maximum(f, 0.5)), 0.0))
    alpha = _shaped_noise(rng, C, T, fs, lambda f: ((f >= 8.0) & (f <= 12.0)).astype(float))
    x = BACKGROUND_RMS_UV * (pink + np.sqrt(0.2) * alpha)

    annotations = []
    if n_seizures:
        block = ICTAL_S + MIN_GAP_S
        slack = duration_s - (PREICTAL_S + n_seizures * ICTAL_S + (n_seizures - 1) * MIN_GAP_S)
        offsets = np.sort(rng.uniform(0.0, slack, size=n_seizures))
        for i, off in enumerate(offsets):
            onset = round((PREICTAL_S + off + i * block) * fs) / fs
            subset = rng.random(C) < 0.5
            if not subset.any():
                subset[rng.integers(C)] = True
            i_pre, i_on = round((onset - PREICTAL_S) * fs), round(onset * fs)
            i_off = min(round((onset + ICTAL_S) * fs), T)
            t_pre = np.arange(i_on - i_pre) / fs
            ramp = 3.0 * BACKGROUND_RMS_UV * (t_pre / PREICTAL_S) * _spike_wave(t_pre)
            x[subset, i_pre:i_on] += ramp
            t_ict = np.arange(i_off - i_on) / fs
            x[:, i_on:i_off] += 5.0 * BACKGROUND_RMS_UV * _spike_wave(t_ict)
            annotations.append(SeizureAnnotation(onset, i_off / fs, None))

    names = tuple(f"EEG {i + 1:02d}" for i in range(C))
    return Recording(x, fs, names), annotations

"""Speech segment algebra and RTTM serialization.

Segments, per-session label sets, frame-level activity matrices, and the
conversions between them. These are the exchange currency between every
pipeline stage: generators emit SessionLabels, detectors emit ActivityMatrix,
scoring consumes both.

Conventions fixed here:
  * frame t covers [t/fps, (t+1)/fps); a frame belongs to a segment iff its
    center (t+0.5)/fps lies in the half-open interval [onset, onset+duration)
  * RTTM times are written with exactly 3 decimals
  * same-speaker segments that overlap or touch are merged on construction
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Tolerance for time comparisons. Intentional time distinctions in this
# package are >= 1 ms, so 1 ns safely absorbs float round-off without ever
# changing a real decision.
TIME_EPS = 1e-9


class RttmParseError(ValueError):
    """Raised for malformed RTTM input; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Segment:
    """One speaker-attributed speech interval."""

    speaker: str
    onset: float
    duration: float

    def __post_init__(self):
        if not self.speaker:
            raise ValueError("segment speaker must be a non-empty string")
        if not math.isfinite(self.onset) or self.onset < 0:
            raise ValueError(f"segment onset must be finite and >= 0, got {self.onset}")
        if not math.isfinite(self.duration) or self.duration <= 0:
            raise ValueError(f"segment duration must be finite and > 0, got {self.duration}")

    @property
    def end(self) -> float:
        return self.onset + self.duration


def _merge_same_speaker(segments):
    """Merge overlapping or touching segments of the same speaker."""
    by_speaker: dict[str, list[Segment]] = {}
    for seg in segments:
        by_speaker.setdefault(seg.speaker, []).append(seg)
    merged = []
    for speaker, segs in by_speaker.items():
        segs.sort(key=lambda s: (s.onset, s.duration))
        cur_on, cur_end = segs[0].onset, segs[0].end
        for seg in segs[1:]:
            if seg.onset <= cur_end + TIME_EPS:
                cur_end = max(cur_end, seg.end)
            else:
                merged.append(Segment(speaker, cur_on, cur_end - cur_on))
                cur_on, cur_end = seg.onset, seg.end
        merged.append(Segment(speaker, cur_on, cur_end - cur_on))
    merged.sort(key=lambda s: (s.onset, s.speaker))
    return tuple(merged)


@dataclass(frozen=True)
class SessionLabels:
    """Canonical diarization labels for one session.

    Segments are sorted by (onset, speaker) and same-speaker segments never
    overlap: overlapping or abutting inputs are merged on construction.
    """

    session_id: str
    segments: tuple[Segment, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "segments", _merge_same_speaker(self.segments))

    @property
    def speakers(self) -> list[str]:
        """Speaker ids in first-appearance order."""
        seen: dict[str, None] = {}
        for seg in self.segments:
            seen.setdefault(seg.speaker, None)
        return list(seen)

    @property
    def total_speech(self) -> float:
        """Sum of per-speaker speech time (overlap counted per speaker)."""
        return sum(s.duration for s in self.segments)

    def end_time(self) -> float:
        return max((s.end for s in self.segments), default=0.0)

    def for_speaker(self, speaker: str) -> list[Segment]:
        return [s for s in self.segments if s.speaker == speaker]

    def restrict_speakers(self, keep) -> "SessionLabels":
        keep = set(keep)
        return SessionLabels(self.session_id, tuple(s for s in self.segments if s.speaker in keep))

    def renamed(self, mapping: dict) -> "SessionLabels":
        return SessionLabels(
            self.session_id,
            tuple(Segment(mapping.get(s.speaker, s.speaker), s.onset, s.duration) for s in self.segments),
        )


@dataclass(frozen=True)
class ActivityMatrix:
    """Per-frame binary speaker activity: one row per speaker, one column per frame."""

    speakers: tuple[str, ...]
    frames: np.ndarray
    frame_rate: float

    def __post_init__(self):
        frames = np.ascontiguousarray(self.frames, dtype=np.uint8)
        if frames.ndim != 2 or frames.shape[0] != len(self.speakers):
            raise ValueError("frames must be an N x T matrix matching the speaker list")
        if frames.size and not np.isin(frames, (0, 1)).all():
            raise ValueError("activity entries must be 0 or 1")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        object.__setattr__(self, "speakers", tuple(self.speakers))
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[1]


def parse_rttm(text: str) -> list[SessionLabels]:
    """Parse RTTM text into one SessionLabels per file id, in appearance order.

    Only SPEAKER records are supported. Blank lines and lines starting with
    ';' are skipped. Malformed lines raise RttmParseError with the line number.
    """
    per_file: dict[str, list[Segment]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        fields = line.split()
        if len(fields) != 10:
            raise RttmParseError(line_no, f"expected 10 fields, got {len(fields)}")
        if fields[0] != "SPEAKER":
            raise RttmParseError(line_no, f"unsupported record type {fields[0]!r}")
        file_id, spk = fields[1], fields[7]
        try:
            onset = float(fields[3])
            duration = float(fields[4])
        except ValueError:
            raise RttmParseError(line_no, "non-numeric onset or duration") from None
        if not math.isfinite(onset) or onset < 0:
            raise RttmParseError(line_no, f"invalid onset {fields[3]}")
        if not math.isfinite(duration) or duration <= 0:
            raise RttmParseError(line_no, f"invalid duration {fields[4]}")
        per_file.setdefault(file_id, []).append(Segment(spk, onset, duration))
    return [SessionLabels(fid, tuple(segs)) for fid, segs in per_file.items()]


def write_rttm(labels: SessionLabels) -> str:
    """Serialize labels as RTTM with 3-decimal times and LF line endings.

    Round-trips through parse_rttm exactly when times are already at
    millisecond resolution.
    """
    lines = [
        f"SPEAKER {labels.session_id} 1 {seg.onset:.3f} {seg.duration:.3f} <NA> <NA> {seg.speaker} <NA> <NA>"
        for seg in labels.segments
    ]
    return "".join(line + "\n" for line in lines)


def rasterize(
    labels: SessionLabels,
    frame_rate: float,
    speakers,
    total_duration: float,
) -> ActivityMatrix:
    """Convert labels to an N x T activity matrix over the given speaker list.

    T = ceil(total_duration * frame_rate); frame membership follows the
    frame-center rule. Speakers in the list but absent from the labels give
    all-zero rows; label speakers missing from the list are an error.
    """
    speakers = list(speakers)
    if frame_rate <= 0:
        raise ValueError("frame_rate must be positive")
    index = {spk: i for i, spk in enumerate(speakers)}
    unknown = [s for s in labels.speakers if s not in index]
    if unknown:
        raise ValueError(f"labels contain speakers not in the speaker list: {unknown}")
    n_frames = int(math.ceil(total_duration * frame_rate - TIME_EPS))
    frames = np.zeros((len(speakers), max(n_frames, 0)), dtype=np.uint8)
    if n_frames > 0:
        centers = (np.arange(n_frames) + 0.5) / frame_rate
        for seg in labels.segments:
            row = index[seg.speaker]
            mask = (centers - seg.onset >= -TIME_EPS) & (seg.end - centers > TIME_EPS)
            frames[row, mask] = 1
    return ActivityMatrix(tuple(speakers), frames, frame_rate)


def segmentize(
    activity: ActivityMatrix,
    merge_gap: float = 0.0,
    min_duration: float = 0.0,
    session_id: str = "",
) -> SessionLabels:
    """Convert frame activity back to segments.

    Per speaker: runs of active frames become segments, same-speaker gaps
    strictly shorter than merge_gap are bridged, and segments strictly shorter
    than min_duration are then dropped.
    """
    if merge_gap < 0 or min_duration < 0:
        raise ValueError("merge_gap and min_duration must be >= 0")
    fps = activity.frame_rate
    segments = []
    for row, speaker in enumerate(activity.speakers):
        active = activity.frames[row].astype(np.int8)
        if not active.any():
            continue
        edges = np.flatnonzero(np.diff(np.concatenate(([0], active, [0]))))
        starts, ends = edges[::2], edges[1::2]
        runs = [(s / fps, e / fps) for s, e in zip(starts, ends)]
        bridged = [runs[0]]
        for on, off in runs[1:]:
            if on - bridged[-1][1] < merge_gap - TIME_EPS:
                bridged[-1] = (bridged[-1][0], off)
            else:
                bridged.append((on, off))
        for on, off in bridged:
            if off - on < min_duration - TIME_EPS:
                continue
            segments.append(Segment(speaker, on, off - on))
    return SessionLabels(session_id, tuple(segments))


def _boundaries(labels: SessionLabels):
    times = set()
    for seg in labels.segments:
        times.add(seg.onset)
        times.add(seg.end)
    return times


def active_counts(labels: SessionLabels, boundaries) -> np.ndarray:
    """Number of active speakers of `labels` inside each elementary interval.

    `boundaries` must be a sorted array of times; interval k is
    (boundaries[k], boundaries[k+1]).
    """
    boundaries = np.asarray(boundaries, dtype=float)
    mids = 0.5 * (boundaries[:-1] + boundaries[1:])
    counts = np.zeros(len(mids), dtype=np.int64)
    for seg in labels.segments:
        counts += (mids > seg.onset) & (mids < seg.end)
    return counts


def overlap_ratio(labels: SessionLabels) -> float:
    """Fraction of speech time with two or more simultaneous speakers.

    Denominator is total time with at least one active speaker; empty labels
    give 0.
    """
    if not labels.segments:
        return 0.0
    bounds = np.array(sorted(_boundaries(labels)))
    lengths = np.diff(bounds)
    counts = active_counts(labels, bounds)
    speech = float(lengths[counts >= 1].sum())
    if speech <= 0:
        return 0.0
    return float(lengths[counts >= 2].sum()) / speech

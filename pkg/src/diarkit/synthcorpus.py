"""Deterministic synthetic multi-channel corpus generator.

Sessions are synthesized directly in feature space: each speaker is a random
unit-norm signature vector, near-field channels carry that speaker's stream
plus a controllable bleed of the others, and far-field channels are positive
random mixtures of all speakers under stronger noise. No waveforms or room
acoustics are involved; everything downstream needs only the channel/mixing
structure.

Speaker signatures are drawn around a small global dictionary of voice
prototypes that all share a common "speech direction" component, so that
speech-vs-silence is learnable across sessions while speaker identity stays
session-specific. Speech activity follows a two-state talk/silence renewal
process per speaker, rejection-adjusted to a target overlap ratio.

All randomness is derived from (seed, session_index, stream-tag), so sessions
are reproducible independently and in any order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .fileio import CorpusManifest, ManifestEntry, read_features, write_features, write_manifest
from .timeline import ActivityMatrix, Segment, SessionLabels, overlap_ratio, rasterize, write_rttm

MEAN_TALK_SPURT = 2.0  # seconds
MIN_TALK_SPURT = 0.3
MIN_PAUSE = 0.2
MIN_TALK_FRACTION = 0.10
MAX_TALK_FRACTION = 0.90
GAIN_DEPTH = 0.3  # speech-level modulation amplitude
GAIN_SMOOTH = 0.98  # AR(1) coefficient of the modulation process
SIGNATURE_JITTER = 0.1  # per-session deviation from the voice prototype
SPEECH_BLEND = 0.5  # weight of the shared speech direction inside a prototype
FAR_NOISE_SCALE = 2.0  # far-field noise relative to near-field noise
MAX_LABEL_ATTEMPTS = 50


class CorpusGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CorpusSpec:
    """Parameters of one synthetic corpus."""

    n_sessions: int
    n_speakers: int = 2
    session_duration: float = 120.0
    n_far_channels: int = 4
    feature_dim: int = 40
    frame_rate: float = 100.0
    leakage: float = 0.3
    noise_level: float = 0.1
    overlap_target: float = 0.2
    seed: int = 0
    n_voices: int = 16  # size of the global voice-prototype dictionary

    def __post_init__(self):
        if self.n_sessions < 0:
            raise ValueError("n_sessions must be >= 0")
        if self.n_speakers < 1 or self.n_far_channels < 1 or self.feature_dim < 1:
            raise ValueError("n_speakers, n_far_channels and feature_dim must be >= 1")
        if not 0.0 <= self.leakage <= 1.0:
            raise ValueError("leakage must lie in [0, 1]")
        if not 0.0 <= self.overlap_target <= 1.0:
            raise ValueError("overlap_target must lie in [0, 1]")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        if self.session_duration <= 0 or self.frame_rate <= 0:
            raise ValueError("session_duration and frame_rate must be positive")
        if self.n_voices < self.n_speakers:
            raise ValueError("n_voices must be >= n_speakers")

    @property
    def n_frames(self) -> int:
        return int(math.ceil(self.session_duration * self.frame_rate - 1e-9))


@dataclass(frozen=True)
class SessionBundle:
    """One generated session: truth labels plus all channel feature matrices."""

    session_id: str
    truth: SessionLabels
    near_field: list
    far_field: list
    speaker_signatures: np.ndarray  # N x D
    frame_rate: float

    @property
    def speakers(self) -> list[str]:
        return [f"spk{n}" for n in range(len(self.near_field))]


def session_name(index: int) -> str:
    return f"sess{index:03d}"


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def voice_prototypes(spec: CorpusSpec) -> np.ndarray:
    """Global dictionary of unit-norm voice prototypes for a corpus seed."""
    speech_dir = _unit(rngmod.stream(spec.seed, "speech-direction").standard_normal(spec.feature_dim))
    protos = np.empty((spec.n_voices, spec.feature_dim))
    for k in range(spec.n_voices):
        v = _unit(rngmod.stream(spec.seed, "voice", k).standard_normal(spec.feature_dim))
        protos[k] = _unit(SPEECH_BLEND * speech_dir + (1.0 - SPEECH_BLEND) * v)
    return protos


def _expected_overlap(f: float, n: int) -> float:
    p_any = 1.0 - (1.0 - f) ** n
    if p_any <= 0:
        return 0.0
    p_single = n * f * (1.0 - f) ** (n - 1)
    return (p_any - p_single) / p_any


def _talk_fraction(target: float, n_speakers: int) -> float:
    """Per-speaker talk fraction whose expected overlap ratio hits the target."""
    lo, hi = MIN_TALK_FRACTION, MAX_TALK_FRACTION
    if _expected_overlap(lo, n_speakers) >= target:
        return lo
    if _expected_overlap(hi, n_speakers) <= target:
        return hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _expected_overlap(mid, n_speakers) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _sample_speaker_segments(gen, speaker: str, duration: float, talk_fraction: float) -> list:
    mean_pause = max(MEAN_TALK_SPURT * (1.0 - talk_fraction) / talk_fraction, MIN_PAUSE)
    t = 0.0
    talking = bool(gen.random() < talk_fraction)
    segments = []
    while t < duration:
        if talking:
            spurt = max(MIN_TALK_SPURT, gen.exponential(MEAN_TALK_SPURT))
            onset = round(t, 3)
            end = round(min(t + spurt, duration), 3)
            if end - onset > 1e-3:
                segments.append(Segment(speaker, onset, round(end - onset, 3)))
            t += spurt
        else:
            t += max(MIN_PAUSE, gen.exponential(mean_pause))
        talking = not talking
    return segments


def _sample_truth(spec: CorpusSpec, session_index: int) -> SessionLabels:
    talk_fraction = _talk_fraction(spec.overlap_target, spec.n_speakers)
    sid = session_name(session_index)
    achieved = None
    for attempt in range(MAX_LABEL_ATTEMPTS):
        gen = rngmod.stream(spec.seed, session_index, "labels", attempt)
        segments = []
        for n in range(spec.n_speakers):
            segments.extend(_sample_speaker_segments(gen, f"spk{n}", spec.session_duration, talk_fraction))
        labels = SessionLabels(sid, tuple(segments))
        achieved = overlap_ratio(labels)
        if abs(achieved - spec.overlap_target) <= 0.1:
            return labels
    raise CorpusGenerationError(
        f"{sid}: could not reach overlap target {spec.overlap_target:.2f} "
        f"after {MAX_LABEL_ATTEMPTS} attempts (last achieved {achieved:.3f})"
    )


def _gain_tracks(spec: CorpusSpec, session_index: int, n_frames: int) -> np.ndarray:
    gen = rngmod.stream(spec.seed, session_index, "gains")
    gains = np.empty((spec.n_speakers, n_frames))
    scale = math.sqrt(1.0 - GAIN_SMOOTH**2)
    for n in range(spec.n_speakers):
        z = gen.standard_normal(n_frames)
        s = np.empty(n_frames)
        prev = 0.0
        for t in range(n_frames):
            prev = GAIN_SMOOTH * prev + scale * z[t]
            s[t] = prev
        gains[n] = 1.0 + GAIN_DEPTH * np.tanh(s)
    return gains


def generate_session(spec: CorpusSpec, session_index: int) -> SessionBundle:
    """Generate one session deterministically from (spec.seed, session_index)."""
    sid = session_name(session_index)
    truth = _sample_truth(spec, session_index)
    n_frames = spec.n_frames
    speakers = [f"spk{n}" for n in range(spec.n_speakers)]
    activity = rasterize(truth, spec.frame_rate, speakers, spec.session_duration).frames.astype(np.float64)

    protos = voice_prototypes(spec)
    voice_ids = rngmod.stream(spec.seed, session_index, "voices").choice(
        spec.n_voices, size=spec.n_speakers, replace=False
    )
    signatures = np.empty((spec.n_speakers, spec.feature_dim))
    for n in range(spec.n_speakers):
        jitter = rngmod.stream(spec.seed, session_index, "signature", n).standard_normal(spec.feature_dim)
        signatures[n] = _unit(protos[voice_ids[n]] + SIGNATURE_JITTER * _unit(jitter))

    gains = _gain_tracks(spec, session_index, n_frames)
    # streams[n] = T x D contribution of speaker n at full level
    streams = (activity * gains)[:, :, None] * signatures[:, None, :]

    noise_std = spec.noise_level / math.sqrt(spec.feature_dim)
    near = []
    near_noise = rngmod.stream(spec.seed, session_index, "near-noise")
    for n in range(spec.n_speakers):
        x = streams[n].copy()
        if spec.leakage > 0:
            others = streams.sum(axis=0) - streams[n]
            x += spec.leakage * others
        if noise_std > 0:
            x += noise_std * near_noise.standard_normal((n_frames, spec.feature_dim))
        near.append(np.ascontiguousarray(x, dtype=np.float32))

    weights = rngmod.stream(spec.seed, session_index, "mixweights").uniform(
        0.4, 1.0, size=(spec.n_far_channels, spec.n_speakers)
    )
    far = []
    far_noise = rngmod.stream(spec.seed, session_index, "far-noise")
    far_noise_std = FAR_NOISE_SCALE * noise_std
    for c in range(spec.n_far_channels):
        x = np.tensordot(weights[c], streams, axes=(0, 0))
        if far_noise_std > 0:
            x += far_noise_std * far_noise.standard_normal((n_frames, spec.feature_dim))
        far.append(np.ascontiguousarray(x, dtype=np.float32))

    return SessionBundle(
        session_id=sid,
        truth=truth,
        near_field=near,
        far_field=far,
        speaker_signatures=signatures,
        frame_rate=spec.frame_rate,
    )


def generate_corpus(spec: CorpusSpec, output_dir) -> CorpusManifest:
    """Generate every session and write features, truth RTTMs and the manifest.

    Re-running with the same spec produces byte-identical files.
    """
    root = Path(output_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CorpusGenerationError(f"cannot create output directory {root}: {exc}") from exc
    entries = []
    for idx in range(spec.n_sessions):
        bundle = generate_session(spec, idx)
        sdir = root / bundle.session_id
        sdir.mkdir(exist_ok=True)
        try:
            for n, mat in enumerate(bundle.near_field):
                rel = f"{bundle.session_id}/near{n}.dkf"
                write_features(root / rel, mat)
                entries.append(ManifestEntry(bundle.session_id, "near", n, rel))
            for c, mat in enumerate(bundle.far_field):
                rel = f"{bundle.session_id}/far{c}.dkf"
                write_features(root / rel, mat)
                entries.append(ManifestEntry(bundle.session_id, "far", c, rel))
            for n in range(len(bundle.near_field)):
                rel = f"{bundle.session_id}/sig{n}.dkf"
                write_features(root / rel, bundle.speaker_signatures[n : n + 1])
                entries.append(ManifestEntry(bundle.session_id, "sig", n, rel))
            rel = f"{bundle.session_id}/truth.rttm"
            (root / rel).write_text(write_rttm(bundle.truth), encoding="utf-8", newline="\n")
            entries.append(ManifestEntry(bundle.session_id, "truth", 0, rel))
        except OSError as exc:
            raise CorpusGenerationError(f"I/O failure under {sdir}: {exc}") from exc
    manifest = CorpusManifest(root=root, entries=tuple(entries))
    write_manifest(manifest)
    return manifest


def load_session_features(manifest: CorpusManifest, session_id: str):
    """Load (near_field, far_field, signatures) for one session from disk."""
    near = [read_features(manifest.path(e)) for e in manifest.select(session_id, "near")]
    far = [read_features(manifest.path(e)) for e in manifest.select(session_id, "far")]
    sigs = [read_features(manifest.path(e))[0] for e in manifest.select(session_id, "sig")]
    signatures = np.stack(sigs) if sigs else np.zeros((0, 0))
    return near, far, signatures


def load_truth(manifest: CorpusManifest, session_id: str) -> SessionLabels:
    from .timeline import parse_rttm

    entries = manifest.select(session_id, "truth")
    if not entries:
        raise KeyError(f"no truth labels for session {session_id}")
    parsed = parse_rttm(manifest.path(entries[0]).read_text(encoding="utf-8"))
    for labels in parsed:
        if labels.session_id == session_id:
            return labels
    raise KeyError(f"truth file does not contain session {session_id}")


def energy_threshold_activity(channels, frame_rate: float, threshold: float = 0.25) -> ActivityMatrix:
    """Oracle-style SAD: per-channel squared-norm threshold on raw features.

    Used as an independent reference for generator separability and leakage
    tests, not by the pipeline itself.
    """
    rows = [(np.einsum("td,td->t", m.astype(np.float64), m.astype(np.float64)) > threshold) for m in channels]
    frames = np.stack(rows).astype(np.uint8)
    speakers = tuple(f"spk{n}" for n in range(len(channels)))
    return ActivityMatrix(speakers, frames, frame_rate)

"""FOA scene synthesis from mono events with trajectories, plus frame labels.

Events are rendered by direct-path panning (anechoic): per-sample SN3D gains
from the interpolated azimuth/elevation and a 1/distance law. An optional
synthetic exponential-decay diffuse tail is available for robustness tests.
"""

from __future__ import annotations

import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ValidationError
from .foa import FoaClip, read_wav

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MIN_DISTANCE_M = 0.3  # near-field clamp for the 1/distance law
LABEL_FRAME_S = 0.1
METADATA_HEADER = ("frame", "class", "track", "azimuth", "elevation", "distance")


class Keyframe(NamedTuple):
    time: float
    azimuth_deg: float
    elevation_deg: float
    distance_m: float


class LabelRow(NamedTuple):
    frame: int
    class_index: int
    track_index: int
    azimuth_deg: int
    elevation_deg: int
    distance_cm: int


@dataclass(frozen=True)
class SeldFrameLabels:
    """Frame-level ground truth: one row per active (100 ms frame, track)."""

    rows: tuple[LabelRow, ...]

    def __post_init__(self):
        rows = tuple(LabelRow(*r) for r in self.rows)
        for r in rows:
            _check_label_ranges(r)
        object.__setattr__(self, "rows", rows)


def _check_label_ranges(r: LabelRow, line: int | None = None) -> None:
    where = f"line {line}: " if line is not None else ""
    if r.frame < 0 or r.class_index < 0 or r.track_index < 0 or r.distance_cm < 0:
        raise ValidationError(f"{where}negative frame/class/track/distance in {tuple(r)}")
    if not -180 <= r.azimuth_deg < 180:
        raise ValidationError(f"{where}azimuth {r.azimuth_deg} outside [-180, 180)")
    if not -90 <= r.elevation_deg <= 90:
        raise ValidationError(f"{where}elevation {r.elevation_deg} outside [-90, 90]")


@dataclass(frozen=True)
class EventSpec:
    """One spatialized foreground event.

    `source` is a mono sample array or a path to a mono WAV file. Keyframes
    are (time s, azimuth deg, elevation deg, distance m), sorted, and must
    span [onset, offset] unless a single static keyframe is given.
    """

    source: np.ndarray | str | Path
    track_index: int
    onset: float
    offset: float
    trajectory: tuple[Keyframe, ...]
    class_index: int = 0
    gain_db: float = 0.0

    def __post_init__(self):
        if self.track_index < 0 or self.class_index < 0:
            raise ValidationError("class and track indices must be >= 0")
        if not self.onset < self.offset:
            raise ValidationError(
                f"event track {self.track_index}: onset {self.onset} must precede "
                f"offset {self.offset}"
            )
        keys = tuple(Keyframe(*k) for k in self.trajectory)
        if not keys:
            raise ValidationError(f"event track {self.track_index}: empty trajectory")
        arr = np.asarray(keys, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"event track {self.track_index}: non-finite trajectory values")
        times = arr[:, 0]
        if np.any(np.diff(times) <= 0):
            raise ValidationError(f"event track {self.track_index}: keyframe times not sorted")
        if len(keys) > 1 and (times[0] > self.onset + 1e-9 or times[-1] < self.offset - 1e-9):
            raise ValidationError(
                f"event track {self.track_index}: keyframes span "
                f"[{times[0]}, {times[-1]}], event is [{self.onset}, {self.offset}]"
            )
        for k in keys:
            if not -180 <= k.azimuth_deg < 180:
                raise ValidationError(
                    f"event track {self.track_index}: azimuth {k.azimuth_deg} outside [-180, 180)"
                )
            if not -90 <= k.elevation_deg <= 90:
                raise ValidationError(
                    f"event track {self.track_index}: elevation {k.elevation_deg} outside [-90, 90]"
                )
            if k.distance_m <= 0:
                raise ValidationError(
                    f"event track {self.track_index}: distance {k.distance_m} must be > 0"
                )
        object.__setattr__(self, "trajectory", keys)


@dataclass(frozen=True)
class SceneSpec:
    duration: float
    sample_rate: int
    events: tuple[EventSpec, ...] = ()
    noise_snr_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValidationError(f"duration must be > 0, got {self.duration}")
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be > 0, got {self.sample_rate}")
        tracks = [e.track_index for e in self.events]
        if len(set(tracks)) != len(tracks):
            raise ValidationError(f"track indices must be distinct, got {tracks}")
        for e in self.events:
            if e.offset > self.duration + 1e-9:
                raise ValidationError(
                    f"event track {e.track_index} (class {e.class_index}) extends to "
                    f"{e.offset} s, past the scene duration {self.duration} s"
                )
        object.__setattr__(self, "events", tuple(self.events))


def _interpolate(trajectory: Sequence[Keyframe], times: np.ndarray) -> tuple[np.ndarray, ...]:
    arr = np.asarray(trajectory, dtype=np.float64)
    az = np.interp(times, arr[:, 0], arr[:, 1])
    el = np.interp(times, arr[:, 0], arr[:, 2])
    dist = np.interp(times, arr[:, 0], arr[:, 3])
    return az, el, dist


def encode_source(
    mono: np.ndarray,
    trajectory: Sequence[Keyframe] | Sequence[tuple],
    sample_rate: int,
    start_time: float | None = None,
) -> FoaClip:
    """Pan a mono signal to SN3D FOA along an interpolated trajectory.

    Per sample, with azimuth phi, elevation theta, distance rho clamped at
    0.3 m:  W = s/rho, X = s cos(phi)cos(theta)/rho, Y = s sin(phi)cos(theta)/rho,
    Z = s sin(theta)/rho.
    """
    mono = np.asarray(mono, dtype=np.float64)
    if mono.ndim != 1:
        raise ValidationError(f"mono source must be 1-D, got shape {mono.shape}")
    keys = tuple(Keyframe(*k) for k in trajectory)
    arr = np.asarray(keys, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("non-finite trajectory values")
    if start_time is None:
        start_time = keys[0].time
    times = start_time + np.arange(mono.size) / sample_rate
    az, el, dist = _interpolate(keys, times)

    phi = np.deg2rad(az)
    theta = np.deg2rad(el)
    attenuated = mono / np.maximum(dist, MIN_DISTANCE_M)
    samples = np.stack(
        [
            attenuated,
            attenuated * np.cos(phi) * np.cos(theta),
            attenuated * np.sin(phi) * np.cos(theta),
            attenuated * np.sin(theta),
        ]
    )
    return FoaClip(samples, sample_rate)


def diffuse_tail(clip: FoaClip, rt60_s: float, mix: float = 0.1, seed: int = 0) -> FoaClip:
    """Add a synthetic exponential-decay diffuse tail (not a measured room).

    Each channel is convolved with an independent noise burst decaying by
    60 dB over rt60_s; `mix` sets the tail level relative to the dry signal.
    """
    if rt60_s <= 0:
        raise ValidationError(f"rt60_s must be > 0, got {rt60_s}")
    rng = np.random.default_rng(seed)
    n_tail = int(rt60_s * clip.sample_rate)
    decay = np.exp(-6.9077552789821368 * np.arange(n_tail) / n_tail)  # ln(1e3): -60 dB
    out = clip.samples.copy()
    for ch in range(4):
        kernel = rng.standard_normal(n_tail) * decay
        kernel *= mix / np.linalg.norm(kernel)
        out[ch] += np.convolve(clip.samples[ch], kernel)[: clip.n_samples]
    return FoaClip(out, clip.sample_rate)


def _load_source(source, sample_rate: int, track_index: int) -> np.ndarray:
    if isinstance(source, np.ndarray):
        return np.asarray(source, dtype=np.float64)
    try:
        samples, rate = read_wav(source)
    except (OSError, ValidationError) as exc:
        raise ValidationError(f"event track {track_index}: cannot load source {source}: {exc}")
    if samples.shape[0] != 1:
        raise ValidationError(
            f"event track {track_index}: source {source} has {samples.shape[0]} channels, "
            f"expected mono"
        )
    if rate != sample_rate:
        raise ValidationError(
            f"event track {track_index}: source rate {rate} != scene rate {sample_rate}"
        )
    return samples[0]


def render_scene(spec: SceneSpec) -> tuple[FoaClip, SeldFrameLabels]:
    """Render all events into one FOA clip and derive its frame labels.

    Deterministic given (spec, seed). If noise_snr_db is set, independent
    per-channel Gaussian noise is added at the requested full-clip SNR
    relative to the summed event power.
    """
    n_samples = int(round(spec.duration * spec.sample_rate))
    mix = np.zeros((4, n_samples))
    for event in spec.events:
        source = _load_source(event.source, spec.sample_rate, event.track_index)
        start = int(round(event.onset * spec.sample_rate))
        stop = int(round(event.offset * spec.sample_rate))
        span = stop - start
        if source.size < span:
            raise ValidationError(
                f"event track {event.track_index}: source has {source.size} samples, "
                f"event span needs {span}"
            )
        gain = 10.0 ** (event.gain_db / 20.0)
        encoded = encode_source(
            gain * source[:span], event.trajectory, spec.sample_rate, start_time=event.onset
        )
        mix[:, start:stop] += encoded.samples

    if spec.noise_snr_db is not None:
        event_power = float(np.mean(mix**2))
        if event_power == 0.0:
            raise ValidationError("noise_snr_db set but the scene has no event energy")
        rng = np.random.default_rng(spec.seed)
        noise = rng.standard_normal((4, n_samples))
        noise_power = float(np.mean(noise**2))
        mix += noise * np.sqrt(event_power / (noise_power * 10.0 ** (spec.noise_snr_db / 10.0)))

    return FoaClip(mix, spec.sample_rate), _frame_labels(spec)


def _frame_labels(spec: SceneSpec) -> SeldFrameLabels:
    n_frames = int(np.ceil(spec.duration / LABEL_FRAME_S - 1e-9))
    rows = []
    for event in spec.events:
        for k in range(n_frames):
            frame_start = k * LABEL_FRAME_S
            frame_end = frame_start + LABEL_FRAME_S
            overlap = min(event.offset, frame_end) - max(event.onset, frame_start)
            if overlap < 0.5 * LABEL_FRAME_S - 1e-9:
                continue
            center = min(max(frame_start + 0.5 * LABEL_FRAME_S, event.onset), event.offset)
            az, el, dist = _interpolate(event.trajectory, np.array([center]))
            az_deg = int(np.round(az[0]))
            if az_deg >= 180:
                az_deg -= 360
            rows.append(
                LabelRow(
                    frame=k,
                    class_index=event.class_index,
                    track_index=event.track_index,
                    azimuth_deg=az_deg,
                    elevation_deg=int(np.clip(np.round(el[0]), -90, 90)),
                    distance_cm=int(np.round(dist[0] * 100.0)),
                )
            )
    rows.sort(key=lambda r: (r.frame, r.track_index))
    return SeldFrameLabels(tuple(rows))


def export_metadata(labels: SeldFrameLabels, path) -> None:
    """Write labels as CSV: frame,class,track,azimuth,elevation,distance."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METADATA_HEADER)
        for r in labels.rows:
            writer.writerow(tuple(r))


def import_metadata(path) -> SeldFrameLabels:
    """Read a metadata CSV, validating column counts and value ranges."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for line_no, cells in enumerate(reader, start=1):
            if line_no == 1:
                if tuple(cells) != METADATA_HEADER:
                    raise ValidationError(
                        f"line 1: expected header {','.join(METADATA_HEADER)}, got {','.join(cells)}"
                    )
                continue
            if not cells:
                continue
            if len(cells) != 6:
                raise ValidationError(f"line {line_no}: expected 6 columns, got {len(cells)}")
            try:
                row = LabelRow(*(int(c) for c in cells))
            except ValueError:
                raise ValidationError(f"line {line_no}: non-integer field in {cells}")
            _check_label_ranges(row, line=line_no)
            rows.append(row)
    return SeldFrameLabels(tuple(rows))


@dataclass(frozen=True)
class CorpusStats:
    """10-degree histograms of labeled azimuths and elevations."""

    azimuth_counts: np.ndarray = field(default_factory=lambda: np.zeros(36, dtype=np.int64))
    elevation_counts: np.ndarray = field(default_factory=lambda: np.zeros(18, dtype=np.int64))
    n_rows: int = 0

    @staticmethod
    def azimuth_edges() -> np.ndarray:
        return np.arange(-180, 190, 10)

    @staticmethod
    def elevation_edges() -> np.ndarray:
        return np.arange(-90, 100, 10)


def corpus_stats(labels_list: Sequence[SeldFrameLabels]) -> CorpusStats:
    """Histogram the azimuth/elevation of every label row across a corpus."""
    az_counts = np.zeros(36, dtype=np.int64)
    el_counts = np.zeros(18, dtype=np.int64)
    n = 0
    for labels in labels_list:
        for r in labels.rows:
            az_counts[min((r.azimuth_deg + 180) // 10, 35)] += 1
            el_counts[min((r.elevation_deg + 90) // 10, 17)] += 1
            n += 1
    return CorpusStats(az_counts, el_counts, n)


_SCENE_KEYS = {"duration", "sample_rate", "seed", "noise_snr_db", "event"}
_EVENT_KEYS = {"source", "class_index", "track_index", "onset", "offset", "gain_db", "trajectory"}


def load_scene_spec(path) -> SceneSpec:
    """Parse a scene description file (TOML with an [[event]] list).

    Unknown keys are rejected; relative source paths resolve against the
    spec file's directory.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}")

    unknown = set(data) - _SCENE_KEYS
    if unknown:
        raise ValidationError(f"{path}: unknown keys {sorted(unknown)}")
    events = []
    for i, ev in enumerate(data.get("event", [])):
        unknown = set(ev) - _EVENT_KEYS
        if unknown:
            raise ValidationError(f"{path}: event {i}: unknown keys {sorted(unknown)}")
        missing = {"source", "track_index", "onset", "offset", "trajectory"} - set(ev)
        if missing:
            raise ValidationError(f"{path}: event {i}: missing keys {sorted(missing)}")
        source = Path(ev["source"])
        if not source.is_absolute():
            source = path.parent / source
        events.append(
            EventSpec(
                source=source,
                track_index=int(ev["track_index"]),
                onset=float(ev["onset"]),
                offset=float(ev["offset"]),
                trajectory=tuple(tuple(float(v) for v in k) for k in ev["trajectory"]),
                class_index=int(ev.get("class_index", 0)),
                gain_db=float(ev.get("gain_db", 0.0)),
            )
        )
    if "duration" not in data:
        raise ValidationError(f"{path}: missing key 'duration'")
    return SceneSpec(
        duration=float(data["duration"]),
        sample_rate=int(data.get("sample_rate", 16000)),
        events=tuple(events),
        noise_snr_db=(None if "noise_snr_db" not in data else float(data["noise_snr_db"])),
        seed=int(data.get("seed", 0)),
    )

"""Seedable multi-subject 30 Hz motion recordings for the nine locomotion gestures.

Every subject gets a :class:`SubjectProfile` (height, movement amplitude,
cadence, step length, sensor noise) and a :class:`GestureScript` is rendered
into HMD + two thigh-tracker trajectories. Velocities and angular velocities
are exact backward differences of the rendered positions and rotations.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gestures import CHANNELS, DEVICES, LABELS, N_CHANNELS, N_DEVICES, SAMPLE_RATE, label_index

GRAVITY = 9.81

# Share of point-cloud samples per gesture in the reference collection
# (31790, 18409, ... out of 100406).
REFERENCE_COUNTS = {
    "standing": 31790,
    "walking": 18409,
    "jogging": 16857,
    "jumping": 12200,
    "squat_down": 5205,
    "squat_keep": 2278,
    "squat_up": 4688,
    "step_forward": 4522,
    "step_backward": 4457,
}


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: str
    standing_head_height: float
    amplitude_scale: float
    frequency_pref: float
    phase_jitter: float
    noise_sigma: float
    step_length: float
    facing_yaw: float = 0.0
    thigh_offset: float = 0.1

    def __post_init__(self):
        if not 1.4 <= self.standing_head_height <= 2.0:
            raise ValueError("standing_head_height must lie in [1.4, 2.0] m")
        if not 0.5 <= self.amplitude_scale <= 1.5:
            raise ValueError("amplitude_scale must lie in [0.5, 1.5]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def jog_frequency(self) -> float:
        # walking cadence 1.5-2.2 Hz maps linearly onto jogging cadence 2.4-3.2 Hz
        return 2.4 + (self.frequency_pref - 1.5) / 0.7 * 0.8

    @property
    def jump_apex(self) -> float:
        return 0.15 + 0.2 * (self.amplitude_scale - 0.5)

    @property
    def squat_depth(self) -> float:
        return 0.3 + 0.2 * (self.amplitude_scale - 0.5)


@dataclass(frozen=True)
class GestureScript:
    segments: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("gesture script is empty")
        for name, duration in self.segments:
            label_index(name)
            if not duration > 0:
                raise ValueError(f"segment {name!r} has non-positive duration {duration}")

    @property
    def total_duration(self) -> float:
        return float(sum(d for _, d in self.segments))

    @classmethod
    def from_pairs(cls, pairs) -> "GestureScript":
        return cls(tuple((str(name), float(d)) for name, d in pairs))


@dataclass
class Recording:
    """One subject's frame stream.

    ``frames`` has shape (n_frames, 3, 12): devices in ``DEVICES`` order and
    channels in ``CHANNELS`` order. ``labels`` holds per-frame class indices.
    """

    profile: SubjectProfile
    timestamps: np.ndarray
    frames: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def subject_id(self) -> str:
        return self.profile.subject_id

    def __len__(self) -> int:
        return self.frames.shape[0]

    def label_names(self) -> list[str]:
        return [LABELS[i] for i in self.labels]


def sample_subject(seed: int, subject_id: str | None = None) -> SubjectProfile:
    rng = np.random.default_rng([seed, 0x5B1])
    height = float(np.clip(rng.normal(1.70, 0.09), 1.45, 1.95))
    return SubjectProfile(
        subject_id=subject_id if subject_id is not None else f"S{seed}",
        standing_head_height=height,
        amplitude_scale=float(rng.uniform(0.6, 1.4)),
        frequency_pref=float(rng.uniform(1.5, 2.2)),
        phase_jitter=float(rng.uniform(0.0, 0.5)),
        noise_sigma=float(rng.uniform(0.001, 0.003)),
        step_length=float(rng.uniform(0.25, 0.5)),
        facing_yaw=float(rng.uniform(-20.0, 20.0)),
        thigh_offset=float(rng.uniform(0.08, 0.12)),
    )


def default_script(repeats: int = 2, block_seconds: float = 11.0) -> GestureScript:
    """Interleaved gesture blocks whose per-class time shares follow the reference counts."""
    total = sum(REFERENCE_COUNTS.values())
    share = {k: v / total * block_seconds for k, v in REFERENCE_COUNTS.items()}
    rest = share["standing"] / 6.0
    block = [
        ("standing", rest),
        ("walking", share["walking"]),
        ("standing", rest),
        ("jogging", share["jogging"]),
        ("standing", rest),
        ("jumping", share["jumping"]),
        ("standing", rest),
        ("squat_down", share["squat_down"]),
        ("squat_keep", share["squat_keep"]),
        ("squat_up", share["squat_up"]),
        ("standing", rest),
        ("step_forward", share["step_forward"]),
        ("standing", rest),
        ("step_backward", share["step_backward"]),
    ]
    return GestureScript.from_pairs(block * repeats)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


@dataclass
class _Body:
    """Mutable kinematic state carried across segments."""

    x: float
    z: float
    depth: float = 0.0


def _ramp_envelope(t, duration, rise=0.15):
    rise = min(rise, duration / 3.0)
    return np.clip(np.minimum(t / rise, (duration - t) / rise), 0.0, 1.0)


def _render_segment(name, n, profile, body, rng):
    """Return per-frame kinematic parameters for one segment."""
    t = np.arange(n) / SAMPLE_RATE
    duration = n / SAMPLE_RATE
    amp = profile.amplitude_scale
    out = {
        "dx": np.zeros(n),  # forward displacement along facing
        "lift": np.zeros(n),  # whole-body vertical offset (jumps)
        "depth": np.full(n, body.depth),
        "bob": np.zeros(n),
        "pitch_l": np.zeros(n),
        "pitch_r": np.zeros(n),
        "lift_l": np.zeros(n),
        "lift_r": np.zeros(n),
    }

    if name not in ("squat_down", "squat_keep", "squat_up") and body.depth > 0:
        settle = np.clip(1.0 - t / 0.3, 0.0, 1.0)
        out["depth"] = body.depth * settle

    if name in ("walking", "jogging"):
        jog = name == "jogging"
        f = profile.jog_frequency if jog else profile.frequency_pref
        gain = 2.0 if jog else 1.0
        drift = rng.uniform(0, 2 * math.pi)
        phase = 2 * math.pi * f * t + profile.phase_jitter * (
            np.sin(2 * math.pi * 0.3 * t + drift) - math.sin(drift)
        )
        env = _ramp_envelope(t, duration)
        s = np.sin(phase) * env
        out["pitch_l"] = 25.0 * amp * gain * s
        out["pitch_r"] = -out["pitch_l"]
        out["lift_l"] = 0.06 * amp * gain * np.maximum(s, 0.0)
        out["lift_r"] = 0.06 * amp * gain * np.maximum(-s, 0.0)
        out["bob"] = -0.02 * amp * gain * np.cos(phase) * env
    elif name == "jumping":
        apex = profile.jump_apex
        v0 = math.sqrt(2 * GRAVITY * apex)
        air = 2 * v0 / GRAVITY
        crouch = 0.3
        period = crouch + air
        n_jumps = max(int(duration // period), 1)
        for j in range(n_jumps):
            t0 = j * period
            c = (t >= t0) & (t < t0 + crouch)
            u = (t[c] - t0) / crouch
            dip = 0.08 * amp * np.sin(math.pi * u)
            out["lift"][c] -= dip
            out["pitch_l"][c] += 35.0 * np.sin(math.pi * u)
            out["pitch_r"][c] += 35.0 * np.sin(math.pi * u)
            a = (t >= t0 + crouch) & (t < t0 + period)
            ta = t[a] - t0 - crouch
            out["lift"][a] += v0 * ta - 0.5 * GRAVITY * ta**2
            out["pitch_l"][a] += 10.0 * np.sin(math.pi * ta / air)
            out["pitch_r"][a] += 10.0 * np.sin(math.pi * ta / air)
    elif name == "squat_down":
        start = body.depth
        target = profile.squat_depth
        out["depth"] = start + (target - start) * (np.arange(1, n + 1) / n)
    elif name == "squat_up":
        start = body.depth
        out["depth"] = start * (1.0 - np.arange(1, n + 1) / n)
    elif name in ("step_forward", "step_backward"):
        sign = 1.0 if name == "step_forward" else -1.0
        u = np.arange(1, n + 1) / n
        out["dx"] = sign * profile.step_length * (3 * u**2 - 2 * u**3)
        swing = np.sin(math.pi * u)
        if sign > 0:
            out["pitch_r"] = 30.0 * amp * swing
            out["lift_r"] = 0.05 * amp * swing
        else:
            out["pitch_r"] = -15.0 * amp * swing
            out["lift_r"] = 0.04 * amp * swing

    body.depth = float(out["depth"][-1])
    return out


def _wrap_degrees(a):
    return (np.asarray(a) + 180.0) % 360.0 - 180.0


def generate_recording(profile: SubjectProfile, script: GestureScript, seed: int) -> Recording:
    """Render ``script`` for ``profile``; deterministic in ``seed``."""
    if not isinstance(script, GestureScript):
        script = GestureScript.from_pairs(script)
    rng = np.random.default_rng([seed, 0xF4A])

    total = int(round(script.total_duration * SAMPLE_RATE))
    bounds = np.round(np.cumsum([0.0] + [d for _, d in script.segments]) * SAMPLE_RATE).astype(int)

    labels = np.empty(total, dtype=np.int64)
    keys = ("dx", "lift", "depth", "bob", "pitch_l", "pitch_r", "lift_l", "lift_r")
    track = {k: np.zeros(total) for k in keys}
    base_x = np.zeros(total)
    base_z = np.zeros(total)

    facing = math.radians(profile.facing_yaw)
    fwd = np.array([math.sin(facing), math.cos(facing)])
    body = _Body(x=float(rng.uniform(-0.2, 0.2)), z=float(rng.uniform(-0.2, 0.2)))

    for (name, _), lo, hi in zip(script.segments, bounds[:-1], bounds[1:]):
        n = hi - lo
        if n <= 0:
            continue
        seg = _render_segment(name, n, profile, body, rng)
        for k in keys:
            track[k][lo:hi] = seg[k]
        base_x[lo:hi] = body.x + fwd[0] * seg["dx"]
        base_z[lo:hi] = body.z + fwd[1] * seg["dx"]
        body.x = float(base_x[hi - 1])
        body.z = float(base_z[hi - 1])
        labels[lo:hi] = label_index(name)

    t = np.arange(total) / SAMPLE_RATE
    sigma = profile.noise_sigma

    def noise(scale, size):
        return np.clip(rng.normal(0.0, scale, size), -2.5 * scale, 2.5 * scale)

    sway_phase = rng.uniform(0, 2 * math.pi, size=3)
    sway = 0.004 * np.stack([np.sin(2 * math.pi * 0.25 * t + p) for p in sway_phase[:2]], axis=1)
    yaw_drift = 3.0 * np.sin(2 * math.pi * 0.07 * t + sway_phase[2])
    right = np.array([math.cos(facing), -math.sin(facing)])

    H = profile.standing_head_height
    depth = track["depth"]
    lift = track["lift"]

    pos = np.zeros((total, N_DEVICES, 3))
    rot = np.zeros((total, N_DEVICES, 3))

    # head
    lean = 0.15 * depth
    pos[:, 0, 0] = base_x + sway[:, 0] + fwd[0] * lean
    pos[:, 0, 2] = base_z + sway[:, 1] + fwd[1] * lean
    pos[:, 0, 1] = H - depth + lift + track["bob"]
    rot[:, 0, 0] = 8.0 + 40.0 * depth + 2.0 * np.sin(2 * math.pi * 0.2 * t + sway_phase[0])
    rot[:, 0, 1] = profile.facing_yaw + yaw_drift
    rot[:, 0, 2] = 1.5 * np.sin(2 * math.pi * 0.15 * t + sway_phase[1])

    thigh_h = 0.36 * H
    for dev, side, pitch_key, lift_key in ((1, -1.0, "pitch_l", "lift_l"), (2, 1.0, "pitch_r", "lift_r")):
        pitch = track[pitch_key] + 200.0 * depth
        reach = 0.08 + 0.12 * np.sin(np.radians(np.clip(pitch, -90, 90)))
        lateral = side * profile.thigh_offset
        pos[:, dev, 0] = base_x + right[0] * lateral + fwd[0] * reach + sway[:, 0] * 0.5
        pos[:, dev, 2] = base_z + right[1] * lateral + fwd[1] * reach + sway[:, 1] * 0.5
        pos[:, dev, 1] = thigh_h - 0.45 * depth + lift + track[lift_key]
        rot[:, dev, 0] = pitch
        rot[:, dev, 1] = profile.facing_yaw + side * 4.0 + 0.5 * yaw_drift
        rot[:, dev, 2] = side * 3.0

    pos += noise(sigma, pos.shape)
    rot += noise(0.3, rot.shape)
    rot = _wrap_degrees(rot)

    vel = np.empty_like(pos)
    vel[1:] = (pos[1:] - pos[:-1]) * SAMPLE_RATE
    angvel = np.empty_like(rot)
    angvel[1:] = _wrap_degrees(rot[1:] - rot[:-1]) * SAMPLE_RATE
    if total > 1:
        vel[0] = vel[1]
        angvel[0] = angvel[1]
    else:
        vel[0] = 0.0
        angvel[0] = 0.0

    frames = np.concatenate([pos, vel, rot, angvel], axis=2)
    return Recording(profile=profile, timestamps=t, frames=frames, labels=labels, meta={"seed": seed})


def generate_dataset(n_subjects: int, script: GestureScript | None = None, seed: int = 0) -> list[Recording]:
    if n_subjects < 2:
        raise ValueError(
            f"n_subjects={n_subjects}: leave-one-subject-out evaluation needs at least 2 subjects"
        )
    script = script if script is not None else default_script()
    recordings = []
    for i in range(n_subjects):
        profile = sample_subject(seed * 1000 + i, subject_id=f"S{i + 1:02d}")
        recordings.append(generate_recording(profile, script, seed=seed * 1000 + i))
    return recordings


# ---------------------------------------------------------------------------
# recording files
# ---------------------------------------------------------------------------

_PROFILE_FIELDS = [f.name for f in dataclasses.fields(SubjectProfile)]


def frame_columns() -> list[str]:
    return ["timestamp"] + [f"{d}.{c}" for d in DEVICES for c in CHANNELS] + ["label"]


def write_recording(recording: Recording, path) -> None:
    buf = io.StringIO()
    prof = dataclasses.asdict(recording.profile)
    buf.write("#profile," + ",".join(f"{k}={prof[k]!r}" for k in _PROFILE_FIELDS) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(frame_columns())
    flat = recording.frames.reshape(len(recording), -1)
    for ts, row, lab in zip(recording.timestamps, flat, recording.labels):
        writer.writerow([repr(float(ts))] + [repr(float(v)) for v in row] + [LABELS[lab]])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _parse_profile(line: str) -> SubjectProfile:
    if not line.startswith("#profile,"):
        raise ValueError("recording file lacks the '#profile' header line")
    values = {}
    for item in line.strip()[len("#profile,") :].split(","):
        key, _, raw = item.partition("=")
        values[key] = raw
    kwargs = {}
    for f in dataclasses.fields(SubjectProfile):
        raw = values[f.name]
        kwargs[f.name] = raw.strip("'\"") if f.name == "subject_id" else float(raw)
    return SubjectProfile(**kwargs)


def read_recording(path) -> Recording:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    profile = _parse_profile(text[0])
    reader = csv.reader(text[1:])
    header = next(reader)
    if header != frame_columns():
        raise ValueError(f"{path}: unexpected column layout")
    ts, rows, labels = [], [], []
    for rec in reader:
        ts.append(float(rec[0]))
        rows.append([float(v) for v in rec[1:-1]])
        labels.append(label_index(rec[-1]))
    frames = np.asarray(rows, dtype=np.float64).reshape(-1, N_DEVICES, N_CHANNELS)
    return Recording(profile, np.asarray(ts), frames, np.asarray(labels, dtype=np.int64))


def load_recordings(directory) -> list[Recording]:
    paths = sorted(Path(directory).glob("*.csv"))
    if not paths:
        raise FileNotFoundError(f"no recording files in {directory}")
    return [read_recording(p) for p in paths]

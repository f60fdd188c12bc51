"""Gesture stream -> avatar commands (direction, speed, jump, posture)."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .gestures import LABELS, SAMPLE_RATE


@dataclass(frozen=True)
class LocomotionConfig:
    i_min: float = 0.25
    i_max: float = 1.0
    v_min: float = 0.6
    v_max: float = 2.0
    k_jog: float = 2.0
    jump_impulse: tuple[float, float] = (2.0, 4.0)  # (forward, up) N*s
    peak_prominence: float = 0.005
    peak_min_separation: float = 0.15
    smoothing_width: int = 5
    speed_mapping: str = "as-written"  # or "inverted"
    buffer_seconds: float = 2.0
    sample_rate: float = SAMPLE_RATE

    def __post_init__(self):
        if not self.i_min < self.i_max:
            raise ValueError("i_min must be smaller than i_max")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be smaller than v_max")
        if not self.k_jog > 1:
            raise ValueError("k_jog must be greater than 1")
        if self.speed_mapping not in ("as-written", "inverted"):
            raise ValueError(f"unknown speed_mapping {self.speed_mapping!r}")
        if self.smoothing_width < 1:
            raise ValueError("smoothing_width must be >= 1")


def walking_velocity(t_step: float, config: LocomotionConfig = LocomotionConfig()) -> float:
    """Walking speed for a step interval.

    ``as-written``: speed rises linearly from V_min at I_min to V_max at I_max,
    with intervals shorter than I_min mapped to V_max and longer than I_max
    clamped. ``inverted``: the monotone-decreasing variant (short interval ->
    fast).
    """
    if not t_step > 0:
        raise ValueError("t_step must be positive")
    c = config
    if t_step < c.i_min:
        return c.v_max
    t = min(t_step, c.i_max)
    frac = (t - c.i_min) / (c.i_max - c.i_min)
    if c.speed_mapping == "inverted":
        frac = 1.0 - frac
    return frac * (c.v_max - c.v_min) + c.v_min


def jogging_velocity(t_step: float, config: LocomotionConfig = LocomotionConfig()) -> float:
    return min(config.k_jog * walking_velocity(t_step, config), config.k_jog * config.v_max)


def circular_mean_deg(a: float, b: float) -> float:
    """Mean heading of two angles in degrees, in [0, 360)."""
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("angles must be finite")
    x = math.cos(math.radians(a)) + math.cos(math.radians(b))
    y = math.sin(math.radians(a)) + math.sin(math.radians(b))
    if abs(x) < 1e-12 and abs(y) < 1e-12:
        return a % 360.0
    deg = math.degrees(math.atan2(y, x)) % 360.0
    return 0.0 if math.isclose(deg, 360.0, abs_tol=1e-9) else deg


@dataclass(frozen=True)
class AvatarCommand:
    kind: str  # set_velocity | jump | set_posture | set_direction | stop
    value: object = None
    timestamp: float | None = None

    KINDS = ("set_velocity", "jump", "set_posture", "set_direction", "stop")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown command kind {self.kind!r}")

    def to_json(self) -> str:
        value = list(self.value) if isinstance(self.value, tuple) else self.value
        return json.dumps({"kind": self.kind, "value": value, "timestamp": self.timestamp})


@dataclass
class ControllerState:
    forward_direction: float = 0.0
    direction_reversed: bool = False
    posture: str = "upright"
    airborne: bool = False
    left_ground_band: bool = False
    current_velocity: float = 0.0
    hmd_height_buffer: deque = field(default_factory=deque)
    last_max_peak: tuple[float, float] | None = None
    last_min_peak: tuple[float, float] | None = None
    standing_heights: list = field(default_factory=list)


class LocomotionController:
    """Single-owner state machine fed by classifications and HMD/tracker samples."""

    def __init__(self, config: LocomotionConfig = LocomotionConfig()):
        self.config = config
        self.state = ControllerState()
        self.t_step: float | None = None

    # -- direction ----------------------------------------------------------
    def update_direction(self, left_yaw: float, right_yaw: float) -> float:
        heading = circular_mean_deg(left_yaw, right_yaw)
        if self.state.direction_reversed:
            heading = (heading + 180.0) % 360.0
        self.state.forward_direction = heading
        return heading

    # -- step interval from head height --------------------------------------
    def detect_t_step(self, timestamp: float, height: float) -> float | None:
        """Push one HMD height sample; return the latest |t_max - t_min| or None."""
        c = self.config
        buf = self.state.hmd_height_buffer
        if buf and timestamp <= buf[-1][0]:
            raise ValueError(f"out-of-order sample at t={timestamp} (last {buf[-1][0]})")
        buf.append((float(timestamp), float(height)))
        horizon = int(round(c.buffer_seconds * c.sample_rate))
        while len(buf) > horizon:
            buf.popleft()
        self._update_airborne(height)

        w = c.smoothing_width
        if len(buf) < w + 2:
            return None
        times = np.fromiter((t for t, _ in buf), dtype=np.float64, count=len(buf))
        heights = np.fromiter((h for _, h in buf), dtype=np.float64, count=len(buf))
        smooth = kernels.moving_average(heights, w)
        smooth_t = times[(w - 1) // 2 : (w - 1) // 2 + len(smooth)] + ((w - 1) % 2) * 0.5 / c.sample_rate
        distance = c.peak_min_separation * c.sample_rate
        maxima = kernels.find_peaks(smooth, c.peak_prominence, distance)
        minima = kernels.find_peaks(-smooth, c.peak_prominence, distance)
        if len(maxima):
            self.state.last_max_peak = (float(smooth_t[maxima[-1]]), float(smooth[maxima[-1]]))
        if len(minima):
            self.state.last_min_peak = (float(smooth_t[minima[-1]]), float(smooth[minima[-1]]))
        if self.state.last_max_peak is None or self.state.last_min_peak is None:
            return None
        t_step = abs(self.state.last_max_peak[0] - self.state.last_min_peak[0])
        if t_step < c.peak_min_separation:
            return None
        self.t_step = t_step
        return t_step

    def reset_step_tracking(self) -> None:
        self.state.hmd_height_buffer.clear()
        self.state.last_max_peak = None
        self.state.last_min_peak = None
        self.t_step = None

    # -- jump latch ----------------------------------------------------------
    def _standing_band(self) -> tuple[float, float] | None:
        hs = self.state.standing_heights
        if len(hs) < 5:
            return None
        mu = float(np.mean(hs))
        sigma = max(float(np.std(hs)), 0.005)
        return mu, 2.0 * sigma

    def _update_airborne(self, height: float) -> None:
        if not self.state.airborne:
            return
        band = self._standing_band()
        if band is None:
            return
        mu, tol = band
        if abs(height - mu) > tol:
            self.state.left_ground_band = True
        elif self.state.left_ground_band:
            self.state.airborne = False
            self.state.left_ground_band = False

    # -- classification -> commands -----------------------------------------
    def on_gesture(self, gesture: str, timestamp: float | None = None, height: float | None = None) -> list[AvatarCommand]:
        if gesture not in LABELS:
            raise ValueError(f"unknown gesture {gesture!r}")
        s = self.state
        c = self.config
        cmds: list[AvatarCommand] = []

        if gesture == "standing":
            s.current_velocity = 0.0
            s.airborne = False
            s.left_ground_band = False
            self.reset_step_tracking()
            if height is not None:
                s.standing_heights.append(float(height))
                del s.standing_heights[:-90]
            cmds.append(AvatarCommand("stop", 0.0, timestamp))
        elif gesture == "step_backward":
            if not s.direction_reversed:
                s.direction_reversed = True
                s.forward_direction = (s.forward_direction + 180.0) % 360.0
            cmds.append(AvatarCommand("set_direction", s.forward_direction, timestamp))
        elif gesture == "step_forward":
            if s.direction_reversed:
                s.direction_reversed = False
                s.forward_direction = (s.forward_direction + 180.0) % 360.0
            cmds.append(AvatarCommand("set_direction", s.forward_direction, timestamp))
        elif gesture == "jumping":
            if not s.airborne:
                s.airborne = True
                s.left_ground_band = False
                cmds.append(AvatarCommand("jump", tuple(c.jump_impulse), timestamp))
        elif gesture in ("squat_down", "squat_keep"):
            if s.posture != "squatting":
                s.posture = "squatting"
                cmds.append(AvatarCommand("set_posture", "squatting", timestamp))
        elif gesture == "squat_up":
            if s.posture != "upright":
                s.posture = "upright"
                cmds.append(AvatarCommand("set_posture", "upright", timestamp))
        else:  # walking / jogging
            t_step = self.t_step
            if gesture == "walking":
                v = walking_velocity(t_step, c) if t_step else c.v_min
            else:
                v = jogging_velocity(t_step, c) if t_step else c.k_jog * c.v_min
            s.current_velocity = v
            cmds.append(AvatarCommand("set_velocity", v, timestamp))
        return cmds

    def snapshot(self) -> dict:
        s = self.state
        return {
            "forward_direction": s.forward_direction,
            "direction_reversed": s.direction_reversed,
            "posture": s.posture,
            "airborne": s.airborne,
            "current_velocity": s.current_velocity,
            "t_step": self.t_step,
        }


def command_log_lines(commands) -> str:
    return "".join(cmd.to_json() + "\n" for cmd in commands)


__all__ = [
    "AvatarCommand",
    "ControllerState",
    "LocomotionConfig",
    "LocomotionController",
    "circular_mean_deg",
    "command_log_lines",
    "jogging_velocity",
    "walking_velocity",
]

"""Gesture vocabulary and per-point channel layout shared by every module."""

LABELS = (
    "standing",
    "walking",
    "jogging",
    "jumping",
    "squat_down",
    "squat_keep",
    "squat_up",
    "step_forward",
    "step_backward",
)
N_CLASSES = len(LABELS)
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}

DEVICES = ("hmd", "left_tracker", "right_tracker")
N_DEVICES = len(DEVICES)

# Rotation triplets follow the engine's (x, y, z) Euler layout: pitch, yaw, roll.
# y is the vertical axis.
CHANNELS = (
    "pos_x", "pos_y", "pos_z",
    "vel_x", "vel_y", "vel_z",
    "rot_x", "rot_y", "rot_z",
    "angvel_x", "angvel_y", "angvel_z",
)
N_CHANNELS = len(CHANNELS)

POS = slice(0, 3)
VEL = slice(3, 6)
ROT = slice(6, 9)
ANGVEL = slice(9, 12)
YAW_CHANNEL = 7
VERTICAL_AXIS = 1

SAMPLE_RATE = 30.0
# Latency accounting books one frame as 30 ms, so 6 frames = 180 ms and 3 = 90 ms.
NOMINAL_FRAME_MS = 30.0


def label_index(name: str) -> int:
    try:
        return LABEL_INDEX[name]
    except KeyError:
        raise ValueError(f"unknown gesture label {name!r}; expected one of {LABELS}") from None

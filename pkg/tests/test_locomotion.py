import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wipgest.gestures import LABELS
from wipgest.locomotion import (
    AvatarCommand,
    LocomotionConfig,
    LocomotionController,
    circular_mean_deg,
    command_log_lines,
    jogging_velocity,
    walking_velocity,
)

CFG = LocomotionConfig()


def test_config_validation():
    with pytest.raises(ValueError):
        LocomotionConfig(k_jog=1.0)
    with pytest.raises(ValueError):
        LocomotionConfig(i_min=1.0, i_max=0.5)
    with pytest.raises(ValueError):
        LocomotionConfig(v_min=3.0)
    with pytest.raises(ValueError):
        LocomotionConfig(speed_mapping="linear")


def test_walking_velocity_endpoints():
    assert walking_velocity(CFG.i_min, CFG) == CFG.v_min
    assert walking_velocity(CFG.i_min - 0.01, CFG) == CFG.v_max
    assert walking_velocity(CFG.i_max, CFG) == CFG.v_max
    assert walking_velocity(5.0, CFG) == CFG.v_max
    mid = 0.5 * (CFG.i_min + CFG.i_max)
    assert walking_velocity(mid, CFG) == pytest.approx(0.5 * (CFG.v_min + CFG.v_max))
    with pytest.raises(ValueError):
        walking_velocity(0.0, CFG)


def test_inverted_mapping_is_monotone_decreasing():
    inv = LocomotionConfig(speed_mapping="inverted")
    ts = np.linspace(0.05, 1.5, 60)
    v = [walking_velocity(t, inv) for t in ts]
    assert all(a >= b for a, b in zip(v, v[1:]))
    assert walking_velocity(inv.i_min, inv) == inv.v_max
    assert walking_velocity(inv.i_max, inv) == inv.v_min


def test_jogging_velocity():
    # t_step giving walking speed 1.0
    t = CFG.i_min + (1.0 - CFG.v_min) / (CFG.v_max - CFG.v_min) * (CFG.i_max - CFG.i_min)
    assert walking_velocity(t, CFG) == pytest.approx(1.0)
    assert jogging_velocity(t, CFG) == pytest.approx(2.0)


@given(st.floats(0.01, 3.0), st.sampled_from(["as-written", "inverted"]))
def test_velocity_bounds(t, mapping):
    cfg = LocomotionConfig(speed_mapping=mapping)
    w, j = walking_velocity(t, cfg), jogging_velocity(t, cfg)
    assert cfg.v_min <= w <= cfg.v_max
    assert w <= j <= cfg.k_jog * cfg.v_max


def unit_vector_mean(a, b):
    v = np.array([math.cos(math.radians(a)), math.sin(math.radians(a))]) + np.array(
        [math.cos(math.radians(b)), math.sin(math.radians(b))]
    )
    return math.degrees(math.atan2(v[1], v[0])) % 360


def test_direction_examples():
    assert circular_mean_deg(10, 20) == pytest.approx(15)
    assert circular_mean_deg(350, 10) == pytest.approx(0, abs=1e-9)
    assert circular_mean_deg(350, 10) == pytest.approx(unit_vector_mean(350, 10) % 360, abs=1e-9) or unit_vector_mean(
        350, 10
    ) == pytest.approx(360)
    assert circular_mean_deg(90, 90) == pytest.approx(90)
    with pytest.raises(ValueError):
        circular_mean_deg(float("nan"), 0)


@given(st.floats(-720, 720), st.floats(-720, 720))
def test_circular_mean_oracle(a, b):
    diff = abs(((a - b) + 180) % 360 - 180)
    if diff > 179:  # near-antipodal pairs have an ill-conditioned mean
        return
    got = circular_mean_deg(a, b)
    want = unit_vector_mean(a, b)
    assert 0 <= got < 360
    assert min(abs(got - want), 360 - abs(got - want)) < 1e-6


def test_direction_reversal():
    c = LocomotionController()
    assert c.update_direction(10, 20) == pytest.approx(15)
    c.on_gesture("step_backward")
    assert c.state.direction_reversed
    assert c.update_direction(10, 20) == pytest.approx(195)
    c.on_gesture("step_backward")
    assert c.state.direction_reversed  # idempotent
    c.on_gesture("step_forward")
    assert not c.state.direction_reversed
    assert c.update_direction(10, 20) == pytest.approx(15)


def test_gesture_commands():
    c = LocomotionController()
    assert [x.kind for x in c.on_gesture("standing", 0.0)] == ["stop"]
    assert c.state.current_velocity == 0.0
    back = c.on_gesture("step_backward", 0.1)
    assert back[0].kind == "set_direction" and c.state.direction_reversed
    c.on_gesture("step_forward", 0.2)
    assert not c.state.direction_reversed
    assert c.on_gesture("squat_down")[0].value == "squatting"
    assert c.state.posture == "squatting"
    assert c.on_gesture("squat_keep") == []  # already squatting
    assert c.state.posture == "squatting"
    assert c.on_gesture("squat_up")[0].value == "upright"
    walk = c.on_gesture("walking")
    assert walk[0].kind == "set_velocity" and walk[0].value > 0
    jog = c.on_gesture("jogging")
    assert jog[0].value > walk[0].value
    with pytest.raises(ValueError):
        c.on_gesture("flying")


def test_squat_keep_never_raises_posture():
    c = LocomotionController()
    c.on_gesture("squat_down")
    for _ in range(5):
        c.on_gesture("squat_keep")
        assert c.state.posture == "squatting"


def test_velocity_zero_only_on_standing():
    c = LocomotionController()
    for g in LABELS:
        cmds = c.on_gesture(g)
        for cmd in cmds:
            if cmd.kind == "set_velocity":
                assert cmd.value > 0
        if g == "standing":
            assert c.state.current_velocity == 0.0


def feed(controller, t, h):
    out = None
    for ti, hi in zip(t, h):
        r = controller.detect_t_step(float(ti), float(hi))
        out = r if r is not None else out
    return out


def test_t_step_on_sinusoid():
    t = np.arange(90) / 30.0
    c = LocomotionController()
    got = feed(c, t, 1.7 + 0.02 * np.sin(2 * np.pi * 2.0 * t))
    assert got == pytest.approx(0.25, abs=1 / 30)
    assert got >= CFG.peak_min_separation


def test_t_step_none_cases():
    t = np.arange(90) / 30.0
    assert feed(LocomotionController(), t, np.full(90, 1.7)) is None
    assert feed(LocomotionController(), t, 1.7 + 0.002 * np.sin(2 * np.pi * 2.0 * t)) is None


def test_t_step_out_of_order():
    c = LocomotionController()
    c.detect_t_step(1.0, 1.7)
    with pytest.raises(ValueError):
        c.detect_t_step(1.0, 1.7)


def test_t_step_drives_walking_speed_and_resets_on_standing():
    t = np.arange(90) / 30.0
    c = LocomotionController()
    feed(c, t, 1.7 + 0.02 * np.sin(2 * np.pi * 1.0 * t))  # half period 0.5 s
    v = c.on_gesture("walking")[0].value
    assert v == pytest.approx(walking_velocity(c.t_step), rel=1e-12)
    c.on_gesture("standing")
    assert c.t_step is None and len(c.state.hmd_height_buffer) == 0


def test_jump_latch():
    c = LocomotionController()
    for i in range(10):
        c.on_gesture("standing", i / 30, 1.7 + 0.001 * (-1) ** i)
    t0 = 1.0
    assert [x.kind for x in c.on_gesture("jumping", t0)] == ["jump"]
    assert c.on_gesture("jumping", t0 + 0.03) == []  # still latched
    heights = [1.75, 1.9, 1.95, 1.8, 1.7, 1.7]
    for i, h in enumerate(heights):
        c.detect_t_step(t0 + (i + 1) / 30, h)
    assert not c.state.airborne
    assert [x.kind for x in c.on_gesture("jumping", t0 + 0.5)] == ["jump"]


def test_command_json_lines():
    cmds = [AvatarCommand("jump", (2.0, 4.0), 1.5), AvatarCommand("stop", 0.0, 2.0)]
    lines = command_log_lines(cmds).splitlines()
    assert json.loads(lines[0]) == {"kind": "jump", "value": [2.0, 4.0], "timestamp": 1.5}
    with pytest.raises(ValueError):
        AvatarCommand("teleport")

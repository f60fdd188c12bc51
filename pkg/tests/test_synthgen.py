import dataclasses

import numpy as np
import pytest

from wipgest import kernels, synthgen
from wipgest.dataset import WindowConfig, segment_windows
from wipgest.gestures import LABELS, POS, SAMPLE_RATE, VEL, label_index


def profile(seed=0):
    return synthgen.sample_subject(seed, "P")


def script(*pairs):
    return synthgen.GestureScript.from_pairs(pairs)


def test_sample_subject_deterministic_and_distinct():
    assert synthgen.sample_subject(0) == synthgen.sample_subject(0)
    a, b = dataclasses.asdict(synthgen.sample_subject(0)), dataclasses.asdict(synthgen.sample_subject(1))
    assert any(a[k] != b[k] for k in a if k != "subject_id")


def test_sample_subject_ranges():
    for seed in range(1000):
        p = synthgen.sample_subject(seed)
        assert 1.4 <= p.standing_head_height <= 2.0
        assert 0.5 <= p.amplitude_scale <= 1.5
        assert p.noise_sigma >= 0
        assert 1.5 <= p.frequency_pref <= 2.2


def test_profile_validation():
    with pytest.raises(ValueError):
        dataclasses.replace(profile(), standing_head_height=2.5)
    with pytest.raises(ValueError):
        dataclasses.replace(profile(), amplitude_scale=0.1)


def test_script_validation():
    with pytest.raises(ValueError):
        script(("moonwalk", 1.0))
    with pytest.raises(ValueError):
        script(("standing", 0.0))
    with pytest.raises(ValueError):
        synthgen.GestureScript(())


def test_standing_two_seconds():
    p = profile(3)
    rec = synthgen.generate_recording(p, script(("standing", 2.0)), seed=1)
    assert len(rec) == 60
    head = rec.frames[:, 0, 1]
    assert np.all(np.abs(head - p.standing_head_height) <= 3 * p.noise_sigma)
    assert np.all(rec.labels == label_index("standing"))


def test_frame_count_and_timestamps():
    rec = synthgen.generate_recording(profile(), script(("walking", 1.23), ("jogging", 0.51)), seed=0)
    assert len(rec) == round(1.74 * 30)
    np.testing.assert_allclose(np.diff(rec.timestamps), 1 / 30, atol=1e-9)
    assert rec.frames.shape == (len(rec), 3, 12)


def test_walking_head_bob_has_peaks():
    for seed in range(5):
        rec = synthgen.generate_recording(profile(seed), script(("walking", 2.0)), seed=seed)
        peaks = kernels.find_peaks(rec.frames[:, 0, 1], prominence=0.005, distance=1)
        assert len(peaks) >= 2


def test_walking_bob_amplitude():
    p = dataclasses.replace(profile(2), noise_sigma=0.0)
    rec = synthgen.generate_recording(p, script(("walking", 4.0)), seed=0)
    head = rec.frames[30:-30, 0, 1]  # skip the onset envelope
    amp = (head.max() - head.min()) / 2
    assert amp == pytest.approx(0.02 * p.amplitude_scale, rel=0.15)


def test_squat_down_monotone_after_smoothing():
    for seed in range(5):
        rec = synthgen.generate_recording(profile(seed), script(("squat_down", 1.0)), seed=seed)
        smooth = kernels.moving_average(rec.frames[:, 0, 1], 5)
        assert np.all(np.diff(smooth) <= 0)
        drop = rec.frames[0, 0, 1] - rec.frames[-1, 0, 1]
        assert 0.25 <= drop <= 0.55


def test_jump_apex_range():
    p = dataclasses.replace(profile(4), noise_sigma=0.0)
    rec = synthgen.generate_recording(p, script(("standing", 0.5), ("jumping", 2.0)), seed=0)
    rise = rec.frames[:, 0, 1].max() - p.standing_head_height
    assert 0.15 <= rise <= 0.36


def test_steps_translate_horizontally():
    p = dataclasses.replace(profile(5), noise_sigma=0.0)
    for name, sign in (("step_forward", 1), ("step_backward", -1)):
        rec = synthgen.generate_recording(p, script((name, 1.0)), seed=0)
        d = rec.frames[-1, 0, POS] - rec.frames[0, 0, POS]
        assert np.hypot(d[0], d[2]) == pytest.approx(p.step_length, abs=0.03)
        heading = np.radians(p.facing_yaw)
        assert np.sign(d[0] * np.sin(heading) + d[2] * np.cos(heading)) == sign


def test_velocity_is_position_difference():
    rec = synthgen.generate_dataset(2, seed=5)[0]
    pos = rec.frames[:, :, POS]
    vel = rec.frames[:, :, VEL]
    assert np.max(np.abs(vel[1:] - (pos[1:] - pos[:-1]) * SAMPLE_RATE)) < 1e-6


def test_rotation_wrapped():
    rec = synthgen.generate_dataset(2, seed=5)[1]
    rot = rec.frames[:, :, 6:9]
    assert rot.min() >= -180 and rot.max() < 180


def test_determinism():
    a = synthgen.generate_dataset(2, seed=9)
    b = synthgen.generate_dataset(2, seed=9)
    for x, y in zip(a, b):
        assert x.profile == y.profile
        np.testing.assert_array_equal(x.frames, y.frames)
        np.testing.assert_array_equal(x.labels, y.labels)


def test_generate_dataset_counts_and_errors():
    recs = synthgen.generate_dataset(14, seed=0)
    assert len(recs) == 14
    assert len({r.subject_id for r in recs}) == 14
    with pytest.raises(ValueError, match="at least 2"):
        synthgen.generate_dataset(1)


def test_default_script_class_shape():
    rec = synthgen.generate_dataset(2, seed=0)[0]
    assert set(rec.labels) == set(range(len(LABELS)))
    windows = segment_windows(rec, WindowConfig())
    counts = np.bincount(windows.labels, minlength=len(LABELS))
    assert counts.argmax() == label_index("standing")
    assert counts.argmin() == label_index("squat_keep")
    share = counts[label_index("standing")] / counts.sum()
    assert share == pytest.approx(31790 / 100406, abs=0.03)


def test_recording_roundtrip(tmp_path):
    rec = synthgen.generate_dataset(2, seed=1)[0]
    path = tmp_path / "r.csv"
    synthgen.write_recording(rec, path)
    back = synthgen.read_recording(path)
    assert back.profile == rec.profile
    np.testing.assert_array_equal(back.frames, rec.frames)
    np.testing.assert_array_equal(back.labels, rec.labels)
    np.testing.assert_array_equal(back.timestamps, rec.timestamps)
    header = path.read_text().splitlines()[1].split(",")
    assert len(header) == 1 + 36 + 1


def test_read_recording_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("timestamp,x\n")
    with pytest.raises(ValueError):
        synthgen.read_recording(path)

import socket
import threading
import time

import numpy as np
import pytest
import uvicorn
from fastapi.testclient import TestClient

from wipgest.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from wipgest.dataset import WindowConfig, make_loso_split
from wipgest.gestures import LABELS
from wipgest.model import ModelConfig
from wipgest.stream_service import (
    Predictor,
    ReplayConfig,
    create_app,
    parse_bind,
    replay,
    replay_windows,
    write_session,
)
from wipgest.synthgen import Recording
from wipgest.trainer import TrainConfig, fit

TINY = ModelConfig(embed_dims=(8, 8), neighbor_dim=16, attention_dim=16, fused_dim=32, classifier_dims=(16, 8))


@pytest.fixture(scope="module")
def checkpoint_path(small_dataset, tmp_path_factory):
    split = make_loso_split(small_dataset, "S02", WindowConfig(), seed=0)
    result = fit(split, TINY, TrainConfig(epochs=3, batch_size=64, seed=0))
    path = tmp_path_factory.mktemp("svc") / "model.npz"
    save_checkpoint(path, Checkpoint(result.model, result.stats, WindowConfig(), {"target_subject": "S02"}))
    return path


@pytest.fixture(scope="module")
def predictor(checkpoint_path):
    return Predictor.from_path(checkpoint_path)


@pytest.fixture(scope="module")
def client(predictor):
    return TestClient(create_app(predictor))


@pytest.fixture(scope="module")
def live_service(predictor):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    server = uvicorn.Server(uvicorn.Config(create_app(predictor), host="127.0.0.1", port=port, log_level="warning"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 20
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.05)
    yield f"127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=10)


def _payload(rec, end=6):
    return {"frames": rec.frames[end - 6 : end].tolist(), "client_timestamp": float(rec.timestamps[end - 1])}


def _head(rec, n):
    return Recording(rec.profile, rec.timestamps[:n], rec.frames[:n], rec.labels[:n], dict(rec.meta))


def test_health(client, predictor):
    r = client.get("/health")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok" and body["model_id"] == predictor.model_id
    assert body["window_frames"] == 6 and body["step_frames"] == 3
    assert body["labels"] == list(LABELS)


def test_predict_valid(client, small_dataset):
    r = client.post("/predict", json=_payload(small_dataset[1], 60))
    assert r.status_code == 200
    body = r.json()
    assert body["label"] in LABELS
    assert len(body["probabilities"]) == 9
    assert sum(body["probabilities"]) == pytest.approx(1.0, abs=1e-6)
    assert body["inference_ms"] >= 0


def test_predict_bad_inputs(client, small_dataset):
    rec = small_dataset[1]
    five = {"frames": rec.frames[:5].tolist(), "client_timestamp": 0.0}
    assert client.post("/predict", json=five).status_code == 422
    assert client.post("/predict", json={"frames": rec.frames[:6, :, :11].tolist()}).status_code == 422
    nan = rec.frames[:6].copy()
    nan[0, 0, 0] = np.nan
    assert client.post("/predict", content='{"frames": ' + str(nan.tolist()).replace("nan", "NaN") + "}").status_code == 422
    assert client.post("/predict", content=b"{not json").status_code == 400
    assert client.post("/predict", json=[1, 2]).status_code == 400
    assert client.post("/predict", json={"frames": [[1], [1, 2]]}).status_code == 400
    assert client.post("/predict", json={"frames": rec.frames[:6].tolist(), "client_timestamp": "x"}).status_code == 400


def test_identical_requests_identical_responses(client, small_dataset):
    payload = _payload(small_dataset[2], 120)
    a, b = client.post("/predict", json=payload).json(), client.post("/predict", json=payload).json()
    assert a["label"] == b["label"] and a["probabilities"] == b["probabilities"]


def test_service_matches_checkpoint(client, checkpoint_path, small_dataset):
    ckpt = load_checkpoint(checkpoint_path)
    offline = Predictor(ckpt)
    payload = _payload(small_dataset[0], 300)
    label, probs, _ = offline.predict_frames(np.asarray(payload["frames"]))
    body = client.post("/predict", json=payload).json()
    assert body["label"] == label
    np.testing.assert_allclose(body["probabilities"], probs, atol=1e-9)


def test_parse_bind(monkeypatch):
    monkeypatch.delenv("WIP_BIND_ADDR", raising=False)
    assert parse_bind(None) == ("127.0.0.1", 8000)
    assert parse_bind("0.0.0.0:9001") == ("0.0.0.0", 9001)
    monkeypatch.setenv("WIP_BIND_ADDR", "localhost:7000")
    assert parse_bind(None) == ("localhost", 7000)
    with pytest.raises(ValueError):
        parse_bind("nohost")


def test_replay_window_ends():
    w = WindowConfig()
    rec_len = 30
    fake = type("R", (), {"__len__": lambda self: rec_len})()
    assert replay_windows(fake, w, 6) == [6, 12, 18, 24, 30]
    assert replay_windows(fake, w, 3)[:3] == [6, 9, 12]


def test_replay_matches_offline(live_service, predictor, small_dataset, tmp_path):
    rec = small_dataset[1]
    report = replay(rec, live_service, ReplayConfig(submit_every_frames=6))
    ends = replay_windows(rec, predictor.window, 6)
    assert len(report.windows) == len(ends)
    offline = [predictor.predict_frames(rec.frames[e - 6 : e])[0] for e in ends]
    truth = [w.truth for w in report.windows]
    offline_acc = np.mean([a == b for a, b in zip(offline, truth)])
    assert abs(report.accuracy - offline_acc) <= 0.02
    for w in report.windows:
        assert w.latency_ms >= 180.0
        assert w.latency_ms == pytest.approx(180.0 + w.round_trip_ms)
    out = tmp_path / "session.jsonl"
    write_session(report, out)
    assert len(out.read_text().splitlines()) == len(report.windows)


def test_replay_realtime_same_labels(live_service, small_dataset):
    rec = _head(small_dataset[2], 60)  # 2 s of frames
    fast = replay(rec, live_service, ReplayConfig())
    t0 = time.perf_counter()
    slow = replay(rec, live_service, ReplayConfig(realtime=True))
    elapsed = time.perf_counter() - t0
    assert fast.labels == slow.labels
    assert elapsed >= (len(rec) - 1) / 30.0 - 0.05


def test_replay_unreachable():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    t0 = time.perf_counter()
    with pytest.raises(ConnectionError):
        replay(_dummy_recording(), f"127.0.0.1:{port}",
               ReplayConfig(retries=2, backoff_seconds=0.01, timeout_seconds=1.0))
    assert time.perf_counter() - t0 < 10


def _dummy_recording():
    from wipgest.synthgen import default_script, generate_recording, sample_subject

    return _head(generate_recording(sample_subject(1), default_script(1, 2.0), seed=1), 12)

"""HTTP inference service and the replay client that drives the locomotion controller.

Endpoints
---------
``GET /health``   -> ``{"status", "model_id", "window_frames", "step_frames", "labels"}``
``POST /predict`` -> body ``{"frames": [[[12 floats] x 3 devices] x window_frames],
"client_timestamp": float}``; reply ``{"label", "probabilities", "inference_ms",
"model_id"}``. Unparseable or structurally invalid bodies get 400, a frame
array of the wrong shape gets 422.
"""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .checkpoint import Checkpoint, file_digest, load_checkpoint
from .dataset import WindowConfig, normalize
from .gestures import LABELS, N_CHANNELS, N_DEVICES, YAW_CHANNEL
from .kernels import majority_vote
from .locomotion import LocomotionConfig, LocomotionController
from .model import evaluation
from .synthgen import Recording, read_recording

log = logging.getLogger(__name__)

DEFAULT_BIND = "127.0.0.1:8000"


class _BadRequest(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


class Predictor:
    """Immutable model + stats; safe for concurrent read-only use."""

    def __init__(self, ckpt: Checkpoint, model_id: str = "model"):
        self.ckpt = ckpt
        self.model = ckpt.model.eval()
        self.model_id = model_id
        self.window = ckpt.window

    @classmethod
    def from_path(cls, path) -> "Predictor":
        return cls(load_checkpoint(path), model_id=file_digest(path, 12))

    def predict_frames(self, frames: np.ndarray) -> tuple[str, list[float], float]:
        t0 = time.perf_counter()
        x = normalize(frames.reshape(-1, N_CHANNELS), self.ckpt.stats)
        with evaluation(self.model):
            probs = self.model.probabilities(torch.as_tensor(x[None], dtype=torch.float32))[0].double().numpy()
        elapsed = (time.perf_counter() - t0) * 1000.0
        return LABELS[int(np.argmax(probs))], probs.tolist(), elapsed

    def parse(self, body: object) -> np.ndarray:
        if not isinstance(body, dict) or "frames" not in body:
            raise _BadRequest(400, "body must be a JSON object with a 'frames' field")
        ts = body.get("client_timestamp", 0.0)
        if not isinstance(ts, (int, float)) or isinstance(ts, bool):
            raise _BadRequest(400, "client_timestamp must be a number")
        try:
            frames = np.asarray(body["frames"], dtype=np.float64)
        except (TypeError, ValueError):
            raise _BadRequest(400, "frames must be a nested array of numbers") from None
        if frames.dtype == object:
            raise _BadRequest(400, "frames must be a rectangular nested array of numbers")
        expected = (self.window.window_frames, N_DEVICES, N_CHANNELS)
        if frames.shape != expected:
            raise _BadRequest(422, f"frames has shape {list(frames.shape)}, expected {list(expected)}")
        if not np.all(np.isfinite(frames)):
            raise _BadRequest(422, "frames contain non-finite values")
        return frames


def create_app(predictor: Predictor) -> FastAPI:
    app = FastAPI(title="wipgest inference")

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "model_id": predictor.model_id,
            "window_frames": predictor.window.window_frames,
            "step_frames": predictor.window.step_frames,
            "labels": list(LABELS),
        }

    @app.post("/predict")
    async def predict(request: Request):
        raw = await request.body()
        try:
            body = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            return JSONResponse({"error": f"malformed JSON: {exc}"}, status_code=400)
        try:
            frames = predictor.parse(body)
        except _BadRequest as exc:
            return JSONResponse({"error": exc.message}, status_code=exc.status)
        label, probs, ms = predictor.predict_frames(frames)
        return {"label": label, "probabilities": probs, "inference_ms": ms, "model_id": predictor.model_id}

    return app


def parse_bind(address: str | None) -> tuple[str, int]:
    address = address or os.environ.get("WIP_BIND_ADDR") or DEFAULT_BIND
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind address must look like HOST:PORT, got {address!r}")
    return host, int(port)


def serve(checkpoint_path, bind_address: str | None = None) -> None:
    import uvicorn

    host, port = parse_bind(bind_address)
    app = create_app(Predictor.from_path(checkpoint_path))
    uvicorn.run(app, host=host, port=port, log_level="info")


# ---------------------------------------------------------------------------
# replay client
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplayConfig:
    submit_every_frames: int = 6  # 180 ms at 30 Hz; 3 matches the dataset step
    realtime: bool = False
    retries: int = 3
    backoff_seconds: float = 0.2
    timeout_seconds: float = 10.0
    locomotion: LocomotionConfig = field(default_factory=LocomotionConfig)


@dataclass
class WindowRecord:
    frame_index: int
    timestamp: float
    label: str
    truth: str | None
    inference_ms: float
    round_trip_ms: float
    latency_ms: float
    commands: list

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


@dataclass
class SessionReport:
    windows: list[WindowRecord]
    window: WindowConfig
    model_id: str

    @property
    def labels(self) -> list[str]:
        return [w.label for w in self.windows]

    @property
    def accuracy(self) -> float | None:
        scored = [w for w in self.windows if w.truth is not None]
        if not scored:
            return None
        return float(np.mean([w.label == w.truth for w in scored]))

    def to_jsonl(self) -> str:
        return "".join(w.to_json() + "\n" for w in self.windows)


def _post_with_retry(client: httpx.Client, url: str, payload: dict, config: ReplayConfig) -> dict:
    delay = config.backoff_seconds
    for attempt in range(config.retries + 1):
        try:
            resp = client.post(url, json=payload)
            resp.raise_for_status()
            return resp.json()
        except (httpx.TransportError, httpx.HTTPStatusError) as exc:
            status = getattr(getattr(exc, "response", None), "status_code", None)
            if status is not None and 400 <= status < 500:
                raise
            if attempt == config.retries:
                raise ConnectionError(f"service at {url} unreachable after {attempt + 1} attempts: {exc}") from exc
            log.warning("predict attempt %d failed (%s); retrying in %.2fs", attempt + 1, exc, delay)
            time.sleep(delay)
            delay *= 2
    raise AssertionError("unreachable")


def replay_windows(recording: Recording, window: WindowConfig, submit_every: int) -> list[int]:
    """Frame indices (exclusive end) at which a window is submitted."""
    ends = []
    for end in range(window.window_frames, len(recording) + 1):
        if (end - window.window_frames) % submit_every == 0:
            ends.append(end)
    return ends


def replay(
    recording,
    service_address: str,
    config: ReplayConfig = ReplayConfig(),
    client: httpx.Client | None = None,
) -> SessionReport:
    """Stream a recording to the service and drive a locomotion controller.

    ``recording`` is a :class:`Recording` or a path to a recording file.
    """
    if not isinstance(recording, Recording):
        recording = read_recording(recording)
    base = service_address if "://" in service_address else f"http://{service_address}"
    own_client = client is None
    client = client or httpx.Client(base_url=base, timeout=config.timeout_seconds)
    try:
        health = None
        delay = config.backoff_seconds
        for attempt in range(config.retries + 1):
            try:
                health = client.get("/health").json()
                break
            except httpx.TransportError as exc:
                if attempt == config.retries:
                    raise ConnectionError(f"service at {base} unreachable: {exc}") from exc
                time.sleep(delay)
                delay *= 2
        window = WindowConfig(health["window_frames"], health["step_frames"])
        controller = LocomotionController(config.locomotion)
        ends = set(replay_windows(recording, window, config.submit_every_frames))
        period = 1.0 / window.sample_rate
        start_wall = time.perf_counter()
        records = []
        for i in range(len(recording)):
            if config.realtime:
                lag = start_wall + i * period - time.perf_counter()
                if lag > 0:
                    time.sleep(lag)
            frame = recording.frames[i]
            ts = float(recording.timestamps[i])
            controller.detect_t_step(ts, float(frame[0, 1]))
            controller.update_direction(float(frame[1, YAW_CHANNEL]), float(frame[2, YAW_CHANNEL]))
            end = i + 1
            if end not in ends:
                continue
            lo = end - window.window_frames
            payload = {"frames": recording.frames[lo:end].tolist(), "client_timestamp": ts}
            t0 = time.perf_counter()
            reply = _post_with_retry(client, "/predict", payload, config)
            rtt = (time.perf_counter() - t0) * 1000.0
            truth = LABELS[int(majority_vote(recording.labels[lo:end][None], len(LABELS))[0])]
            cmds = controller.on_gesture(reply["label"], ts, float(frame[0, 1]))
            records.append(
                WindowRecord(
                    frame_index=lo,
                    timestamp=ts,
                    label=reply["label"],
                    truth=truth,
                    inference_ms=float(reply["inference_ms"]),
                    round_trip_ms=rtt,
                    latency_ms=window.duration_ms + rtt,
                    commands=[json.loads(c.to_json()) for c in cmds],
                )
            )
        return SessionReport(records, window, health.get("model_id", ""))
    finally:
        if own_client:
            client.close()


def write_session(report: SessionReport, path) -> None:
    Path(path).write_text(report.to_jsonl(), encoding="utf-8")

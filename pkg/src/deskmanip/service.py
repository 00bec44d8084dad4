"""Live goal console backend.

A single WebSocket client drives a free-running scene: the server streams
state messages at a fixed rate while the client posts goal targets, scene
resets, and sampler mode switches. Every message is one line of JSON with
a ``type`` tag; the simulation runs on its own thread and the network side
only exchanges encoded lines with it through queues. When the client falls
behind, old state frames are dropped rather than buffered; command replies
are never dropped.
"""

from __future__ import annotations

import asyncio
import json
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Annotated, Literal, Union

import numpy as np
import torch
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError

from .maskgoal import ENTITIES, MAX_DT, token_from_world_target
from .motion.clip import Dataset, MotionClip
from .motion.templates import generate_clip
from .physics import OBJ, TABLE_CENTER, TABLE_HALF
from .trackenv import TrackingEnv, build_obs, default_basis, table_code

STREAM_HZ = 30
STATE_BACKLOG = 8


class WireError(Exception):
    """Client-visible failure; reason is a short code, detail is prose."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(detail or reason)
        self.reason = reason
        self.detail = detail


# --- wire protocol ----------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GoalWire(_Strict):
    """Client target for one entity, reaching it dt control steps ahead."""

    type: Literal["goal"] = "goal"
    entity: str
    x: float
    y: float
    dt: int = MAX_DT
    theta: float | None = None


class ResetWire(_Strict):
    type: Literal["reset"] = "reset"
    clip: str | None = None
    frame: int = 0


class ModeWire(_Strict):
    """Sampler controls: draw toggles stochastic decoding, steps sets the
    denoising step count; fields left null keep their current value."""

    type: Literal["mode"] = "mode"
    draw: bool | None = None
    steps: int | None = None


class GoalEcho(_Strict):
    entity: str
    dt: int
    x: float
    y: float
    theta: float | None = None


class SceneInfo(_Strict):
    """Static geometry a renderer needs: object polygon (local frame),
    table box as [cx, cy, half_x, half_y], per-body segment lengths, and
    torso half extents."""

    shape_id: str
    vertices: list[list[float]]
    table: list[float]
    link_len: list[float]
    torso_half: list[float]


class ModeInfo(_Strict):
    draw: bool
    steps: int


class StateWire(_Strict):
    """One stream frame: poses are [x, y, theta] per body, contact flags
    follow body order, goals lists the still-active target slots."""

    type: Literal["state"] = "state"
    t: int
    bodies: list[list[float]]
    object: list[float]
    contact: list[bool]
    goals: list[GoalEcho]
    scene: SceneInfo
    mode: ModeInfo


class AckWire(_Strict):
    type: Literal["ack"] = "ack"
    of: Literal["goal", "reset", "mode"]
    detail: dict = Field(default_factory=dict)


class ErrorWire(_Strict):
    type: Literal["error"] = "error"
    reason: str
    detail: str = ""


WireMessage = Annotated[
    Union[GoalWire, ResetWire, ModeWire, StateWire, AckWire, ErrorWire],
    Field(discriminator="type")]
_WIRE = TypeAdapter(WireMessage)


def encode_message(msg: WireMessage) -> str:
    """Single JSON line, no trailing newline."""
    return msg.model_dump_json()


def decode_message(line: str) -> WireMessage:
    """Parse one line; raises WireError("parse") for broken JSON and
    WireError("schema") for valid JSON that is not a known message."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as e:
        raise WireError("parse", str(e)) from None
    if not isinstance(doc, dict) or "type" not in doc:
        raise WireError("schema", "message must be an object with a type")
    try:
        return _WIRE.validate_python(doc)
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise WireError("schema", f"{loc}: {first['msg']}") from None


# --- live scene -------------------------------------------------------------

@dataclass
class _ActiveGoal:
    entity: str
    x: float
    y: float
    theta: float | None
    expires: int          # scene step at which the countdown reaches zero


def _default_clip() -> MotionClip:
    return generate_clip("pick_place")


class LiveScene:
    """Free-running scene stepped by a goal-conditioned student policy.

    Unlike episode rollouts there is no reference clip driving the run;
    clips serve only as named starting configurations for resets.
    """

    def __init__(self, policy, dataset: Dataset | None = None, seed: int = 0):
        from .learn.nets import StudentPolicy
        if not isinstance(policy, StudentPolicy):
            raise ValueError("serving needs a goal-conditioned student policy")
        self.policy = policy
        self.dataset = dataset
        self.seed = seed
        self.basis = default_basis()
        self.draw = False
        self.steps = int(policy.diffusion_steps)
        self.goals: list[_ActiveGoal] = []
        self.gen = torch.Generator()
        self.env: TrackingEnv | None = None
        self.t = 0
        self.reset()

    def _clip_for(self, clip_id: str | None) -> MotionClip:
        if clip_id is None:
            return _default_clip()
        if self.dataset is None:
            raise WireError("clip", "no dataset loaded, only the default "
                                    "scene is available")
        try:
            return self.dataset.by_id(clip_id)
        except KeyError:
            raise WireError("clip", f"unknown clip {clip_id!r}") from None

    def reset(self, clip_id: str | None = None, frame: int = 0) -> dict:
        clip = self._clip_for(clip_id)
        if not 0 <= frame < len(clip):
            raise WireError("frame", f"frame {frame} outside clip of "
                                     f"length {len(clip)}")
        # the env is reused purely as a sim + clip binding; the service
        # never consults its reward or termination logic
        self.env = TrackingEnv(clip, envelope="eval")
        self.env.reset(frame)
        self.t = 0
        self.goals = []
        self.gen.manual_seed(self.seed)
        return {"clip": clip.clip_id if clip_id is not None else "default",
                "frame": frame}

    def begin_session(self) -> None:
        """Fresh-client entry point: default scene and default sampler."""
        self.draw = False
        self.steps = int(self.policy.diffusion_steps)
        self.reset()

    def add_goal(self, msg: GoalWire) -> dict:
        if msg.entity not in ENTITIES:
            raise WireError("entity", f"unknown entity {msg.entity!r}")
        dt = int(np.clip(msg.dt, 1, MAX_DT))
        # one live slot per entity; a repost moves the target
        self.goals = [g for g in self.goals if g.entity != msg.entity]
        self.goals.append(_ActiveGoal(msg.entity, msg.x, msg.y, msg.theta,
                                      self.t + dt))
        return {"entity": msg.entity, "dt": dt}

    def set_mode(self, msg: ModeWire) -> dict:
        if msg.draw is not None:
            self.draw = bool(msg.draw)
        if msg.steps is not None:
            self.steps = int(np.clip(msg.steps, 1,
                                     self.policy.diffusion_steps))
        return {"draw": self.draw, "steps": self.steps}

    def _scene_info(self) -> SceneInfo:
        env = self.env
        m = env.clip.morphology
        return SceneInfo(
            shape_id=env.clip.shape_id,
            vertices=env.shape.vertices.tolist(),
            table=[*TABLE_CENTER, *TABLE_HALF],
            link_len=m.link_lengths().tolist(),
            torso_half=list(m.torso_half))

    def step(self) -> StateWire:
        from .learn.nets import student_act
        env = self.env
        self.goals = [g for g in self.goals if g.expires > self.t]
        rows = [token_from_world_target(env.world, g.entity,
                                        g.expires - self.t, g.x, g.y,
                                        g.theta).vector()
                for g in self.goals]
        obs = build_obs(env.world, env.shape, env.basis)
        s = np.concatenate([obs.vector(), table_code(env.world, env.basis)])
        ts = torch.from_numpy(s)[None]
        tk = (torch.from_numpy(np.stack(rows))[None] if rows
              else torch.zeros((1, 0, 11), dtype=torch.float64))
        head = self.policy.head
        gen = self.gen if (head == "diffusion"
                           or (head == "cvae" and self.draw)) else None
        a = student_act(self.policy, ts, tk, gen,
                        diffusion_steps=self.steps if head == "diffusion"
                        else None)
        world, report = env.sim.step(env.world, a[0].numpy())
        env.world = world
        self.t += 1
        alive = [g for g in self.goals if g.expires > self.t]
        return StateWire(
            t=self.t,
            bodies=[[round(v, 6) for v in row]
                    for row in world.body_poses().tolist()],
            object=[round(v, 6) for v in
                    [*world.pos[OBJ].tolist(), float(world.theta[OBJ])]],
            contact=[bool(c) for c in report.object_contact],
            goals=[GoalEcho(entity=g.entity, dt=g.expires - self.t,
                            x=g.x, y=g.y, theta=g.theta) for g in alive],
            scene=self._scene_info(),
            mode=ModeInfo(draw=self.draw, steps=self.steps))


# --- threading --------------------------------------------------------------

class Outbox:
    """State frames ride a bounded deque that drops oldest on overflow;
    acks and errors ride an unbounded one and are sent first."""

    def __init__(self, backlog: int = STATE_BACKLOG):
        self.cond = threading.Condition()
        self.states: deque[str] = deque(maxlen=backlog)
        self.replies: deque[str] = deque()

    def put_state(self, line: str) -> None:
        with self.cond:
            self.states.append(line)
            self.cond.notify()

    def put_reply(self, line: str) -> None:
        with self.cond:
            self.replies.append(line)
            self.cond.notify()

    def pop(self, timeout: float = 0.25) -> str | None:
        with self.cond:
            self.cond.wait_for(lambda: self.replies or self.states, timeout)
            if self.replies:
                return self.replies.popleft()
            if self.states:
                return self.states.popleft()
            return None


class ServiceWorker(threading.Thread):
    """Owns the scene: applies queued commands between control steps and
    pushes one state frame per tick. Nothing else touches the sim."""

    def __init__(self, scene: LiveScene, outbox: Outbox,
                 rate_hz: float = STREAM_HZ):
        super().__init__(daemon=True)
        self.scene = scene
        self.outbox = outbox
        self.period = 1.0 / rate_hz
        self.inbound: queue.Queue = queue.Queue()
        self.stop_event = threading.Event()

    def submit(self, msg: WireMessage) -> None:
        self.inbound.put(msg)

    def _apply(self, msg: WireMessage) -> str:
        try:
            if isinstance(msg, GoalWire):
                return encode_message(AckWire(of="goal",
                                              detail=self.scene.add_goal(msg)))
            if isinstance(msg, ResetWire):
                return encode_message(
                    AckWire(of="reset",
                            detail=self.scene.reset(msg.clip, msg.frame)))
            if isinstance(msg, ModeWire):
                return encode_message(AckWire(of="mode",
                                              detail=self.scene.set_mode(msg)))
            raise WireError("unsupported",
                            f"clients cannot send {msg.type!r}")
        except WireError as e:
            return encode_message(ErrorWire(reason=e.reason, detail=e.detail))

    def run(self) -> None:
        next_tick = time.monotonic()
        while not self.stop_event.is_set():
            while True:
                try:
                    msg = self.inbound.get_nowait()
                except queue.Empty:
                    break
                self.outbox.put_reply(self._apply(msg))
            try:
                state = self.scene.step()
            except Exception as e:  # solver blowup: report, restart clean
                self.outbox.put_reply(encode_message(
                    ErrorWire(reason="sim", detail=str(e))))
                self.scene.reset()
                state = self.scene.step()
            self.outbox.put_state(encode_message(state))
            next_tick += self.period
            delay = next_tick - time.monotonic()
            if delay > 0:
                self.stop_event.wait(delay)
            else:
                next_tick = time.monotonic()   # fell behind: skip, not buffer

    def stop(self) -> None:
        self.stop_event.set()
        self.join(timeout=2.0)


# --- application ------------------------------------------------------------

def create_app(policy, dataset: Dataset | None = None,
               seed: int = 0) -> FastAPI:
    """FastAPI app exposing the console endpoint at /ws. One client at a
    time; later connections are refused with an error message."""
    app = FastAPI(title="deskmanip goal console")
    scene = LiveScene(policy, dataset, seed)
    seat = threading.Semaphore(1)

    @app.get("/health")
    def health() -> dict:
        return {"ok": True, "head": policy.head}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        if not seat.acquire(blocking=False):
            await ws.send_text(encode_message(
                ErrorWire(reason="busy",
                          detail="another client is connected")))
            await ws.close()
            return
        outbox = Outbox()
        scene.begin_session()
        worker = ServiceWorker(scene, outbox)
        worker.start()
        loop = asyncio.get_running_loop()

        async def pump() -> None:
            while True:
                line = await loop.run_in_executor(None, outbox.pop, 0.25)
                if line is not None:
                    await ws.send_text(line)

        sender = asyncio.create_task(pump())
        try:
            while True:
                raw = await ws.receive_text()
                for piece in raw.splitlines():
                    if not piece.strip():
                        continue
                    try:
                        worker.submit(decode_message(piece))
                    except WireError as e:
                        outbox.put_reply(encode_message(
                            ErrorWire(reason=e.reason, detail=e.detail)))
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            worker.stop()
            seat.release()

    return app


def run_service(policy, host: str = "127.0.0.1", port: int = 8765,
                dataset: Dataset | None = None) -> None:
    import uvicorn
    uvicorn.run(create_app(policy, dataset), host=host, port=port,
                log_level="warning")

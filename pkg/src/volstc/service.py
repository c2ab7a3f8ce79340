"""Session service: volume registry, per-session state, frames, and picking.

Sessions follow a single-writer discipline. State mutations for a session
are serialized by its lock and each accepted update bumps the revision by
exactly one; frame rendering takes a snapshot under the lock and runs
outside it, so a frame labeled revision r reflects exactly the state that
had revision r. Volumes are loaded once and shared read-only.

Wire formats (see README for the endpoint list):
  frames over HTTP   PNG body, X-Revision and X-Frame-Meta (JSON) headers
  frames over WS     binary: u32 LE revision, u32 LE meta length, meta JSON
                     (UTF-8), then the PNG bytes
"""
from __future__ import annotations

import json
import math
import struct
import threading
import uuid
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Query, WebSocket, WebSocketDisconnect
from fastapi.responses import Response
from starlette.concurrency import run_in_threadpool

from .cluster import (DEFAULT_EPS, DEFAULT_LAMBDA_A_OFFSET, DEFAULT_MIN_PTS,
                      PICK_SPOTLIGHT_PADDING, ClusterCache, pick,
                      summarize_cluster)
from .frame import RenderContext, encode_png, pixel_ray, render_frame
from .model import (Camera, SelectionState, SpaceTimeVolume, default_z_scale,
                    read_volume)
from .transfer import RenderSettings, TransferFunction

_CAMERA_VEC_KEYS = ("eye", "target", "up")
_CAMERA_KEYS = {"eye", "target", "up", "vfov"}
_SETTINGS_KEYS = {"lambda_v", "lambda_i", "surface_enabled", "step",
                  "empty_space_skipping", "v_min", "v_max",
                  "opacity_max", "opacity_gamma", "background"}
_SELECTION_KEYS = {"t_lo", "t_hi", "spotlight", "selected_cluster"}
_CLUSTER_KEYS = {"lambda_a", "eps", "min_pts"}
_ALL_KEYS = _CAMERA_KEYS | _SETTINGS_KEYS | _SELECTION_KEYS | _CLUSTER_KEYS


def default_camera(volume: SpaceTimeVolume, z_scale: Optional[float] = None,
                   vfov: float = 40.0) -> Camera:
    """Camera south of the box, raised, far enough to frame it whole.

    The eye sits at distance R * (1 + 1 / tan(vfov / 2)) from the center
    (R = bounding-sphere radius) plus slack, which keeps every corner inside
    the vertical field of view for any aspect ratio >= 1.
    """
    zs = z_scale if z_scale is not None else default_z_scale(volume.m,
                                                             volume.n,
                                                             volume.T)
    cx = volume.m / 2.0
    cy = volume.n / 2.0
    cz = volume.T * zs / 2.0
    R = 0.5 * math.sqrt(volume.m ** 2 + volume.n ** 2 + (volume.T * zs) ** 2)
    d = R * (1.0 + 1.0 / math.tan(math.radians(vfov / 2.0))) * 1.05
    view = np.array([0.0, -1.0, 0.45])
    view /= np.linalg.norm(view)
    eye = np.array([cx, cy, cz]) + view * d
    return Camera(eye=(float(eye[0]), float(eye[1]), float(eye[2])),
                  target=(cx, cy, cz), up=(0.0, 0.0, 1.0), vfov=vfov)


def default_settings(volume: SpaceTimeVolume) -> RenderSettings:
    return RenderSettings(tf=TransferFunction.for_range(volume.value_range))


@dataclass
class Session:
    """Mutable per-client state; field objects are replaced, never edited."""

    id: str
    volume_id: str
    camera: Camera
    settings: RenderSettings
    selection: SelectionState
    revision: int = 0
    lambda_a: Optional[float] = None  # None: track lambda_v + offset
    eps: float = DEFAULT_EPS
    min_pts: int = DEFAULT_MIN_PTS
    last_frame_size: Optional[tuple] = None  # (w, h) of the last delivered frame

    def effective_lambda_a(self) -> float:
        if self.lambda_a is not None:
            return self.lambda_a
        return self.settings.lambda_v + DEFAULT_LAMBDA_A_OFFSET


class VolumeRegistry:
    """Volumes keyed by opaque id; re-registering a path reuses its id."""

    def __init__(self):
        self._lock = threading.Lock()
        self._volumes: dict = {}
        self._ids_by_path: dict = {}

    def register_path(self, path) -> str:
        resolved = str(Path(path).resolve())
        with self._lock:
            known = self._ids_by_path.get(resolved)
            if known is not None:
                return known
        volume = read_volume(resolved)
        with self._lock:
            known = self._ids_by_path.get(resolved)
            if known is not None:
                return known
            vid = "v-" + uuid.uuid4().hex[:12]
            self._volumes[vid] = volume
            self._ids_by_path[resolved] = vid
            return vid

    def add(self, volume: SpaceTimeVolume) -> str:
        """Register an in-memory volume (tests, pipelines)."""
        with self._lock:
            vid = "v-" + uuid.uuid4().hex[:12]
            self._volumes[vid] = volume
            return vid

    def get(self, volume_id: str) -> SpaceTimeVolume:
        with self._lock:
            try:
                return self._volumes[volume_id]
            except KeyError:
                raise KeyError(f"volume {volume_id} not found") from None

    def meta(self, volume_id: str) -> dict:
        v = self.get(volume_id)
        return {
            "id": volume_id,
            "m": v.m,
            "n": v.n,
            "T": v.T,
            "t0": v.t0,
            "dt": v.dt,
            "extent": list(v.grid.extent),
            "value_range": [float(v.value_range[0]), float(v.value_range[1])],
            "z_scale": default_z_scale(v.m, v.n, v.T),
        }


def _as_vec3(value, key):
    try:
        x, y, z = (float(c) for c in value)
    except (TypeError, ValueError):
        raise ValueError(f"{key} must be a 3-vector")
    return (x, y, z)


def _as_bool(value, key):
    if not isinstance(value, bool):
        raise ValueError(f"{key} must be a boolean")
    return value


def _as_float(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{key} must be a number")
    v = float(value)
    if not math.isfinite(v):
        raise ValueError(f"{key} must be finite")
    return v


def _view_camera(camera: Camera, width, height, last_size) -> Camera:
    """Camera sized for pixel-space requests.

    Pixel coordinates refer to the last delivered frame unless the caller
    names a size explicitly; before any frame, the camera's own size holds.
    """
    if width is None and height is None and last_size is not None:
        width, height = last_size
    if width is None and height is None:
        return camera
    return replace(camera, width=int(width or camera.width),
                   height=int(height or camera.height))


class SessionService:
    """Owns the registry, the sessions, and the shared cluster cache."""

    def __init__(self, registry: Optional[VolumeRegistry] = None,
                 map_image=None, cluster_cache: Optional[ClusterCache] = None):
        self.registry = registry or VolumeRegistry()
        self.map_image = map_image
        self.cluster_cache = cluster_cache or ClusterCache()
        self._sessions: dict = {}
        self._locks: dict = {}
        self._lock = threading.Lock()

    # -- lifecycle -------------------------------------------------------

    def create_session(self, volume_id: str) -> dict:
        volume = self.registry.get(volume_id)
        session = Session(
            id="s-" + uuid.uuid4().hex[:12],
            volume_id=volume_id,
            camera=default_camera(volume),
            settings=default_settings(volume),
            selection=SelectionState.full(volume.T),
        )
        with self._lock:
            self._sessions[session.id] = session
            self._locks[session.id] = threading.Lock()
        return self.state_dict(session)

    def _session(self, session_id: str):
        with self._lock:
            try:
                return self._sessions[session_id], self._locks[session_id]
            except KeyError:
                raise KeyError(f"session {session_id} not found") from None

    def state_dict(self, session: Session) -> dict:
        cam = session.camera
        st = session.settings
        sel = session.selection
        return {
            "id": session.id,
            "volume_id": session.volume_id,
            "revision": session.revision,
            "camera": {
                "eye": list(cam.eye),
                "target": list(cam.target),
                "up": list(cam.up),
                "vfov": cam.vfov,
            },
            "settings": {
                "lambda_v": st.lambda_v,
                "lambda_i": st.lambda_i,
                "surface_enabled": st.surface_enabled,
                "step": st.step,
                "empty_space_skipping": st.empty_space_skipping,
                "v_min": st.tf.v_min,
                "v_max": st.tf.v_max,
                "opacity_max": st.tf.opacity_max,
                "opacity_gamma": st.tf.opacity_gamma,
            },
            "selection": {
                "t_lo": int(sel.time_range[0]),
                "t_hi": int(sel.time_range[1]),
                "spotlight": list(sel.spotlight) if sel.spotlight else None,
                "selected_cluster": sel.selected_cluster,
            },
            "clusters": {
                "lambda_a": session.lambda_a,
                "effective_lambda_a": session.effective_lambda_a(),
                "eps": session.eps,
                "min_pts": session.min_pts,
            },
        }

    # -- state updates ---------------------------------------------------

    def update_state(self, session_id: str, patch: dict) -> dict:
        """Apply a flat partial patch atomically; reject leaves state as-is."""
        session, lock = self._session(session_id)
        if not isinstance(patch, dict):
            raise ValueError("patch must be an object")
        unknown = set(patch) - _ALL_KEYS
        if unknown:
            raise ValueError(f"unknown fields: {sorted(unknown)}")
        volume = self.registry.get(session.volume_id)
        with lock:
            camera = self._patched_camera(session.camera, patch)
            settings = self._patched_settings(session.settings, patch)
            selection = self._patched_selection(session.selection, patch,
                                                volume.T)
            lambda_a = session.lambda_a
            eps = session.eps
            min_pts = session.min_pts
            if "lambda_a" in patch:
                lambda_a = (None if patch["lambda_a"] is None
                            else _as_float(patch["lambda_a"], "lambda_a"))
            if "eps" in patch:
                eps = _as_float(patch["eps"], "eps")
                if not eps > 0:
                    raise ValueError("eps must be positive")
            if "min_pts" in patch:
                min_pts = int(patch["min_pts"])
                if min_pts < 1:
                    raise ValueError("min_pts must be >= 1")
            # all validated: commit
            session.camera = camera
            session.settings = settings
            session.selection = selection
            session.lambda_a = lambda_a
            session.eps = eps
            session.min_pts = min_pts
            session.revision += 1
            return self.state_dict(session)

    @staticmethod
    def _patched_camera(camera: Camera, patch: dict) -> Camera:
        fields = {}
        for key in _CAMERA_VEC_KEYS:
            if key in patch:
                fields[key] = _as_vec3(patch[key], key)
        if "vfov" in patch:
            fields["vfov"] = _as_float(patch["vfov"], "vfov")
        if not fields:
            return camera
        cam = replace(camera, **fields)
        cam.validate()
        return cam

    @staticmethod
    def _patched_settings(settings: RenderSettings, patch: dict) -> RenderSettings:
        fields = {}
        if "lambda_v" in patch:
            fields["lambda_v"] = _as_float(patch["lambda_v"], "lambda_v")
        if "lambda_i" in patch:
            v = patch["lambda_i"]
            fields["lambda_i"] = None if v is None else _as_float(v, "lambda_i")
        if "surface_enabled" in patch:
            fields["surface_enabled"] = _as_bool(patch["surface_enabled"],
                                                 "surface_enabled")
        if "step" in patch:
            v = patch["step"]
            fields["step"] = None if v is None else _as_float(v, "step")
        if "empty_space_skipping" in patch:
            fields["empty_space_skipping"] = _as_bool(
                patch["empty_space_skipping"], "empty_space_skipping")
        if "background" in patch:
            fields["background"] = _as_vec3(patch["background"], "background")
        tf_fields = {}
        if "v_min" in patch:
            tf_fields["v_min"] = _as_float(patch["v_min"], "v_min")
        if "v_max" in patch:
            tf_fields["v_max"] = _as_float(patch["v_max"], "v_max")
        if "opacity_max" in patch:
            tf_fields["opacity_max"] = _as_float(patch["opacity_max"],
                                                 "opacity_max")
        if "opacity_gamma" in patch:
            tf_fields["opacity_gamma"] = _as_float(patch["opacity_gamma"],
                                                   "opacity_gamma")
        if tf_fields:
            fields["tf"] = replace(settings.tf, **tf_fields)
        if not fields:
            return settings
        return replace(settings, **fields)

    @staticmethod
    def _patched_selection(selection: SelectionState, patch: dict,
                           T: int) -> SelectionState:
        t_lo, t_hi = selection.time_range
        spotlight = selection.spotlight
        selected = selection.selected_cluster
        if "t_lo" in patch:
            t_lo = int(_as_float(patch["t_lo"], "t_lo"))
        if "t_hi" in patch:
            t_hi = int(_as_float(patch["t_hi"], "t_hi"))
        t_lo = min(max(t_lo, 0), T - 1)
        t_hi = min(max(t_hi, 0), T - 1)
        if t_lo > t_hi:
            t_lo, t_hi = t_hi, t_lo
        if "spotlight" in patch:
            v = patch["spotlight"]
            spotlight = None if v is None else tuple(
                _as_float(c, "spotlight") for c in v)
            if spotlight is not None and len(spotlight) != 3:
                raise ValueError("spotlight must be [cx, cy, r] or null")
        if "selected_cluster" in patch:
            v = patch["selected_cluster"]
            selected = None if v is None else int(v)
        sel = SelectionState(time_range=(t_lo, t_hi), spotlight=spotlight,
                             selected_cluster=selected)
        sel.validate(T)
        return sel

    # -- frames ----------------------------------------------------------

    def snapshot(self, session_id: str):
        session, lock = self._session(session_id)
        with lock:
            return (session.camera, session.settings, session.selection,
                    session.revision)

    def frame(self, session_id: str, width: int, height: int):
        """Render a snapshot; returns (png bytes, meta dict incl. revision)."""
        if width < 1 or height < 1 or width > 4096 or height > 4096:
            raise ValueError("frame size out of range")
        session, _ = self._session(session_id)
        volume = self.registry.get(session.volume_id)
        camera, settings, selection, revision = self.snapshot(session_id)
        camera = replace(camera, width=int(width), height=int(height))
        context = RenderContext(map_image=self.map_image)
        image, meta = render_frame(volume, camera, settings, selection,
                                   context)
        meta_dict = meta.to_dict()
        meta_dict["revision"] = revision
        _, lock = self._session(session_id)
        with lock:
            session.last_frame_size = (int(width), int(height))
        return encode_png(image), meta_dict

    # -- picking ---------------------------------------------------------

    def pick(self, session_id: str, px: float, py: float,
             width: Optional[int] = None,
             height: Optional[int] = None) -> dict:
        """Resolve a click; a hit slices time to the cluster and spotlights it."""
        session, lock = self._session(session_id)
        volume = self.registry.get(session.volume_id)
        with lock:
            camera = session.camera
            selection = session.selection
            lambda_a = session.effective_lambda_a()
            eps = session.eps
            min_pts = session.min_pts
            revision = session.revision
            last_size = session.last_frame_size
        camera = _view_camera(camera, width, height, last_size)
        future = self.cluster_cache.get(volume, session.volume_id, lambda_a,
                                        eps, min_pts)
        clusters = future.result()
        summary = pick(volume, clusters, camera, (float(px), float(py)),
                       lambda_a, selection)
        if summary is None:
            return {"hit": False, "revision": revision}
        cx, cy, r = summary.circle
        with lock:
            session.selection = SelectionState(
                time_range=(summary.t_min, summary.t_max),
                spotlight=(cx, cy, r + PICK_SPOTLIGHT_PADDING),
                selected_cluster=summary.id,
            )
            session.selection.validate(volume.T)
            session.revision += 1
            return {"hit": True, "summary": summary.to_dict(),
                    "revision": session.revision,
                    "state": self.state_dict(session)}

    def map_point(self, session_id: str, px: float, py: float,
                  width: Optional[int] = None,
                  height: Optional[int] = None) -> dict:
        """Pixel -> cell coordinates where its ray meets the base-map plane."""
        session, lock = self._session(session_id)
        volume = self.registry.get(session.volume_id)
        with lock:
            camera = session.camera
            t_lo = int(session.selection.time_range[0])
            last_size = session.last_frame_size
        camera = _view_camera(camera, width, height, last_size)
        zs = default_z_scale(volume.m, volume.n, volume.T)
        ray = pixel_ray(camera, float(px), float(py))
        origin, direction = ray.unit()
        plane_z = t_lo * zs
        if abs(direction[2]) < 1e-12:
            return {"hit": False}
        s = (plane_z - origin[2]) / direction[2]
        if s <= 0:
            return {"hit": False}
        x = float(origin[0] + s * direction[0])
        y = float(origin[1] + s * direction[1])
        if not (0.0 <= x <= volume.m and 0.0 <= y <= volume.n):
            return {"hit": False}
        return {"hit": True, "x": x, "y": y, "t": t_lo}

    def clusters(self, volume_id: str, lambda_a: float,
                 eps: float = DEFAULT_EPS,
                 min_pts: int = DEFAULT_MIN_PTS) -> list:
        volume = self.registry.get(volume_id)
        if not eps > 0:
            raise ValueError("eps must be positive")
        if min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        future = self.cluster_cache.get(volume, volume_id, float(lambda_a),
                                        float(eps), int(min_pts))
        return [summarize_cluster(c).to_dict() for c in future.result()]


def create_app(map_image=None, registry: Optional[VolumeRegistry] = None,
               service: Optional[SessionService] = None) -> FastAPI:
    svc = service or SessionService(registry=registry, map_image=map_image)
    app = FastAPI(title="volstc session service", docs_url=None,
                  redoc_url=None)
    app.state.service = svc

    def _get(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except (ValueError, FileNotFoundError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/volumes")
    def register_volume(body: dict = Body(...)):
        path = body.get("path")
        if not isinstance(path, str) or not path:
            raise HTTPException(status_code=400, detail="path required")
        vid = _get(svc.registry.register_path, path)
        return {"id": vid, "meta": svc.registry.meta(vid)}

    @app.get("/volumes/{volume_id}/meta")
    def volume_meta(volume_id: str):
        return _get(svc.registry.meta, volume_id)

    @app.get("/volumes/{volume_id}/clusters")
    def volume_clusters(volume_id: str, lambda_a: float = Query(...),
                        eps: float = Query(DEFAULT_EPS),
                        min_pts: int = Query(DEFAULT_MIN_PTS)):
        return {"clusters": _get(svc.clusters, volume_id, lambda_a, eps,
                                 min_pts)}

    @app.post("/sessions")
    def create_session(body: dict = Body(...)):
        volume_id = body.get("volume_id")
        if not isinstance(volume_id, str):
            raise HTTPException(status_code=400, detail="volume_id required")
        return _get(svc.create_session, volume_id)

    @app.patch("/sessions/{session_id}/state")
    def patch_state(session_id: str, patch: dict = Body(...)):
        return _get(svc.update_state, session_id, patch)

    @app.get("/sessions/{session_id}/frame")
    def get_frame(session_id: str, w: int = Query(512), h: int = Query(512)):
        png, meta = _get(svc.frame, session_id, w, h)
        return Response(content=png, media_type="image/png", headers={
            "X-Revision": str(meta["revision"]),
            "X-Frame-Meta": json.dumps(meta),
        })

    @app.post("/sessions/{session_id}/pick")
    def post_pick(session_id: str, body: dict = Body(...)):
        if "px" not in body or "py" not in body:
            raise HTTPException(status_code=400, detail="px and py required")
        return _get(svc.pick, session_id, body["px"], body["py"],
                    body.get("w"), body.get("h"))

    @app.post("/sessions/{session_id}/map-point")
    def post_map_point(session_id: str, body: dict = Body(...)):
        if "px" not in body or "py" not in body:
            raise HTTPException(status_code=400, detail="px and py required")
        return _get(svc.map_point, session_id, body["px"], body["py"],
                    body.get("w"), body.get("h"))

    @app.websocket("/sessions/{session_id}/ws")
    async def session_socket(ws: WebSocket, session_id: str):
        await ws.accept()
        try:
            svc._session(session_id)
        except KeyError:
            await ws.close(code=4404)
            return
        try:
            while True:
                text = await ws.receive_text()
                try:
                    msg = json.loads(text)
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps(
                        {"type": "error", "message": "invalid JSON"}))
                    continue
                kind = msg.get("type")
                try:
                    if kind == "patch":
                        state = svc.update_state(session_id,
                                                 msg.get("patch") or {})
                        await ws.send_text(json.dumps(
                            {"type": "state", "state": state}))
                    elif kind == "frame":
                        png, meta = await run_in_threadpool(
                            svc.frame, session_id,
                            int(msg.get("w", 512)), int(msg.get("h", 512)))
                        meta_bytes = json.dumps(meta).encode("utf-8")
                        await ws.send_bytes(
                            struct.pack("<II", meta["revision"],
                                        len(meta_bytes))
                            + meta_bytes + png)
                    elif kind == "pick":
                        result = await run_in_threadpool(
                            svc.pick, session_id, msg["px"], msg["py"],
                            msg.get("w"), msg.get("h"))
                        await ws.send_text(json.dumps(
                            {"type": "pick", "result": result}))
                    else:
                        await ws.send_text(json.dumps(
                            {"type": "error",
                             "message": f"unknown type {kind!r}"}))
                except (ValueError, KeyError) as exc:
                    await ws.send_text(json.dumps(
                        {"type": "error", "message": str(exc)}))
        except WebSocketDisconnect:
            return

    return app

"""Hermetic stand-in for a physics engine's scripting interface.

Candidate scripts build a Scene, add entities, step through the configured
duration and save a video. No physics is computed: frames are a
deterministic procedural pattern keyed by the entity parameters, so
identical scripts produce byte-identical output files.

The STUB_FAIL environment variable injects one named failure per process
(see the engine docs); unknown values abort immediately.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

from ._video import write_mp4, write_repeat_frame_avi

__version__ = "0.1.0"

FAIL_MODES = (
    "none",
    "raise_api",
    "raise_param",
    "timeout",
    "no_file",
    "small_file",
    "resolution",
    "fps",
)

PATTERNS = ("static", "smooth", "jitter")

_fail_fired = False


def _fail_mode() -> str:
    mode = os.environ.get("STUB_FAIL", "none")
    if mode not in FAIL_MODES:
        raise SystemExit(
            f"stubengine: aborting, unknown STUB_FAIL value {mode!r} "
            f"(expected one of {', '.join(FAIL_MODES)})"
        )
    return mode


def init(backend: str = "cpu") -> None:
    """Optional engine initialization; validates the failure-injection mode."""
    _fail_mode()


def _maybe_raise_injected() -> None:
    """Fire a raise/timeout injection exactly once per process."""
    global _fail_fired
    if _fail_fired:
        return
    mode = _fail_mode()
    if mode == "raise_api":
        _fail_fired = True
        raise AttributeError("'SphereEntity' object has no attribute 'friction_coef'")
    if mode == "raise_param":
        _fail_fired = True
        raise ValueError("elasticity coefficient 2.4 exceeds physical limits")
    if mode == "timeout":
        _fail_fired = True
        while True:
            pass


def _check_range(name: str, value: float, low: float, high: float) -> float:
    value = float(value)
    if not low <= value <= high:
        raise ValueError(f"{name} must be within [{low}, {high}], got {value}")
    return value


def _check_mass(value: float) -> float:
    value = float(value)
    if value <= 0:
        raise ValueError(f"mass must be positive, got {value}")
    return value


class _Entity:
    kind = "entity"

    def signature(self) -> tuple:
        return (self.kind,) + tuple(sorted(self.__dict__.items()))


class PlaneEntity(_Entity):
    kind = "plane"

    def __init__(self, friction_coefficient: float = 0.5):
        self.friction_coefficient = _check_range(
            "friction_coefficient", friction_coefficient, 0.0, 2.0
        )


class SphereEntity(_Entity):
    kind = "sphere"

    def __init__(self, radius: float = 0.5, mass: float = 1.0, elasticity: float = 0.5,
                 friction_coefficient: float = 0.5, position=(0.0, 0.0, 0.0)):
        self.radius = _check_range("radius", radius, 1e-6, 1e6)
        self.mass = _check_mass(mass)
        self.elasticity = _check_range("elasticity", elasticity, 0.0, 2.0)
        self.friction_coefficient = _check_range(
            "friction_coefficient", friction_coefficient, 0.0, 2.0
        )
        self.position = tuple(float(v) for v in position)


class BoxEntity(_Entity):
    kind = "box"

    def __init__(self, size=(1.0, 1.0, 1.0), mass: float = 1.0, elasticity: float = 0.5,
                 friction_coefficient: float = 0.5, position=(0.0, 0.0, 0.0)):
        self.size = tuple(float(v) for v in size)
        self.mass = _check_mass(mass)
        self.elasticity = _check_range("elasticity", elasticity, 0.0, 2.0)
        self.friction_coefficient = _check_range(
            "friction_coefficient", friction_coefficient, 0.0, 2.0
        )
        self.position = tuple(float(v) for v in position)


class Scene:
    """A renderable scene; frame count is always round(fps * duration)."""

    def __init__(self, resolution=(1280, 640), fps: float = 60, duration: float = 5.0,
                 show_viewer: bool = False, pattern: str = "static"):
        _fail_mode()
        if show_viewer:
            raise RuntimeError(
                "no interactive viewer is available; set show_viewer=False"
            )
        if pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}, got {pattern!r}")
        width, height = (int(v) for v in resolution)
        if width <= 0 or height <= 0:
            raise ValueError(f"resolution must be positive, got {resolution}")
        if fps <= 0 or duration <= 0:
            raise ValueError("fps and duration must be positive")
        self.resolution = (width, height)
        self.fps = float(fps)
        self.duration = float(duration)
        self.pattern = pattern
        self.entities: list[_Entity] = []
        self.camera = None
        self._steps_taken = 0

    @property
    def frame_count(self) -> int:
        return round(self.fps * self.duration)

    def add_plane(self, **kwargs) -> PlaneEntity:
        entity = PlaneEntity(**kwargs)
        self.entities.append(entity)
        return entity

    def add_sphere(self, **kwargs) -> SphereEntity:
        entity = SphereEntity(**kwargs)
        self.entities.append(entity)
        return entity

    def add_box(self, **kwargs) -> BoxEntity:
        entity = BoxEntity(**kwargs)
        self.entities.append(entity)
        return entity

    def set_camera(self, position=(3.0, 3.0, 2.0), target=(0.0, 0.0, 0.0),
                   fov: float = 40.0) -> None:
        self.camera = (
            tuple(float(v) for v in position),
            tuple(float(v) for v in target),
            float(fov),
        )

    def step(self) -> None:
        _maybe_raise_injected()
        self._steps_taken += 1

    def run(self) -> None:
        for _ in range(self.frame_count):
            self.step()

    # --- rendering ---------------------------------------------------------

    def _seed(self) -> int:
        digest = hashlib.sha256(repr([e.signature() for e in self.entities]).encode())
        return int.from_bytes(digest.digest()[:8], "big")

    def _base_color(self) -> np.ndarray:
        rng = np.random.default_rng(self._seed())
        # stay away from 0/255 so codec round-trips cannot clip
        return rng.integers(40, 216, size=3, dtype=np.int64).astype(np.uint8)

    def _frame(self, index: int, width: int, height: int) -> np.ndarray:
        color = self._base_color()
        if self.pattern == "static":
            return np.broadcast_to(color, (height, width, 3)).copy()
        if self.pattern == "jitter":
            # abrupt solid-color flicker: a fresh hash-derived color per
            # frame keeps the second temporal difference large at any
            # frame-sampling stride
            digest = hashlib.sha256(f"{self._seed()}:{index}".encode()).digest()
            flicker = np.array(
                [40 + digest[c] % 176 for c in range(3)], dtype=np.uint8
            )
            return np.broadcast_to(flicker, (height, width, 3)).copy()
        # smooth: sinusoidal gradient drifting half a pixel per frame, so
        # even widely spaced sampled frames differ only gently
        phase = 2.0 * np.pi * (np.arange(width) + 0.5 * index) / width
        wave = 127.5 + 100.0 * np.sin(phase)
        frame = np.empty((height, width, 3), np.uint8)
        for channel in range(3):
            scaled = wave * (0.5 + 0.5 * color[channel] / 255.0)
            frame[:, :, channel] = np.broadcast_to(
                scaled.astype(np.uint8), (height, width)
            )
        return frame

    def save_video(self, path: str) -> None:
        """Encode exactly round(fps * duration) frames to ``path``."""
        _maybe_raise_injected()
        mode = _fail_mode()
        if mode == "no_file":
            return
        width, height = self.resolution
        fps = self.fps
        if mode == "resolution":
            width, height = 640, 480
        if mode == "fps":
            fps = 30.0
        frame_count = round(fps * self.duration)
        if mode == "small_file":
            write_repeat_frame_avi(
                path, self._frame(0, width, height), frame_count, int(fps), width, height
            )
            return
        frames = (self._frame(i, width, height) for i in range(frame_count))
        write_mp4(path, frames, fps, width, height)

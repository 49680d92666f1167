"""Video metadata probing and evenly spaced frame extraction.

Both operations shell out to configurable external tools; command templates
carry {input} and {indices} placeholders. The bundled cv2-backed tools
(:mod:`physcodebench.mediatools`) are the defaults, and any prober emitting
the ffprobe-style fields width/height/avg_frame_rate/duration/nb_frames
can be dropped in.
"""

from __future__ import annotations

import json
import math
import os
import subprocess
import sys
from dataclasses import dataclass

import numpy as np


class MediaError(Exception):
    """Raised when a video cannot be probed or decoded."""


@dataclass(frozen=True)
class MediaTools:
    """Command templates for the external prober and decoder."""

    prober: tuple[str, ...]
    decoder: tuple[str, ...]
    timeout: float = 60.0


def default_media_tools() -> MediaTools:
    return MediaTools(
        prober=(sys.executable, "-m", "physcodebench.mediatools", "probe", "{input}"),
        decoder=(sys.executable, "-m", "physcodebench.mediatools", "decode", "{input}", "{indices}"),
    )


@dataclass(frozen=True)
class VideoMetadata:
    width: int
    height: int
    fps: float
    duration: float
    frame_count: int
    file_size: int

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "fps": self.fps,
            "duration": self.duration,
            "frame_count": self.frame_count,
            "file_size": self.file_size,
        }


@dataclass(frozen=True)
class FrameSet:
    """Raw RGB frames (height x width x 3, uint8) plus their source indices."""

    frames: tuple[np.ndarray, ...]
    source_indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.frames) != len(self.source_indices):
            raise MediaError("frames and source_indices length mismatch")
        if list(self.source_indices) != sorted(set(self.source_indices)):
            raise MediaError("source indices must be strictly increasing")
        shapes = {f.shape for f in self.frames}
        if len(shapes) > 1:
            raise MediaError(f"frames disagree on dimensions: {shapes}")

    def __len__(self) -> int:
        return len(self.frames)


def _run_tool(template: tuple[str, ...], timeout: float, **subs: str) -> bytes:
    argv = []
    for part in template:
        for key, value in subs.items():
            part = part.replace("{" + key + "}", value)
        argv.append(part)
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=timeout)
    except OSError as exc:
        raise MediaError(f"cannot start media tool {argv[0]!r}: {exc}") from exc
    except subprocess.TimeoutExpired as exc:
        raise MediaError(f"media tool timed out: {argv}") from exc
    if proc.returncode != 0:
        message = proc.stderr.decode("utf-8", errors="replace").strip()
        raise MediaError(f"media tool failed ({proc.returncode}): {message}")
    return proc.stdout


def _parse_rate(value) -> float:
    text = str(value)
    if "/" in text:
        num, den = text.split("/", 1)
        den_f = float(den)
        return float(num) / den_f if den_f else 0.0
    return float(text)


def _video_stream_fields(doc: dict) -> dict:
    # Accept either a flat document or an ffprobe-style {"streams": [...]}.
    if "streams" in doc:
        for stream in doc["streams"]:
            if stream.get("codec_type", "video") == "video":
                merged = dict(stream)
                for key, value in doc.get("format", {}).items():
                    merged.setdefault(key, value)
                return merged
        raise MediaError("prober output contains no video stream")
    return doc


def probe_video(path: str, tools: MediaTools | None = None) -> VideoMetadata:
    """Probe a video file for dimensions, rate, duration and frame count."""
    if not os.path.isfile(path):
        raise MediaError(f"video file missing: {path}")
    tools = tools or default_media_tools()
    stdout = _run_tool(tools.prober, tools.timeout, input=path)
    try:
        doc = json.loads(stdout.decode("utf-8"))
        fields = _video_stream_fields(doc)
        width = int(fields["width"])
        height = int(fields["height"])
        fps = _parse_rate(fields["avg_frame_rate"])
        frame_count = int(fields["nb_frames"])
        duration = float(fields.get("duration") or (frame_count / fps if fps else 0.0))
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise MediaError(f"unparseable prober output for {path}: {exc}") from exc
    if width <= 0 or height <= 0 or frame_count <= 0:
        raise MediaError(f"no usable video stream in {path}")
    return VideoMetadata(
        width=width,
        height=height,
        fps=fps,
        duration=duration,
        frame_count=frame_count,
        file_size=os.path.getsize(path),
    )


def _round_half_away(x: float) -> int:
    return math.floor(x + 0.5)


def sample_indices(frame_count: int, count: int) -> tuple[int, ...]:
    """Evenly spaced frame indices including both endpoints.

    For N >= count the k-th index is round(k*(N-1)/(count-1)) with
    half-away-from-zero rounding; shorter videos yield every frame.
    """
    if count < 1:
        raise MediaError("count must be >= 1")
    if frame_count < 1:
        raise MediaError("video has no frames")
    if frame_count < count:
        return tuple(range(frame_count))
    if count == 1:
        return (0,)
    step = (frame_count - 1) / (count - 1)
    return tuple(_round_half_away(k * step) for k in range(count))


def extract_frames(path: str, count: int, tools: MediaTools | None = None) -> FrameSet:
    """Decode ``count`` evenly spaced raw RGB frames from a video file."""
    tools = tools or default_media_tools()
    meta = probe_video(path, tools)
    indices = sample_indices(meta.frame_count, count)
    payload = _run_tool(
        tools.decoder,
        tools.timeout,
        input=path,
        indices=",".join(str(i) for i in indices),
    )
    frame_bytes = meta.width * meta.height * 3
    expected = frame_bytes * len(indices)
    if len(payload) != expected:
        raise MediaError(
            f"decoder returned {len(payload)} bytes, expected {expected} "
            f"({len(indices)} frames of {meta.width}x{meta.height})"
        )
    frames = []
    for i in range(len(indices)):
        raw = payload[i * frame_bytes:(i + 1) * frame_bytes]
        frames.append(
            np.frombuffer(raw, dtype=np.uint8).reshape(meta.height, meta.width, 3)
        )
    return FrameSet(frames=tuple(frames), source_indices=indices)

"""Scoring: the four-component 100-point scorecard plus the VLM judge.

Components (25 points each): execution, output-file compliance, semantic
alignment of sampled frames with the instruction (embedding cosine), and
motion smoothness (second temporal differences). Nothing is weighted
beyond the component sum, and a failed execution zeroes everything else.
"""

from __future__ import annotations

import base64
import hashlib
import os
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .llmgateway import ChatMessage, ChatRequest, GatewayError
from .mediacheck import FrameSet, MediaError, MediaTools, extract_frames, probe_video
from .sandbox import ExecutionReport


class ScoreError(Exception):
    """Raised on misuse of a scorer (not for low-quality outputs)."""


class JudgeError(Exception):
    """Raised when the judge backend cannot produce a parseable rating."""


@dataclass(frozen=True)
class OutputSpec:
    """Required properties of a simulation's output video."""

    filename: str = "genesis_video.mp4"
    width: int = 1280
    height: int = 640
    fps: float = 60.0
    fps_tolerance: float = 0.5
    duration: float = 5.0
    duration_tolerance: float = 0.25
    min_size: int = 100_000
    extra_required_files: tuple[str, ...] = ()

    def __post_init__(self):
        if self.fps_tolerance <= 0 or self.duration_tolerance <= 0:
            raise ScoreError("tolerances must be positive")

    def to_dict(self) -> dict:
        return {
            "filename": self.filename,
            "width": self.width,
            "height": self.height,
            "fps": self.fps,
            "fps_tolerance": self.fps_tolerance,
            "duration": self.duration,
            "duration_tolerance": self.duration_tolerance,
            "min_size": self.min_size,
            "extra_required_files": list(self.extra_required_files),
        }

    @classmethod
    def from_dict(cls, data: dict) -> OutputSpec:
        data = dict(data)
        if "extra_required_files" in data:
            data["extra_required_files"] = tuple(data["extra_required_files"])
        return cls(**data)


# File rubric weights, ordered by how strongly each criterion signals a
# working simulation. Missing extra files cap the component at EXTRA_CAP.
FILE_RUBRIC_WEIGHTS = {
    "exists": 10.0,
    "size": 5.0,
    "resolution": 4.0,
    "fps": 3.0,
    "duration": 3.0,
}
EXTRA_FILE_CAP = 20.0

COMPONENT_MAX = 25.0


@dataclass(frozen=True)
class ScoreCard:
    """The four component scores and their exact sum."""

    s_exec: float
    s_file: float
    s_clip: float
    s_motion: float
    total: float
    rubric_breakdown: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        components = (self.s_exec, self.s_file, self.s_clip, self.s_motion)
        for value in components:
            if not 0.0 <= value <= COMPONENT_MAX:
                raise ScoreError(f"component {value} outside [0, {COMPONENT_MAX}]")
        if abs(self.total - sum(components)) > 1e-9:
            raise ScoreError("total must equal the component sum")
        if self.s_exec == 0.0 and any(v != 0.0 for v in components[1:]):
            raise ScoreError("no artifacts without execution: visuals must be 0")

    @property
    def code_based(self) -> float:
        return self.s_exec + self.s_file

    @property
    def visual_based(self) -> float:
        return self.s_clip + self.s_motion

    @classmethod
    def build(cls, s_exec: float, s_file: float, s_clip: float, s_motion: float,
              rubric_breakdown: dict | None = None, notes: tuple[str, ...] = ()) -> ScoreCard:
        return cls(
            s_exec=s_exec,
            s_file=s_file,
            s_clip=s_clip,
            s_motion=s_motion,
            total=s_exec + s_file + s_clip + s_motion,
            rubric_breakdown=rubric_breakdown or {},
            notes=notes,
        )

    @classmethod
    def zeros(cls, note: str = "") -> ScoreCard:
        return cls.build(0.0, 0.0, 0.0, 0.0, notes=(note,) if note else ())

    def to_dict(self) -> dict:
        return {
            "s_exec": self.s_exec,
            "s_file": self.s_file,
            "s_clip": self.s_clip,
            "s_motion": self.s_motion,
            "total": self.total,
            "rubric_breakdown": dict(self.rubric_breakdown),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> ScoreCard:
        return cls(
            s_exec=data["s_exec"],
            s_file=data["s_file"],
            s_clip=data["s_clip"],
            s_motion=data["s_motion"],
            total=data["total"],
            rubric_breakdown=dict(data.get("rubric_breakdown", {})),
            notes=tuple(data.get("notes", ())),
        )


def score_execution(report: ExecutionReport) -> float:
    """Binary: full component for a clean run, zero for anything else."""
    return COMPONENT_MAX if report.outcome == "success" else 0.0


def score_files(workdir: str, spec: OutputSpec,
                tools: MediaTools | None = None) -> tuple[float, dict]:
    """Apply the file rubric to a finished workdir.

    Existence is gating: the remaining criteria are only evaluated when the
    primary output file is present. Any missing extra required file caps
    the component at EXTRA_FILE_CAP.
    """
    breakdown: dict = {name: 0.0 for name in FILE_RUBRIC_WEIGHTS}
    video_path = os.path.join(workdir, spec.filename)
    if not os.path.isfile(video_path):
        return 0.0, breakdown

    breakdown["exists"] = FILE_RUBRIC_WEIGHTS["exists"]
    if os.path.getsize(video_path) >= spec.min_size:
        breakdown["size"] = FILE_RUBRIC_WEIGHTS["size"]

    try:
        meta = probe_video(video_path, tools)
    except MediaError:
        meta = None
    if meta is not None:
        if (meta.width, meta.height) == (spec.width, spec.height):
            breakdown["resolution"] = FILE_RUBRIC_WEIGHTS["resolution"]
        if abs(meta.fps - spec.fps) <= spec.fps_tolerance:
            breakdown["fps"] = FILE_RUBRIC_WEIGHTS["fps"]
        if abs(meta.duration - spec.duration) <= spec.duration_tolerance:
            breakdown["duration"] = FILE_RUBRIC_WEIGHTS["duration"]

    points = sum(breakdown.values())
    missing_extras = [
        name for name in spec.extra_required_files
        if not os.path.isfile(os.path.join(workdir, name))
    ]
    if missing_extras:
        points = min(points, EXTRA_FILE_CAP)
        breakdown["missing_extra_files"] = missing_extras
    return points, breakdown


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def score_clip(frames: FrameSet, prompt: str, embedder) -> float:
    """25 x clamp(mean frame/text cosine, 0, 1)."""
    if len(frames) == 0:
        raise ScoreError("score_clip requires at least one frame")
    text_vec = np.asarray(embedder.embed_texts([prompt])[0], dtype=np.float64)
    frame_vecs = np.asarray(embedder.embed_frames(list(frames.frames)), dtype=np.float64)
    mean_cos = float(np.mean([_cosine(vec, text_vec) for vec in frame_vecs]))
    return COMPONENT_MAX * min(max(mean_cos, 0.0), 1.0)


def _to_gray(frame: np.ndarray) -> np.ndarray:
    return np.asarray(frame, dtype=np.float64).mean(axis=2)


def _box_downsample(image: np.ndarray, limit: int = 64) -> np.ndarray:
    h, w = image.shape
    bh = -(-h // limit)
    bw = -(-w // limit)
    image = image[: (h // bh) * bh, : (w // bw) * bw]
    return image.reshape(image.shape[0] // bh, bh, image.shape[1] // bw, bw).mean(axis=(1, 3))


def score_motion(frames: FrameSet, m_ref: float = 0.1) -> float:
    """Jitter metric: mean absolute second temporal difference.

    Frames are grayscaled and box-averaged down to at most 64x64 before the
    difference; m_ref is the normalized magnitude that zeroes the score.
    """
    if len(frames) < 3:
        raise ScoreError("score_motion requires at least 3 frames")
    stack = np.stack([_box_downsample(_to_gray(f)) for f in frames.frames])
    second = np.abs(stack[2:] - 2.0 * stack[1:-1] + stack[:-2]) / 255.0
    m = float(second.mean())
    return COMPONENT_MAX * (1.0 - min(max(m / m_ref, 0.0), 1.0))


def evaluate(entry, report: ExecutionReport, workdir: str, spec: OutputSpec,
             embedder, tools: MediaTools | None = None, frame_count: int = 10,
             m_ref: float = 0.1) -> ScoreCard:
    """Compose the four component scorers for one finished run.

    A failed execution yields an all-zero card; unusable or missing video
    output degrades the visual components to zero with a recorded reason.
    """
    s_exec = score_execution(report)
    if s_exec == 0.0:
        return ScoreCard.zeros(note=f"execution failed: {report.outcome}")

    def scrub(text: str) -> str:
        # keep notes free of the per-run directory so records stay reproducible
        return text.replace(workdir, "<workdir>")

    s_file, breakdown = score_files(workdir, spec, tools)
    notes: list[str] = []
    s_clip = s_motion = 0.0
    video_path = os.path.join(workdir, spec.filename)
    try:
        frames = extract_frames(video_path, frame_count, tools)
    except MediaError as exc:
        notes.append(scrub(f"visual scoring skipped: {exc}"))
    else:
        try:
            s_clip = score_clip(frames, entry.prompt, embedder)
        except Exception as exc:  # embedder failures degrade, with a reason
            notes.append(scrub(f"clip scoring failed: {exc}"))
        if len(frames) >= 3:
            s_motion = score_motion(frames, m_ref=m_ref)
        else:
            notes.append(f"motion scoring skipped: only {len(frames)} frames")

    return ScoreCard.build(
        s_exec, s_file, s_clip, s_motion,
        rubric_breakdown=breakdown, notes=tuple(notes),
    )


@dataclass
class Scorer:
    """Bundles an output spec, embedder and media tools for repeated use."""

    spec: OutputSpec
    embedder: object
    tools: MediaTools | None = None
    frame_count: int = 10
    m_ref: float = 0.1

    def evaluate(self, entry, report: ExecutionReport, workdir: str) -> ScoreCard:
        return evaluate(
            entry, report, workdir, self.spec, self.embedder,
            tools=self.tools, frame_count=self.frame_count, m_ref=self.m_ref,
        )


# --- embedding providers ---------------------------------------------------

class HashEmbedder:
    """Deterministic stand-in embedder: content hash seeds a unit vector."""

    def __init__(self, dim: int = 256):
        self.dim = dim

    def _vector(self, payload: bytes) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        return np.stack([self._vector(t.encode("utf-8")) for t in texts])

    def embed_frames(self, frames: list[np.ndarray]) -> np.ndarray:
        return np.stack([self._vector(np.ascontiguousarray(f).tobytes()) for f in frames])


class ConstantEmbedder:
    """Maps every input to the same unit vector (cosine always 1)."""

    def __init__(self, dim: int = 8):
        self.dim = dim
        self._vec = np.zeros(dim)
        self._vec[0] = 1.0

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        return np.stack([self._vec] * len(texts))

    def embed_frames(self, frames: list[np.ndarray]) -> np.ndarray:
        return np.stack([self._vec] * len(frames))


class RemoteEmbedder:
    """Client for an HTTP embedding service returning {"data": [{"embedding": [...]}]}.

    Text inputs are sent verbatim; frames are sent as base64 PNGs with
    input_type "image".
    """

    def __init__(self, endpoint: str, model: str, dim: int,
                 api_key_env: str | None = None, request_timeout: float = 60.0):
        import requests

        self.endpoint = endpoint
        self.model = model
        self.dim = dim
        self.api_key_env = api_key_env
        self.request_timeout = request_timeout
        self._session = requests.Session()

    def _post(self, payload: dict) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env and os.environ.get(self.api_key_env):
            headers["Authorization"] = f"Bearer {os.environ[self.api_key_env]}"
        http = self._session.post(
            self.endpoint, json=payload, headers=headers, timeout=self.request_timeout
        )
        if http.status_code != 200:
            raise ScoreError(f"embedding service returned {http.status_code}")
        vectors = np.asarray([item["embedding"] for item in http.json()["data"]], dtype=np.float64)
        if vectors.shape[1] != self.dim:
            raise ScoreError(f"embedding dimension {vectors.shape[1]} != declared {self.dim}")
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return vectors / norms

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        return self._post({"model": self.model, "input": list(texts)})

    def embed_frames(self, frames: list[np.ndarray]) -> np.ndarray:
        import cv2

        encoded = []
        for frame in frames:
            ok, png = cv2.imencode(".png", cv2.cvtColor(frame, cv2.COLOR_RGB2BGR))
            if not ok:
                raise ScoreError("cannot encode frame for embedding service")
            encoded.append(base64.b64encode(png.tobytes()).decode("ascii"))
        return self._post({"model": self.model, "input": encoded, "input_type": "image"})


def embedder_from_config(section: dict):
    kind = section.get("kind", "hash")
    if kind == "hash":
        return HashEmbedder(dim=int(section.get("dim", 256)))
    if kind == "constant":
        return ConstantEmbedder(dim=int(section.get("dim", 8)))
    if kind == "http":
        return RemoteEmbedder(
            endpoint=section["endpoint"],
            model=section.get("model", "embedding"),
            dim=int(section["dim"]),
            api_key_env=section.get("api_key_env"),
        )
    raise ScoreError(f"unknown embedder kind {kind!r}")


# --- VLM judge --------------------------------------------------------------

JUDGE_ASPECTS = (
    "gravity",
    "collision_dynamics",
    "fluid_behavior",
    "object_motion",
    "temporal_consistency",
)

JUDGE_SYSTEM = (
    "You are a meticulous physics reviewer. Rate the physical plausibility of "
    "a simulation on a 1-5 scale (5=excellent, 1=poor) for each requested "
    "aspect. Reply with exactly one 'aspect: score' line per aspect and "
    "nothing else."
)

JUDGE_USER_TEMPLATE = """The simulation was generated for this instruction:

{prompt}

Evidence from the rendered video:

{evidence}

Rate each aspect from 1 to 5:
{aspect_lines}
"""


@dataclass(frozen=True)
class JudgeReport:
    aspect_scores: dict
    overall: float

    def __post_init__(self):
        expected = statistics.fmean(self.aspect_scores.values())
        if abs(self.overall - expected) > 1e-9:
            raise JudgeError("overall must be the mean of the aspect scores")

    def to_dict(self) -> dict:
        return {"aspect_scores": dict(self.aspect_scores), "overall": self.overall}


def summarize_frames(frames: FrameSet) -> str:
    """Compact textual trajectory summary for text-only judge backends."""
    lines = []
    for idx, frame in zip(frames.source_indices, frames.frames):
        gray = _to_gray(frame)
        lines.append(
            f"frame {idx}: mean brightness {gray.mean():.1f}, spread {gray.std():.1f}"
        )
    return "\n".join(lines)


_RATING_RE = re.compile(r"^\s*([a-z_ ]+?)\s*[:=]\s*([0-9.]+)\s*$", re.MULTILINE | re.IGNORECASE)


def _parse_ratings(reply: str) -> dict:
    found = {}
    for name, value in _RATING_RE.findall(reply):
        key = name.strip().lower().replace(" ", "_")
        if key in JUDGE_ASPECTS:
            found[key] = float(value)
    missing = [a for a in JUDGE_ASPECTS if a not in found]
    if missing:
        raise JudgeError(f"judge reply missing aspects: {missing}")
    for aspect, value in found.items():
        if not 1.0 <= value <= 5.0:
            raise JudgeError(f"rating {aspect}={value} outside [1, 5]")
    return found


def judge_vlm(backend, frames_or_description, entry, runs: int = 3,
              reask_limit: int = 1) -> JudgeReport:
    """Rate physical plausibility via a judge backend, averaged over runs.

    Accepts a FrameSet (summarized to text for text-only backends) or a
    ready-made description string. Each run re-asks once on an unparseable
    reply before giving up.
    """
    if isinstance(frames_or_description, FrameSet):
        evidence = summarize_frames(frames_or_description)
    else:
        evidence = str(frames_or_description)
    aspect_lines = "\n".join(f"- {aspect}" for aspect in JUDGE_ASPECTS)
    request = ChatRequest(
        model=getattr(backend, "model", "judge"),
        messages=(
            ChatMessage("system", JUDGE_SYSTEM),
            ChatMessage(
                "user",
                JUDGE_USER_TEMPLATE.format(
                    prompt=entry.prompt, evidence=evidence, aspect_lines=aspect_lines
                ),
            ),
        ),
        temperature=0.0,
    )

    per_run: list[dict] = []
    for _ in range(runs):
        ratings = None
        last_error = None
        for _ in range(reask_limit + 1):
            try:
                reply = backend.complete(request)
                ratings = _parse_ratings(reply.content)
                break
            except (JudgeError, GatewayError) as exc:
                last_error = exc
        if ratings is None:
            raise JudgeError(f"judge failed after re-ask: {last_error}")
        per_run.append(ratings)

    aspect_scores = {
        aspect: statistics.fmean(run[aspect] for run in per_run)
        for aspect in JUDGE_ASPECTS
    }
    return JudgeReport(
        aspect_scores=aspect_scores,
        overall=statistics.fmean(aspect_scores.values()),
    )

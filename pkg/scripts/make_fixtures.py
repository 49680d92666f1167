#!/usr/bin/env python3
"""Regenerate the checked-in test fixtures.

Produces tests/fixtures/bench_distribution.jsonl (a 700-entry dataset whose
domain/difficulty/split counts match the published distribution tables) and
tests/fixtures/videos/ (pre-encoded videos covering the file-rubric golden
cases). Deterministic: running twice yields identical bytes.
"""

from __future__ import annotations

import struct
import sys
from pathlib import Path

import cv2
import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from physcodebench.benchdata import Dataset, BenchmarkEntry, PreferencePair, save_dataset

FIXTURES = REPO / "tests" / "fixtures"

# (domain, easy count, hard count, test-split easy, test-split hard)
DISTRIBUTION = [
    ("rigid_body", 144, 96, 20, 14),
    ("soft_body", 108, 72, 15, 11),
    ("fluid", 84, 76, 12, 11),
    ("mechanics", 72, 48, 11, 6),
]

PROMPTS = {
    "rigid_body": "Simulate {n} wooden blocks toppling off a shelf onto a concrete floor.",
    "soft_body": "Simulate a gel cube (variant {n}) dropped onto a trampoline membrane.",
    "fluid": "Simulate a stream of water (scenario {n}) poured into a glass tank.",
    "mechanics": "Simulate a pendulum rig (setup {n}) transferring momentum to a cart.",
}

LAWS = {
    "rigid_body": ("collisions", "gravity", "friction"),
    "soft_body": ("elasticity", "gravity"),
    "fluid": ("fluid_dynamics", "gravity"),
    "mechanics": ("gravity", "collisions"),
}

OBJECTS = {
    "rigid_body": ("box", "plane"),
    "soft_body": ("sphere", "membrane"),
    "fluid": ("emitter", "tank"),
    "mechanics": ("pendulum", "cart"),
}

REFERENCE_CODE = (
    "import stubengine as engine\n"
    "scene = engine.Scene()\n"
    "scene.add_plane(friction_coefficient=0.5)\n"
    "scene.add_sphere(radius=0.2, mass=1.0, elasticity=0.6)\n"
    "scene.run()\n"
    'scene.save_video("genesis_video.mp4")\n'
)


def build_entries() -> list[BenchmarkEntry]:
    entries = []
    for domain, easy, hard, test_easy, test_hard in DISTRIBUTION:
        for difficulty, count, test_count in (("easy", easy, test_easy), ("hard", hard, test_hard)):
            for i in range(count):
                n = len(entries)
                split = "test" if i < test_count else "train"
                # Every 12th entry carries a second domain; the primary
                # override keeps the per-domain totals table-exact.
                domains = (domain,)
                primary = None
                if i % 12 == 5:
                    other = "rigid_body" if domain != "rigid_body" else "fluid"
                    domains = (domain, other)
                    primary = domain
                preference = None
                if split == "train" and i % 40 == 7:
                    preference = PreferencePair(
                        code_a=REFERENCE_CODE,
                        code_b=REFERENCE_CODE.replace("0.6", "0.7"),
                        preferred="a",
                        annotator_votes=tuple(
                            (f"annotator_{k}", "a" if k < 3 else "b") for k in range(5)
                        ),
                    )
                entries.append(
                    BenchmarkEntry(
                        id=f"{domain}_{difficulty}_{i:03d}",
                        prompt=PROMPTS[domain].format(n=n),
                        difficulty=difficulty,
                        domains=domains,
                        split=split,
                        physical_laws=LAWS[domain],
                        object_types=OBJECTS[domain],
                        reference_code=None if i % 9 == 4 else REFERENCE_CODE,
                        preference=preference,
                        primary_domain=primary,
                    )
                )
    return entries


def write_dataset() -> None:
    entries = build_entries()
    ds = Dataset(entries=tuple(entries))
    out = FIXTURES / "bench_distribution.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    train = sum(1 for e in entries if e.split == "train")
    print(f"wrote {out} ({len(entries)} entries, {train} train / {len(entries) - train} test)")


# --- video fixtures -------------------------------------------------------

def _avi_chunk(fourcc: bytes, payload: bytes) -> bytes:
    data = struct.pack("<4sI", fourcc, len(payload)) + payload
    if len(payload) % 2:
        data += b"\x00"
    return data


def write_repeat_frame_avi(path: Path, jpeg: bytes, frame_count: int, fps: int,
                           width: int, height: int) -> None:
    """MJPEG AVI holding one real frame plus zero-length repeat chunks.

    Metadata (resolution, fps, frame count) probes normally while the file
    stays tiny; used to emulate an undersized but well-formed output.
    """
    frames = [jpeg] + [b""] * (frame_count - 1)
    avih = struct.pack(
        "<14I", int(1_000_000 / fps), len(jpeg) * fps, 0, 0x10,
        frame_count, 0, 1, len(jpeg), width, height, 0, 0, 0, 0,
    )
    strh = struct.pack(
        "<4s4sIHHIIIIIIIIhhhh", b"vids", b"MJPG", 0, 0, 0, 0, 1, fps, 0,
        frame_count, len(jpeg), 10000, 0, 0, 0, width, height,
    )
    strf = struct.pack(
        "<IiiHH4sIiiII", 40, width, height, 1, 24, b"MJPG",
        width * height * 3, 0, 0, 0, 0,
    )
    hdrl = _avi_chunk(
        b"LIST",
        b"hdrl" + _avi_chunk(b"avih", avih)
        + _avi_chunk(b"LIST", b"strl" + _avi_chunk(b"strh", strh) + _avi_chunk(b"strf", strf)),
    )
    movi_payload = b"movi"
    index = b""
    for jpg in frames:
        offset = len(movi_payload)
        movi_payload += _avi_chunk(b"00dc", jpg)
        index += struct.pack("<4sIII", b"00dc", 0x10 if jpg else 0, offset, len(jpg))
    riff = b"AVI " + hdrl + _avi_chunk(b"LIST", movi_payload) + _avi_chunk(b"idx1", index)
    path.write_bytes(struct.pack("<4sI", b"RIFF", len(riff)) + riff)


def gradient_frame(width: int, height: int, shift: int) -> np.ndarray:
    xs = ((np.arange(width) + shift) % 256).astype(np.uint8)
    row = np.dstack([xs, xs // 2, 255 - xs])
    return np.repeat(row, height, axis=0)


def write_mp4(path: Path, width: int, height: int, fps: float, frame_count: int,
              moving: bool) -> None:
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (width, height))
    if not writer.isOpened():
        raise RuntimeError(f"cannot open encoder for {path}")
    # Static fixtures use a solid color: uniform frames survive the codec
    # bit-identically, so motion scoring sees exactly zero jitter.
    solid = np.full((height, width, 3), (96, 128, 160), np.uint8)
    for i in range(frame_count):
        writer.write(gradient_frame(width, height, i * 3) if moving else solid)
    writer.release()


def write_videos() -> None:
    out = FIXTURES / "videos"
    out.mkdir(parents=True, exist_ok=True)

    # Fully compliant: 1280x640, 60 fps, 300 frames (5 s), > 100 KB.
    write_mp4(out / "compliant.mp4", 1280, 640, 60.0, 300, moving=False)
    # Correct metadata but tiny: one real frame + 299 repeats.
    black = np.zeros((640, 1280, 3), np.uint8)
    ok, jpg = cv2.imencode(".jpg", black, [cv2.IMWRITE_JPEG_QUALITY, 60])
    assert ok
    write_repeat_frame_avi(out / "undersized.mp4", jpg.tobytes(), 300, 60, 1280, 640)
    # Wrong resolution, everything else compliant.
    write_mp4(out / "wrong_resolution.mp4", 640, 480, 60.0, 300, moving=True)
    # Wrong fps (30), duration still 5 s via 150 frames.
    write_mp4(out / "wrong_fps.mp4", 1280, 640, 30.0, 150, moving=True)

    for p in sorted(out.iterdir()):
        print(f"wrote {p} ({p.stat().st_size} bytes)")


if __name__ == "__main__":
    write_dataset()
    write_videos()

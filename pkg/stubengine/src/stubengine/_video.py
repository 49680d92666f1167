"""Video encoders for the stub engine.

Normal output goes through OpenCV's mp4v encoder, which is deterministic
for identical frame sequences. The undersized-file failure mode writes a
hand-built MJPEG AVI holding one real frame plus zero-length "repeat"
chunks: every metadata field probes normally while the file stays tiny.
"""

from __future__ import annotations

import struct

import cv2
import numpy as np


def write_mp4(path: str, frames, fps: float, width: int, height: int) -> None:
    writer = cv2.VideoWriter(path, cv2.VideoWriter_fourcc(*"mp4v"), fps, (width, height))
    if not writer.isOpened():
        raise RuntimeError(f"cannot open video encoder for {path}")
    for frame in frames:
        writer.write(frame)
    writer.release()


def _chunk(fourcc: bytes, payload: bytes) -> bytes:
    data = struct.pack("<4sI", fourcc, len(payload)) + payload
    if len(payload) % 2:
        data += b"\x00"
    return data


def write_repeat_frame_avi(path: str, first_frame: np.ndarray, frame_count: int,
                           fps: int, width: int, height: int,
                           jpeg_quality: int = 60) -> None:
    ok, jpeg = cv2.imencode(".jpg", first_frame, [cv2.IMWRITE_JPEG_QUALITY, jpeg_quality])
    if not ok:
        raise RuntimeError("cannot encode keyframe")
    jpeg = jpeg.tobytes()
    avih = struct.pack(
        "<14I", int(1_000_000 / fps), len(jpeg) * fps, 0, 0x10,  # AVIF_HASINDEX
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
    hdrl = _chunk(
        b"LIST",
        b"hdrl" + _chunk(b"avih", avih)
        + _chunk(b"LIST", b"strl" + _chunk(b"strh", strh) + _chunk(b"strf", strf)),
    )
    movi_payload = b"movi"
    index = b""
    for i in range(frame_count):
        payload = jpeg if i == 0 else b""
        offset = len(movi_payload)
        movi_payload += _chunk(b"00dc", payload)
        index += struct.pack("<4sIII", b"00dc", 0x10 if payload else 0, offset, len(payload))
    riff = b"AVI " + hdrl + _chunk(b"LIST", movi_payload) + _chunk(b"idx1", index)
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI", b"RIFF", len(riff)) + riff)

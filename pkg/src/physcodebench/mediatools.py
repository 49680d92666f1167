"""Bundled video prober/decoder used as the default external media tools.

Speaks the harness's media-tool protocol:

  probe <input>             one JSON document on stdout with the fields
                            width, height, avg_frame_rate, duration, nb_frames
  decode <input> <indices>  raw RGB24 frames on stdout, one per requested
                            index (comma-separated, ascending)

Runs as a subprocess so the harness never links a codec stack directly;
any ffprobe/ffmpeg-compatible pair can be configured in its place.
"""

from __future__ import annotations

import json
import sys

import cv2


def _open(path: str) -> cv2.VideoCapture:
    cap = cv2.VideoCapture(path)
    if not cap.isOpened():
        raise SystemExit(f"mediatools: no decodable video stream in {path!r}")
    return cap


def probe(path: str) -> None:
    cap = _open(path)
    width = int(cap.get(cv2.CAP_PROP_FRAME_WIDTH))
    height = int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
    fps = float(cap.get(cv2.CAP_PROP_FPS))
    nb_frames = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
    cap.release()
    if width <= 0 or height <= 0 or nb_frames <= 0:
        raise SystemExit(f"mediatools: no video stream metadata in {path!r}")
    duration = nb_frames / fps if fps > 0 else 0.0
    doc = {
        "width": width,
        "height": height,
        "avg_frame_rate": f"{fps:g}",
        "duration": f"{duration:g}",
        "nb_frames": str(nb_frames),
    }
    sys.stdout.write(json.dumps(doc) + "\n")


def decode(path: str, indices_arg: str) -> None:
    wanted = [int(tok) for tok in indices_arg.split(",") if tok != ""]
    if not wanted:
        raise SystemExit("mediatools: no frame indices requested")
    if wanted != sorted(wanted) or len(set(wanted)) != len(wanted):
        raise SystemExit("mediatools: indices must be strictly ascending")
    cap = _open(path)
    remaining = list(wanted)
    out = sys.stdout.buffer
    position = 0
    while remaining:
        if not cap.grab():
            raise SystemExit(f"mediatools: decode failed before frame {remaining[0]}")
        if position == remaining[0]:
            ok, frame = cap.retrieve()
            if not ok:
                raise SystemExit(f"mediatools: cannot retrieve frame {position}")
            out.write(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB).tobytes())
            remaining.pop(0)
        position += 1
    cap.release()
    out.flush()


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) == 2 and argv[0] == "probe":
        probe(argv[1])
        return 0
    if len(argv) == 3 and argv[0] == "decode":
        decode(argv[1], argv[2])
        return 0
    sys.stderr.write("usage: mediatools probe <input> | decode <input> <indices>\n")
    return 2


if __name__ == "__main__":
    sys.exit(main())

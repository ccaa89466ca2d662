"""Middle-frame extraction from video files.

Action-recognition video datasets are reduced to stills by taking the
temporally middle frame of each clip.  Requires OpenCV; the import is
lazy so the rest of the sidecar works without it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

VIDEO_SUFFIXES = (".avi", ".mp4", ".mkv", ".mov", ".webm")


@dataclass
class FrameExtractionResult:
    written: list[Path] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)


def _require_cv2():
    try:
        import cv2
    except ImportError as exc:
        raise RuntimeError(
            f"middle-frame extraction requires opencv-python ({exc})"
        ) from exc
    return cv2


def extract_middle_frame(video_path, out_path) -> Path:
    """Write the middle frame of one video as an image file."""
    cv2 = _require_cv2()
    video_path = Path(video_path)
    out_path = Path(out_path)
    capture = cv2.VideoCapture(str(video_path))
    try:
        if not capture.isOpened():
            raise RuntimeError(f"cannot open video {video_path}")
        frame_count = int(capture.get(cv2.CAP_PROP_FRAME_COUNT))
        if frame_count > 0:
            capture.set(cv2.CAP_PROP_POS_FRAMES, frame_count // 2)
            ok, frame = capture.read()
        else:
            ok, frame = False, None
        if not ok:
            # Some containers misreport counts; fall back to scanning.
            capture.set(cv2.CAP_PROP_POS_FRAMES, 0)
            frames = []
            while True:
                ok, current = capture.read()
                if not ok:
                    break
                frames.append(current)
            if not frames:
                raise RuntimeError(f"no decodable frames in {video_path}")
            frame = frames[len(frames) // 2]
    finally:
        capture.release()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(out_path), frame):
        raise RuntimeError(f"could not write frame image {out_path}")
    return out_path


def extract_middle_frames(video_dir, out_dir,
                          image_suffix: str = ".jpg") -> FrameExtractionResult:
    """Extract middle frames for every video under ``video_dir``.

    Output files mirror the video tree, one image per clip; clips that
    cannot be decoded are reported, not fatal.
    """
    video_dir = Path(video_dir)
    out_dir = Path(out_dir)
    result = FrameExtractionResult()
    for video in sorted(video_dir.rglob("*")):
        if video.suffix.lower() not in VIDEO_SUFFIXES:
            continue
        relative = video.relative_to(video_dir).with_suffix(image_suffix)
        try:
            result.written.append(extract_middle_frame(video, out_dir / relative))
        except RuntimeError as exc:
            result.failed[str(video)] = str(exc)
    return result

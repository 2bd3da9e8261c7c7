"""2D keypoint observations and their JSONL file format.

One record per line: ``{"frame": n, "kp": [[u, v, confidence], ...12]}``.
"""

from dataclasses import dataclass
import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError, SchemaError
from .kinematics import NUM_KEYPOINTS

CONFIDENCE_THRESHOLD = 0.1


@dataclass(frozen=True, eq=False)
class KeypointFrame:
    uv: np.ndarray
    confidence: np.ndarray
    index: int = 0

    def __post_init__(self):
        uv = np.array(self.uv, dtype=float)
        conf = np.array(self.confidence, dtype=float).reshape(-1)
        if uv.shape != (NUM_KEYPOINTS, 2):
            raise SchemaError(f"keypoint frame needs ({NUM_KEYPOINTS}, 2) pixels, got {uv.shape}")
        if conf.shape != (NUM_KEYPOINTS,):
            raise SchemaError(f"keypoint frame needs {NUM_KEYPOINTS} confidences, got {conf.size}")
        if not np.all(np.isfinite(conf)) or conf.min() < 0 or conf.max() > 1:
            raise InvalidInputError("confidences must lie in [0, 1]")
        if not np.all(np.isfinite(uv[conf >= CONFIDENCE_THRESHOLD])):
            raise InvalidInputError("visible keypoints must have finite pixel coordinates")
        uv.setflags(write=False)
        conf.setflags(write=False)
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "confidence", conf)
        object.__setattr__(self, "index", int(self.index))

    @property
    def visible(self):
        return self.confidence >= CONFIDENCE_THRESHOLD

    @property
    def num_visible(self):
        return int(self.visible.sum())

    def with_uv(self, uv):
        return KeypointFrame(uv, self.confidence, self.index)

    def with_confidence(self, confidence):
        return KeypointFrame(self.uv, confidence, self.index)

    def to_record(self):
        kp = np.column_stack([self.uv, self.confidence])
        return {"frame": self.index, "kp": kp.tolist()}

    @classmethod
    def from_record(cls, record):
        try:
            kp = np.asarray(record["kp"], dtype=float)
            index = record.get("frame", 0)
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise SchemaError(f"malformed keypoint record: {exc}") from exc
        if kp.shape != (NUM_KEYPOINTS, 3):
            raise SchemaError(f"expected {NUM_KEYPOINTS} [u, v, c] triples, got shape {kp.shape}")
        return cls(kp[:, :2], kp[:, 2], index)


def load_keypoints(path):
    path = Path(path)
    frames = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            frames.append(KeypointFrame.from_record(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})", line=lineno) from exc
        except InvalidInputError as exc:
            raise ParseError(f"{path}: {exc}", line=lineno) from exc
    if not frames:
        raise ParseError(f"{path}: no keypoint records")
    return frames


def save_keypoints(path, frames):
    lines = [json.dumps(f.to_record(), separators=(",", ":")) for f in frames]
    Path(path).write_text("\n".join(lines) + "\n")

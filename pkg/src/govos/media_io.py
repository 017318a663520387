"""Readers and writers for frames, flows, masks and probability maps.

Frames are binary netpbm (P6 colour, P5 grey, 8-bit). Flows use the
Middlebury ``.flo`` layout. A synthetic-sequence generator produces small
videos with analytically exact flow and ground truth.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

FLO_MAGIC = 202021.25

Box = tuple  # (x_min, y_min, x_max, y_max), inclusive pixel coordinates


class FormatError(ValueError):
    """Raised for malformed or inconsistent media files."""


@dataclass
class VideoTensor:
    """Decoded frame stack with intensities in [0, 1], indexed (t, y, x, c)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 3:
            self.data = self.data[..., None]
        if self.data.ndim != 4 or self.data.shape[-1] not in (1, 3):
            raise ValueError(f"video must be (m, h, w, 1|3), got {self.data.shape}")
        if self.data.shape[0] < 2:
            raise ValueError("a video needs at least two frames")
        if not np.all((self.data >= 0.0) & (self.data <= 1.0)):
            raise ValueError("intensities must lie in [0, 1]")

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def h(self) -> int:
        return self.data.shape[1]

    @property
    def w(self) -> int:
        return self.data.shape[2]

    @property
    def channels(self) -> int:
        return self.data.shape[3]

    @property
    def n(self) -> int:
        return self.m * self.h * self.w


@dataclass
class FlowSet:
    """Forward and backward displacement fields between consecutive frames.

    ``forward[t]`` maps frame t to t+1 and ``backward[t]`` maps frame t+1
    back to t. Both have shape (m-1, h, w, 2) holding (dx, dy) in pixels.
    """

    forward: np.ndarray
    backward: np.ndarray

    def __post_init__(self):
        self.forward = np.asarray(self.forward, dtype=np.float64)
        self.backward = np.asarray(self.backward, dtype=np.float64)
        if self.forward.ndim != 4 or self.forward.shape[-1] != 2:
            raise ValueError(f"forward flow must be (m-1, h, w, 2), got {self.forward.shape}")
        if self.forward.shape != self.backward.shape:
            raise ValueError("forward and backward flows differ in shape")
        if not (np.all(np.isfinite(self.forward)) and np.all(np.isfinite(self.backward))):
            raise ValueError("flow displacements must be finite")

    @property
    def m(self) -> int:
        return self.forward.shape[0] + 1

    @property
    def h(self) -> int:
        return self.forward.shape[1]

    @property
    def w(self) -> int:
        return self.forward.shape[2]

    def check_matches(self, video: VideoTensor) -> None:
        if (self.m, self.h, self.w) != (video.m, video.h, video.w):
            raise FormatError(
                f"flow set is {self.m}x{self.h}x{self.w} but video is "
                f"{video.m}x{video.h}x{video.w}"
            )


@dataclass
class GroundTruth:
    """Per-pixel masks, per-frame boxes, or both (``None`` box = no annotation)."""

    masks: Optional[np.ndarray] = None
    boxes: Optional[list] = None

    def __post_init__(self):
        if self.masks is None and self.boxes is None:
            raise ValueError("ground truth needs masks or boxes")
        if self.masks is not None:
            self.masks = np.asarray(self.masks, dtype=bool)
        if self.boxes is not None:
            shape = None if self.masks is None else self.masks.shape[1:]
            for box in self.boxes:
                if box is None:
                    continue
                x0, y0, x1, y1 = box
                if x0 > x1 or y0 > y1 or min(box) < 0:
                    raise ValueError(f"invalid box {box}")
                if shape is not None and (y1 >= shape[0] or x1 >= shape[1]):
                    raise ValueError(f"box {box} outside frame {shape}")

    @property
    def kind(self) -> str:
        return "masks" if self.masks is not None else "boxes"


# --------------------------------------------------------------------------
# netpbm


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("truncated netpbm header")
    return buf[start:pos], pos


def decode_netpbm(buf: bytes) -> np.ndarray:
    """Decode a binary P5/P6 image into a uint8 array of shape (h, w, c)."""
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported netpbm magic {magic!r}")
    try:
        width_tok, pos = _read_token(buf, pos)
        height_tok, pos = _read_token(buf, pos)
        maxval_tok, pos = _read_token(buf, pos)
        width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
    except ValueError as exc:
        raise FormatError(f"malformed netpbm header: {exc}") from None
    if width <= 0 or height <= 0:
        raise FormatError(f"bad image size {width}x{height}")
    if maxval != 255:
        raise FormatError(f"only 8-bit netpbm supported (maxval {maxval})")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after netpbm header")
    pos += 1
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    payload = buf[pos:pos + size]
    if len(payload) != size:
        raise FormatError(f"truncated payload: expected {size} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)


def encode_netpbm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError("netpbm encoder expects uint8 data")
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    if c not in (1, 3):
        raise ValueError(f"expected 1 or 3 channels, got {c}")
    magic = b"P6" if c == 3 else b"P5"
    return magic + b"\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def read_netpbm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        return decode_netpbm(buf)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_netpbm(img: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_netpbm(img))


def read_frames(paths: Sequence) -> VideoTensor:
    """Load a list of P5/P6 files as one video, in list order."""
    frames = [read_netpbm(p) for p in paths]
    if len(frames) < 2:
        raise FormatError("need at least two frames")
    shape = frames[0].shape
    for p, f in zip(paths, frames):
        if f.shape != shape:
            raise FormatError(f"{p}: frame shape {f.shape} differs from {shape}")
    return VideoTensor(np.stack(frames).astype(np.float64) / 255.0)


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] values to bytes with round-half-up."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)) or values.min(initial=0.0) < 0 or values.max(initial=0.0) > 1:
        raise ValueError("mask values must lie in [0, 1]")
    return np.floor(values * 255.0 + 0.5).astype(np.uint8)


def write_mask_pgm(mask: np.ndarray, path) -> None:
    """Write one (h, w) mask in [0, 1] as an 8-bit P5 file."""
    mask = np.asarray(mask)
    if mask.dtype == bool:
        mask = mask.astype(np.float64)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    write_netpbm(quantize(mask), path)


def write_frame(frame: np.ndarray, path) -> None:
    """Write one (h, w, c) frame in [0, 1] as P6 (c=3) or P5 (c=1)."""
    write_netpbm(quantize(frame), path)


def read_probability_maps(paths: Sequence, video: Optional[VideoTensor] = None) -> np.ndarray:
    """Load per-frame P5 maps as an (m, h, w) array in [0, 1]."""
    maps = []
    for p in paths:
        img = read_netpbm(p)
        if img.shape[2] != 1:
            raise FormatError(f"{p}: probability maps must be greyscale (P5)")
        maps.append(img[..., 0])
    if not maps:
        raise FormatError("no probability maps given")
    shape = maps[0].shape
    if any(mp.shape != shape for mp in maps):
        raise FormatError("probability maps differ in size")
    if video is not None:
        if len(maps) != video.m:
            raise FormatError(f"expected {video.m} probability maps, got {len(maps)}")
        if shape != (video.h, video.w):
            raise FormatError(f"probability map size {shape} != frame size {(video.h, video.w)}")
    return np.stack(maps).astype(np.float64) / 255.0


# --------------------------------------------------------------------------
# Middlebury .flo


def read_flo(path) -> np.ndarray:
    """Read a Middlebury ``.flo`` file into a float32 (h, w, 2) array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12:
        raise FormatError(f"{path}: file too short for .flo header")
    (magic,) = struct.unpack("<f", buf[:4])
    if magic != FLO_MAGIC:
        raise FormatError(f"{path}: wrong .flo magic {magic}")
    width, height = struct.unpack("<ii", buf[4:12])
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: bad .flo size {width}x{height}")
    expected = 8 * width * height
    if len(buf) - 12 != expected:
        raise FormatError(f"{path}: payload is {len(buf) - 12} bytes, header implies {expected}")
    data = np.frombuffer(buf, dtype="<f4", offset=12)
    return data.reshape(height, width, 2).astype(np.float32)


def write_flo(field: np.ndarray, path) -> None:
    """Write an (h, w, 2) displacement field as ``.flo`` (float32 payload)."""
    field = np.asarray(field)
    if field.ndim != 3 or field.shape[2] != 2:
        raise ValueError(f"flow field must be (h, w, 2), got {field.shape}")
    if not np.all(np.isfinite(field)):
        raise ValueError("flow field contains NaN or Inf")
    h, w = field.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        fh.write(np.ascontiguousarray(field, dtype="<f4").tobytes())


def read_flow_set(forward_paths: Sequence, backward_paths: Sequence) -> FlowSet:
    if len(forward_paths) != len(backward_paths):
        raise FormatError(
            f"{len(forward_paths)} forward but {len(backward_paths)} backward flow files"
        )
    if not forward_paths:
        raise FormatError("no flow files given")
    fwd = [read_flo(p) for p in forward_paths]
    bwd = [read_flo(p) for p in backward_paths]
    shape = fwd[0].shape
    for p, f in zip(list(forward_paths) + list(backward_paths), fwd + bwd):
        if f.shape != shape:
            raise FormatError(f"{p}: flow shape {f.shape} differs from {shape}")
    return FlowSet(np.stack(fwd), np.stack(bwd))


# --------------------------------------------------------------------------
# synthetic sequences


@dataclass
class SynthSpec:
    """Moving textured object over a textured, optionally drifting background.

    Velocities are (dx, dy) pixels per frame; ``start`` is the object's
    top-left corner (y, x) in frame 0.
    """

    m: int = 5
    h: int = 16
    w: int = 16
    shape: str = "square"
    size: int = 4
    start: Optional[tuple] = None
    velocity: tuple = (1.0, 0.0)
    background_velocity: tuple = (0.0, 0.0)
    seed: int = 0
    channels: int = 3
    texture_seed: Optional[int] = None

    def object_origin(self, t: int) -> tuple:
        if self.start is not None:
            sy, sx = self.start
        else:
            # centre the whole trajectory in the frame
            sy = (self.h - self.size) / 2.0 - self.velocity[1] * (self.m - 1) / 2.0
            sx = (self.w - self.size) / 2.0 - self.velocity[0] * (self.m - 1) / 2.0
        return sy + self.velocity[1] * t, sx + self.velocity[0] * t


def _object_mask(spec: SynthSpec, t: int) -> np.ndarray:
    oy, ox = spec.object_origin(t)
    yy, xx = np.mgrid[0:spec.h, 0:spec.w].astype(np.float64)
    if spec.shape == "square":
        return (yy >= oy) & (yy < oy + spec.size) & (xx >= ox) & (xx < ox + spec.size)
    if spec.shape == "disc":
        c = (spec.size - 1) / 2.0
        return (yy - oy - c) ** 2 + (xx - ox - c) ** 2 <= (spec.size / 2.0) ** 2
    raise ValueError(f"unknown object shape {spec.shape!r}")


def _sample(texture: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    out = np.empty(ys.shape + (texture.shape[2],))
    for c in range(texture.shape[2]):
        out[..., c] = ndimage.map_coordinates(texture[..., c], [ys, xs], order=1, mode="grid-wrap")
    return out


def synth_sequence(spec: SynthSpec) -> tuple[VideoTensor, FlowSet, GroundTruth]:
    """Render a synthetic video with exact flows and masks.

    Forward flow equals the object velocity on the object's footprint in
    frame t and the background velocity elsewhere; backward flow on frame
    t+1 is the negated velocity of whatever occupies each pixel there.
    """
    if spec.m < 2:
        raise ValueError("synthetic sequence needs m >= 2")
    if spec.size < 1 or spec.size > min(spec.h, spec.w):
        raise ValueError(f"object size {spec.size} does not fit a {spec.h}x{spec.w} frame")
    if spec.channels not in (1, 3):
        raise ValueError("channels must be 1 or 3")

    rng = np.random.default_rng(spec.seed if spec.texture_seed is None else spec.texture_seed)
    c = spec.channels
    # background: mid-grey noise; object: a distinct base colour plus noise
    bg_tex = 0.25 + 0.5 * ndimage.uniform_filter(rng.random((spec.h, spec.w, c)), size=(2, 2, 1), mode="wrap")
    base = rng.uniform(0.55, 0.9, size=c) if c == 3 else np.array([0.8])
    obj_tex = np.clip(base + 0.1 * (rng.random((spec.size, spec.size, c)) - 0.5), 0.0, 1.0)

    yy, xx = np.mgrid[0:spec.h, 0:spec.w].astype(np.float64)
    frames = np.empty((spec.m, spec.h, spec.w, c))
    masks = np.empty((spec.m, spec.h, spec.w), dtype=bool)
    bvx, bvy = spec.background_velocity
    for t in range(spec.m):
        mask = _object_mask(spec, t)
        if not mask.any():
            raise ValueError(f"object leaves the frame entirely at t={t}")
        bg = _sample(bg_tex, yy - bvy * t, xx - bvx * t)
        oy, ox = spec.object_origin(t)
        obj = _sample(obj_tex, yy - oy, xx - ox)
        frames[t] = np.where(mask[..., None], obj, bg)
        masks[t] = mask

    vx, vy = spec.velocity
    forward = np.empty((spec.m - 1, spec.h, spec.w, 2))
    backward = np.empty_like(forward)
    for t in range(spec.m - 1):
        forward[t, ..., 0] = np.where(masks[t], vx, bvx)
        forward[t, ..., 1] = np.where(masks[t], vy, bvy)
        backward[t, ..., 0] = np.where(masks[t + 1], -vx, -bvx)
        backward[t, ..., 1] = np.where(masks[t + 1], -vy, -bvy)

    boxes = [mask_box(mk) for mk in masks]
    return VideoTensor(np.clip(frames, 0.0, 1.0)), FlowSet(forward, backward), GroundTruth(masks, boxes)


_AXES = ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0))


def desk_spec(seed: int, m: int = 8, h: int = 32, w: int = 32, size: int = 10) -> SynthSpec:
    """Seeded benchmark sequence: square (even seed) or disc (odd seed) moving
    one pixel per frame along an axis over a background drifting along a
    different axis direction."""
    rng = np.random.default_rng(seed)
    obj, bg = rng.choice(len(_AXES), size=2, replace=False)
    return SynthSpec(m=m, h=h, w=w, shape="square" if seed % 2 == 0 else "disc", size=size,
                     velocity=_AXES[obj], background_velocity=_AXES[bg], seed=seed)


def mask_box(mask: np.ndarray) -> Optional[Box]:
    """Tight inclusive box over all true pixels (``None`` if empty)."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


# --------------------------------------------------------------------------
# directory convention


def frame_name(t: int, ext: str) -> str:
    return f"{t:05d}.{ext}"


def list_dir(path, ext: str) -> list:
    names = sorted(f for f in os.listdir(path) if f.endswith("." + ext))
    return [os.path.join(path, f) for f in names]


def write_sequence(out_dir, video: VideoTensor, flows: FlowSet, gt: Optional[GroundTruth] = None) -> None:
    """Write frames/, flow_fwd/, flow_bwd/ and gt/ using 5-digit indices."""
    ext = "ppm" if video.channels == 3 else "pgm"
    for sub in ("frames", "flow_fwd", "flow_bwd") + (("gt",) if gt is not None else ()):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    for t in range(video.m):
        write_frame(video.data[t], os.path.join(out_dir, "frames", frame_name(t, ext)))
        if gt is not None and gt.masks is not None:
            write_mask_pgm(gt.masks[t], os.path.join(out_dir, "gt", frame_name(t, "pgm")))
    for t in range(video.m - 1):
        write_flo(flows.forward[t], os.path.join(out_dir, "flow_fwd", frame_name(t, "flo")))
        write_flo(flows.backward[t], os.path.join(out_dir, "flow_bwd", frame_name(t, "flo")))

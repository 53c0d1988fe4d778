"""Full-reference quality metrics and content descriptors on raw YUV.

PSNR is computed per plane and combined over Y, U and V (plain average by
default, 6:1:1 weighting as an option). VMAF is delegated to the external
reference tool and parsed from its JSON output. SI/TI content descriptors
follow the usual convention: maxima over time of the spatial standard
deviation of the Sobel-filtered luma and of the standard deviation of
consecutive-frame luma differences.
"""

from __future__ import annotations

import json
import math
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    DimensionMismatch,
    ParseError,
    SizeMismatch,
    TooFewFrames,
    ToolFailure,
    ToolMissing,
)
from .harness import SequenceMeta, render_template

PSNR_CAP_DB = 100.0


@dataclass(frozen=True)
class FramePlanes:
    """One 4:2:0 frame: full-resolution luma, half-resolution chroma."""

    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    bit_depth: int
    width: int
    height: int


@dataclass(frozen=True)
class QualityScore:
    """Per-plane and combined PSNR plus (optionally) VMAF."""

    psnr_y: float
    psnr_u: float
    psnr_v: float
    psnr_yuv: float
    vmaf: float | None = None


@dataclass(frozen=True)
class SiTi:
    """Spatial and temporal information of a sequence."""

    si: float
    ti: float


def read_yuv(path: Path | str, meta: SequenceMeta) -> Iterator[FramePlanes]:
    """Yield every complete frame of a headerless planar 4:2:0 file.

    10-bit content is stored as 16-bit little-endian words. A file whose
    size is not a whole number of frames signals wrong metadata or a
    truncated file.
    """
    path = Path(path)
    frame_bytes = meta.frame_bytes
    size = path.stat().st_size
    if size % frame_bytes != 0:
        raise SizeMismatch(
            f"{path}: {size} bytes is not a multiple of the {frame_bytes}-byte frame"
        )
    dtype = np.dtype("<u2") if meta.bit_depth > 8 else np.dtype("u1")
    w, h = meta.width, meta.height
    cw, ch = w // 2, h // 2
    y_px, c_px = w * h, cw * ch
    with open(path, "rb") as fh:
        for _ in range(size // frame_bytes):
            raw = np.frombuffer(fh.read(frame_bytes), dtype=dtype)
            yield FramePlanes(
                y=raw[:y_px].reshape(h, w),
                u=raw[y_px : y_px + c_px].reshape(ch, cw),
                v=raw[y_px + c_px :].reshape(ch, cw),
                bit_depth=meta.bit_depth,
                width=w,
                height=h,
            )


def psnr_plane(ref: np.ndarray, dist: np.ndarray, bit_depth: int, cap_db: float = PSNR_CAP_DB) -> float:
    """PSNR of one plane in dB; identical planes return the finite cap."""
    if ref.shape != dist.shape:
        raise DimensionMismatch(f"plane shapes differ: {ref.shape} vs {dist.shape}")
    diff = ref.astype(np.float64) - dist.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return cap_db
    peak = float(2**bit_depth - 1)
    return 10.0 * math.log10(peak * peak / mse)


def psnr_combined(psnr_y: float, psnr_u: float, psnr_v: float, mode: str = "mean") -> float:
    """Combine per-plane PSNRs: plain average or 6:1:1 luma weighting."""
    if mode == "mean":
        return (psnr_y + psnr_u + psnr_v) / 3.0
    if mode == "611":
        return (6.0 * psnr_y + psnr_u + psnr_v) / 8.0
    raise ValueError(f"unknown combination mode {mode!r}")


def psnr_frame(ref: FramePlanes, dist: FramePlanes, mode: str = "mean", cap_db: float = PSNR_CAP_DB) -> QualityScore:
    py = psnr_plane(ref.y, dist.y, ref.bit_depth, cap_db)
    pu = psnr_plane(ref.u, dist.u, ref.bit_depth, cap_db)
    pv = psnr_plane(ref.v, dist.v, ref.bit_depth, cap_db)
    return QualityScore(py, pu, pv, psnr_combined(py, pu, pv, mode))


def psnr_sequence(
    ref_path: Path | str,
    dist_path: Path | str,
    meta: SequenceMeta,
    mode: str = "mean",
    cap_db: float = PSNR_CAP_DB,
) -> QualityScore:
    """Average per-frame plane PSNRs over a sequence, then combine."""
    sums = np.zeros(3)
    n = 0
    try:
        for ref, dist in zip(read_yuv(ref_path, meta), read_yuv(dist_path, meta), strict=True):
            score = psnr_frame(ref, dist, mode, cap_db)
            sums += (score.psnr_y, score.psnr_u, score.psnr_v)
            n += 1
    except ValueError as exc:
        raise SizeMismatch(f"frame counts differ between {ref_path} and {dist_path}") from exc
    if n == 0:
        raise TooFewFrames("no frames to compare")
    py, pu, pv = (sums / n).tolist()
    return QualityScore(py, pu, pv, psnr_combined(py, pu, pv, mode))


# ---------------------------------------------------------------------------
# VMAF external-tool client

DEFAULT_VMAF_ARGS = (
    "--reference $ref --distorted $dist --width $width --height $height"
    " --pixel_format $pixfmt --bitdepth $BD --json --output $out"
)


@dataclass(frozen=True)
class VmafTool:
    """How to invoke the external VMAF tool."""

    binary: str = "vmaf"
    args_template: str = DEFAULT_VMAF_ARGS


@dataclass(frozen=True)
class VmafResult:
    """Pooled mean and per-frame VMAF scores with tool provenance."""

    mean: float
    per_frame: tuple[float, ...]
    tool_version: str = ""
    model: str = ""

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "per_frame": list(self.per_frame),
            "tool_version": self.tool_version,
            "model": self.model,
        }

    @classmethod
    def from_json(cls, data: dict) -> "VmafResult":
        return cls(
            mean=data["mean"],
            per_frame=tuple(data["per_frame"]),
            tool_version=data.get("tool_version", ""),
            model=data.get("model", ""),
        )


def vmaf_score(
    ref_path: Path | str,
    dist_path: Path | str,
    meta: SequenceMeta,
    tool: VmafTool | None = None,
    output_json: Path | str | None = None,
) -> VmafResult:
    """Score a distorted sequence against its reference with the VMAF tool.

    Raises :class:`ToolMissing` when the binary is absent (callers may
    degrade to a VMAF-less pipeline), :class:`ToolFailure` on a nonzero
    exit and :class:`ParseError` when the JSON contract is not met.
    """
    tool = tool or VmafTool()
    if shutil.which(tool.binary) is None and not Path(tool.binary).exists():
        raise ToolMissing(f"VMAF tool not found: {tool.binary}")

    cleanup = output_json is None
    if output_json is None:
        fd = tempfile.NamedTemporaryFile(suffix=".json", delete=False)
        fd.close()
        output_json = fd.name
    output_json = Path(output_json)

    mapping = {
        "ref": str(ref_path),
        "dist": str(dist_path),
        "width": str(meta.width),
        "height": str(meta.height),
        "pixfmt": "420",
        "BD": str(meta.bit_depth),
        "out": str(output_json),
    }
    argv = [tool.binary] + render_template(tool.args_template, mapping)
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise ToolFailure(f"VMAF tool exited {proc.returncode}", stderr=proc.stderr)
        try:
            data = json.loads(output_json.read_text())
            mean = float(data["pooled_metrics"]["vmaf"]["mean"])
            frames = tuple(float(f["metrics"]["vmaf"]) for f in data["frames"])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"cannot parse VMAF output: {exc}") from exc
        version = str(data.get("version", ""))
        model = str(data.get("params", {}).get("model", "") or "default")
        return VmafResult(mean=mean, per_frame=frames, tool_version=version, model=model)
    finally:
        if cleanup:
            output_json.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# SI / TI content descriptors


def _to_eight_bit(plane: np.ndarray, bit_depth: int) -> np.ndarray:
    arr = plane.astype(np.float64)
    if bit_depth > 8:
        arr = arr / float(2 ** (bit_depth - 8))
    return arr


def sobel_magnitude(luma: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude over the valid (border-free) region."""
    a = luma.astype(np.float64)
    gx = (
        (a[:-2, 2:] + 2.0 * a[1:-1, 2:] + a[2:, 2:])
        - (a[:-2, :-2] + 2.0 * a[1:-1, :-2] + a[2:, :-2])
    )
    gy = (
        (a[2:, :-2] + 2.0 * a[2:, 1:-1] + a[2:, 2:])
        - (a[:-2, :-2] + 2.0 * a[:-2, 1:-1] + a[:-2, 2:])
    )
    return np.sqrt(gx * gx + gy * gy)


def compute_siti(frames: Iterable[FramePlanes]) -> SiTi:
    """Max-over-time SI and TI of a sequence's luma channel."""
    si = 0.0
    ti = 0.0
    prev: np.ndarray | None = None
    count = 0
    for frame in frames:
        luma = _to_eight_bit(frame.y, frame.bit_depth)
        si = max(si, float(sobel_magnitude(luma).std()))
        if prev is not None:
            ti = max(ti, float((luma - prev).std()))
        prev = luma
        count += 1
    if count < 2:
        raise TooFewFrames(f"SI/TI needs at least 2 frames, got {count}")
    return SiTi(si=si, ti=ti)

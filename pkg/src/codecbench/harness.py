"""Codec command templates, QP mapping and measurable subprocess runs.

Codecs are described by encode/decode command templates with ``$name``
placeholders drawn from a closed set. The HEVC/VVC family uses the
[0, 51] QP scale; VP9/AV1-family codecs use [0, 63] and their operating
points are derived by linearly mapping the 51-scale set and rounding to
the nearest integer.
"""

from __future__ import annotations

import math
import re
import shlex
import shutil
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

from .energy import ConvergencePolicy, ConvergedStat, IdleBaseline, run_converged
from .errors import (
    CodecFailure,
    MissingBinary,
    OutOfRange,
    SizeMismatch,
    UnresolvedPlaceholder,
    ValidationError,
    ZeroDuration,
)
from .power import PowerProvider

PLACEHOLDERS = ("input", "output", "width", "height", "FPS", "QP", "BD", "YUVfmt", "GoP", "KI")

_LEFTOVER_RE = re.compile(r"\$\w+")

CLASS_DIMENSIONS = {"D": (416, 240), "C": (832, 480), "B": (1920, 1080)}

# Encoder invocations of the reference configuration (configurable per experiment).
X265_ENCODE = (
    "ffmpeg -y -s $widthx$height -r $FPS -pix_fmt $YUVfmt -i $input"
    " -c:v libx265 -preset veryfast -crf $QP $output"
)
VP9_ENCODE = (
    "vpxenc $input --width=$width --height=$height --codec=vp9 -o $output"
    " --input-bit-depth=$BD --max-q=$QP --min-q=$QP"
    " --min-gf-interval=16 --max-gf-interval=16 --kf-min-dist=64 --kf-max-dist=64"
    " --fps=$FPS/1 --cpu-used=1 --ivf --bit-depth=$BD"
)
SVT_AV1_ENCODE = (
    "SvtAV1EncApp -i $input -w $width -h $height passes=2 cpu-used=1 -b $output"
    " --fps $FPS --input-depth $BD lag-in-frames=$GoP --keyint $KI -q $QP"
)
VVENC_ENCODE = (
    "vvencapp -s $widthx$height -r $FPS -c yuv420_10 -i $input --preset medium -q $QP -o $output"
)

# Decoders are not pinned by the reference configuration; these defaults
# decode each family's container back to raw planar YUV.
DEFAULT_DECODE_TEMPLATES = {
    "x265": "ffmpeg -y -i $input -f rawvideo -pix_fmt $YUVfmt $output",
    "vp9": "ffmpeg -y -i $input -f rawvideo -pix_fmt $YUVfmt $output",
    "svt-av1": "aomdec --rawvideo -o $output $input",
    "vvenc": "vvdecapp -b $input -o $output",
}


def map_qp(qp51: int) -> int:
    """Map a [0, 51]-scale QP onto [0, 63], rounding half away from zero."""
    if not 0 <= qp51 <= 51:
        raise OutOfRange(f"QP {qp51} outside [0, 51]")
    return math.floor(qp51 * 63.0 / 51.0 + 0.5)


@dataclass(frozen=True)
class CodecSpec:
    """A codec as a pair of parameterized command templates."""

    id: str
    encode_template: str
    decode_template: str
    qp_scale: int
    bitstream_ext: str
    gop: int = 16
    keyint: int = 64

    def __post_init__(self):
        if self.qp_scale not in (51, 63):
            raise ValidationError([f"codec {self.id}: qp_scale must be 51 or 63"])

    @property
    def encode_binary(self) -> str:
        return shlex.split(self.encode_template)[0]

    @property
    def decode_binary(self) -> str:
        return shlex.split(self.decode_template)[0]


@dataclass(frozen=True)
class SequenceMeta:
    """A raw test sequence and its geometry."""

    name: str
    class_label: str
    width: int
    height: int
    frame_count: int
    fps: float
    bit_depth: int
    path: Path
    pixel_format: str = ""

    def __post_init__(self):
        if self.class_label in CLASS_DIMENSIONS:
            expect = CLASS_DIMENSIONS[self.class_label]
            if (self.width, self.height) != expect:
                raise ValidationError(
                    [
                        f"sequence {self.name}: class {self.class_label} expects "
                        f"{expect[0]}x{expect[1]}, got {self.width}x{self.height}"
                    ]
                )
        else:
            raise ValidationError([f"sequence {self.name}: unknown class {self.class_label!r}"])
        if self.bit_depth not in (8, 10):
            raise ValidationError([f"sequence {self.name}: bit depth must be 8 or 10"])
        if not self.pixel_format:
            fmt = "yuv420p" if self.bit_depth == 8 else "yuv420p10le"
            object.__setattr__(self, "pixel_format", fmt)
        object.__setattr__(self, "path", Path(self.path))

    @property
    def frame_bytes(self) -> int:
        samples = self.width * self.height + 2 * (self.width // 2) * (self.height // 2)
        return samples * (2 if self.bit_depth > 8 else 1)

    @property
    def duration_s(self) -> float:
        return self.frame_count / self.fps

    def validate_file(self) -> None:
        if not self.path.exists():
            raise ValidationError([f"sequence {self.name}: file not found: {self.path}"])
        actual = self.path.stat().st_size
        expected = self.frame_count * self.frame_bytes
        if actual != expected:
            raise ValidationError(
                [
                    f"sequence {self.name}: file size {actual} != "
                    f"{self.frame_count} frames x {self.frame_bytes} bytes = {expected}"
                ]
            )


@dataclass(frozen=True)
class EncodeResult:
    """Statistics of the bitstream produced by one encode."""

    bitstream_path: Path
    bitrate_kbps: float
    encode_wall_s: float
    qp_used: int
    exit_status: int


def _fps_str(fps: float) -> str:
    return str(int(fps)) if float(fps).is_integer() else repr(float(fps))


def render_template(template: str, mapping: dict[str, str]) -> list[str]:
    """Substitute ``$name`` placeholders in a shell-style template.

    Splitting happens before substitution, so values containing spaces
    stay single arguments. Any ``$token`` left after substitution raises
    :class:`UnresolvedPlaceholder`.
    """
    names = sorted(mapping, key=len, reverse=True)
    pattern = re.compile(r"\$(?:" + "|".join(re.escape(n) for n in names) + r")")
    argv = []
    for token in shlex.split(template):
        token = pattern.sub(lambda m: str(mapping[m.group(0)[1:]]), token)
        leftover = _LEFTOVER_RE.findall(token)
        if leftover:
            raise UnresolvedPlaceholder(f"unresolved placeholders {leftover} in {token!r}")
        argv.append(token)
    return argv


def render_command(
    spec: CodecSpec,
    seq: SequenceMeta,
    qp: int,
    paths: dict[str, Path | str],
    phase: str = "encode",
) -> list[str]:
    """Fully substituted argv for one encode or decode invocation."""
    if not 0 <= qp <= spec.qp_scale:
        raise OutOfRange(f"QP {qp} outside [0, {spec.qp_scale}] for {spec.id}")
    template = spec.encode_template if phase == "encode" else spec.decode_template
    mapping = {
        "input": str(paths["input"]),
        "output": str(paths["output"]),
        "width": str(seq.width),
        "height": str(seq.height),
        "FPS": _fps_str(seq.fps),
        "QP": str(qp),
        "BD": str(seq.bit_depth),
        "YUVfmt": seq.pixel_format,
        "GoP": str(spec.gop),
        "KI": str(spec.keyint),
    }
    return render_template(template, mapping)


def compute_bitrate(bitstream_bytes: int, frame_count: int, fps: float) -> float:
    """Kilobits per second of a bitstream for a clip of known duration."""
    if frame_count <= 0 or fps <= 0:
        raise ZeroDuration("frame_count and fps must be positive")
    if bitstream_bytes < 0:
        raise ValueError("bitstream_bytes must be >= 0")
    return bitstream_bytes * 8.0 * fps / frame_count / 1000.0


def ensure_binary(argv0: str) -> str:
    """Resolve an executable, raising :class:`MissingBinary` when absent."""
    path = Path(argv0)
    if path.is_absolute() or len(path.parts) > 1:
        if path.exists():
            return str(path)
        raise MissingBinary(f"executable not found: {argv0}")
    resolved = shutil.which(argv0)
    if resolved is None:
        raise MissingBinary(f"executable not found on PATH: {argv0}")
    return resolved


def probe_version(argv0: str, timeout_s: float = 10.0) -> str:
    """Best-effort version string of a codec binary."""
    try:
        binary = ensure_binary(argv0)
    except MissingBinary:
        return "unknown"
    for flag in ("--version", "-version"):
        try:
            proc = subprocess.run(
                [binary, flag], capture_output=True, text=True, timeout=timeout_s
            )
        except (OSError, subprocess.TimeoutExpired):
            continue
        out = (proc.stdout or proc.stderr).strip()
        if proc.returncode == 0 and out:
            return out.splitlines()[0]
    return "unknown"


def run_logged(argv: list[str], log_path: Path | None = None, timeout_s: float | None = None):
    """Run a subprocess, capture its output, append it to a log file."""
    started = time.monotonic()
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout_s)
    except FileNotFoundError as exc:
        raise MissingBinary(f"executable not found: {argv[0]}") from exc
    wall_s = time.monotonic() - started
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(log_path, "a") as fh:
            fh.write(f"$ {shlex.join(argv)}\n")
            if proc.stdout:
                fh.write(proc.stdout)
            if proc.stderr:
                fh.write(proc.stderr)
            fh.write(f"[exit {proc.returncode}, {wall_s:.3f}s]\n")
    return proc, wall_s


def run_encode(
    spec: CodecSpec,
    seq: SequenceMeta,
    qp: int,
    provider: PowerProvider,
    baseline: IdleBaseline,
    policy: ConvergencePolicy,
    workdir: Path | str,
    interval_ms: float = 100.0,
    log_dir: Path | None = None,
    session_dir: Path | None = None,
) -> tuple[EncodeResult, ConvergedStat]:
    """Encode once for statistics, then measure encode energy to convergence.

    The statistics bitstream is kept; energy runs re-encode to a discarded
    path so first-run disk-cache effects do not skew the repetitions.
    Per-run measurements are appended under ``session_dir`` when given.
    """
    if not seq.path.exists():
        raise ValidationError([f"input not found: {seq.path}"])
    ensure_binary(spec.encode_binary)

    workdir = Path(workdir)
    stem = f"{spec.id}_{seq.name}_qp{qp}"
    bitstream = workdir / "bitstreams" / f"{stem}.{spec.bitstream_ext}"
    bitstream.parent.mkdir(parents=True, exist_ok=True)
    discard = workdir / "tmp" / f"{stem}_energy.{spec.bitstream_ext}"
    discard.parent.mkdir(parents=True, exist_ok=True)
    log = (log_dir / f"{stem}_encode.log") if log_dir else None

    argv = render_command(spec, seq, qp, {"input": seq.path, "output": bitstream})
    proc, wall_s = run_logged(argv, log)
    if proc.returncode != 0 or not bitstream.exists():
        raise CodecFailure(f"{spec.id} encode failed (exit {proc.returncode})", stderr=proc.stderr)
    result = EncodeResult(
        bitstream_path=bitstream,
        bitrate_kbps=compute_bitrate(bitstream.stat().st_size, seq.frame_count, seq.fps),
        encode_wall_s=wall_s,
        qp_used=qp,
        exit_status=proc.returncode,
    )

    argv_energy = render_command(spec, seq, qp, {"input": seq.path, "output": discard})

    def encode_once():
        p, _ = run_logged(argv_energy, log)
        if p.returncode != 0:
            raise CodecFailure(f"{spec.id} energy encode failed", stderr=p.stderr)

    try:
        stat = run_converged(encode_once, provider, baseline, policy, phase="encode",
                             interval_ms=interval_ms,
                             session_log=_session_log(session_dir, stem, "encode"))
    finally:
        discard.unlink(missing_ok=True)
    return result, stat


def run_decode(
    spec: CodecSpec,
    bitstream: Path | str,
    seq: SequenceMeta,
    qp: int,
    provider: PowerProvider,
    baseline: IdleBaseline,
    policy: ConvergencePolicy,
    workdir: Path | str,
    interval_ms: float = 100.0,
    inner_loops: int = 1,
    log_dir: Path | None = None,
    session_dir: Path | None = None,
) -> tuple[Path, ConvergedStat]:
    """Decode once for quality metrics, then measure decode energy.

    ``inner_loops`` repeats the decoder back-to-back inside one
    measurement to lift very short decodes above the sampler resolution;
    the reported energy is divided by the loop count.
    """
    bitstream = Path(bitstream)
    if not bitstream.exists():
        raise ValidationError([f"bitstream not found: {bitstream}"])
    ensure_binary(spec.decode_binary)

    workdir = Path(workdir)
    stem = f"{spec.id}_{seq.name}_qp{qp}"
    decoded = workdir / "decoded" / f"{stem}.yuv"
    decoded.parent.mkdir(parents=True, exist_ok=True)
    discard = workdir / "tmp" / f"{stem}_energy.yuv"
    discard.parent.mkdir(parents=True, exist_ok=True)
    log = (log_dir / f"{stem}_decode.log") if log_dir else None

    argv = render_command(spec, seq, qp, {"input": bitstream, "output": decoded}, phase="decode")
    proc, _ = run_logged(argv, log)
    if proc.returncode != 0 or not decoded.exists():
        raise CodecFailure(f"{spec.id} decode failed (exit {proc.returncode})", stderr=proc.stderr)
    expected = seq.frame_count * seq.frame_bytes
    actual = decoded.stat().st_size
    if actual != expected:
        raise SizeMismatch(
            f"decoded output {decoded} is {actual} bytes, expected {expected} "
            f"({seq.frame_count} frames)"
        )

    argv_energy = render_command(
        spec, seq, qp, {"input": bitstream, "output": discard}, phase="decode"
    )

    def decode_once():
        p, _ = run_logged(argv_energy, log)
        if p.returncode != 0:
            raise CodecFailure(f"{spec.id} energy decode failed", stderr=p.stderr)

    try:
        stat = run_converged(decode_once, provider, baseline, policy, phase="decode",
                             interval_ms=interval_ms, inner_loops=inner_loops,
                             session_log=_session_log(session_dir, stem, "decode"))
    finally:
        discard.unlink(missing_ok=True)
    return decoded, stat


def _session_log(session_dir: Path | None, stem: str, phase: str) -> Path | None:
    if session_dir is None:
        return None
    session_dir.mkdir(parents=True, exist_ok=True)
    path = session_dir / f"{stem}_{phase}.jsonl"
    path.unlink(missing_ok=True)  # a fresh converged session replaces stale runs
    return path

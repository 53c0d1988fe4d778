"""Experiment configuration: a single TOML file describing the campaign."""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ValidationError
from .harness import DEFAULT_DECODE_TEMPLATES, CodecSpec, SequenceMeta, map_qp
from .quality import DEFAULT_VMAF_ARGS, VmafTool

DEFAULT_QP51 = (22, 27, 32, 37)


@dataclass(frozen=True)
class ConvergenceSettings:
    min_runs: int = 3
    max_runs_encode: int = 30
    max_runs_decode: int = 100
    rel_threshold: float = 0.05
    confidence: float = 0.95
    decode_inner_loops: int = 1


@dataclass(frozen=True)
class EnergySettings:
    source: str = "powercap"  # powercap | replay | synthetic
    powercap_root: str = ""
    interval_ms: float = 100.0
    traces_dir: Path | None = None
    idle_trace: str = "idle.csv"
    synthetic_idle_w: float = 5.0
    synthetic_load_w: float = 40.0
    idle_duration_s: float = 60.0
    baseline_min_s: float = 60.0
    baseline_max_age_s: float = 86400.0


@dataclass(frozen=True)
class ExperimentConfig:
    codecs: tuple[CodecSpec, ...]
    sequences: tuple[SequenceMeta, ...]
    qp_sets: dict[int, tuple[int, ...]]
    anchor_codec_id: str
    convergence: ConvergenceSettings = ConvergenceSettings()
    energy: EnergySettings = EnergySettings()
    vmaf: VmafTool | None = None
    workdir: Path = Path("work")
    cooldown_s: float = 0.0
    psnr_mode: str = "mean"

    def qps_for(self, codec: CodecSpec) -> tuple[int, ...]:
        return self.qp_sets[codec.qp_scale]

    def codec(self, codec_id: str) -> CodecSpec:
        for c in self.codecs:
            if c.id == codec_id:
                return c
        raise KeyError(codec_id)


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path: Path | str, check_files: bool = True) -> ExperimentConfig:
    """Parse and validate an experiment file.

    Referenced sequence files are checked for existence and exact size
    unless ``check_files`` is disabled. All collected problems are
    reported together in one :class:`ValidationError`.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError([f"config file not found: {path}"])
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError([f"config parse error: {exc}"]) from exc
    base = path.parent.resolve()
    errors: list[str] = []

    exp = data.get("experiment", {})
    anchor = exp.get("anchor", "")
    if not anchor:
        errors.append("experiment.anchor: required")
    workdir = _resolve(base, exp.get("workdir", "work"))
    cooldown_s = float(exp.get("cooldown_s", 0.0))
    psnr_mode = exp.get("psnr_mode", "mean")
    if psnr_mode not in ("mean", "611"):
        errors.append(f"experiment.psnr_mode: must be 'mean' or '611', got {psnr_mode!r}")

    qp51 = tuple(int(q) for q in exp.get("qp51", DEFAULT_QP51))
    bad51 = [q for q in qp51 if not 0 <= q <= 51]
    if bad51:
        errors.append(f"experiment.qp51: values outside [0, 51]: {bad51}")
    if "qp63" in exp:
        qp63 = tuple(int(q) for q in exp["qp63"])
        bad63 = [q for q in qp63 if not 0 <= q <= 63]
        if bad63:
            errors.append(f"experiment.qp63: values outside [0, 63]: {bad63}")
    elif not bad51:
        qp63 = tuple(map_qp(q) for q in qp51)
    else:
        qp63 = ()
    if qp63 and len(qp63) != len(qp51):
        errors.append(
            f"experiment.qp63: {len(qp63)} entries but qp51 has {len(qp51)} (rungs are paired)"
        )

    conv_raw = data.get("convergence", {})
    try:
        convergence = ConvergenceSettings(
            min_runs=int(conv_raw.get("min_runs", 3)),
            max_runs_encode=int(conv_raw.get("max_runs_encode", 30)),
            max_runs_decode=int(conv_raw.get("max_runs_decode", 100)),
            rel_threshold=float(conv_raw.get("rel_threshold", 0.05)),
            confidence=float(conv_raw.get("confidence", 0.95)),
            decode_inner_loops=int(conv_raw.get("decode_inner_loops", 1)),
        )
    except (TypeError, ValueError) as exc:
        errors.append(f"convergence: {exc}")
        convergence = ConvergenceSettings()

    en_raw = data.get("energy", {})
    source = en_raw.get("source", "powercap")
    if source not in ("powercap", "replay", "synthetic"):
        errors.append(f"energy.source: must be powercap|replay|synthetic, got {source!r}")
    traces_dir = None
    if "traces_dir" in en_raw:
        traces_dir = _resolve(base, en_raw["traces_dir"])
    if source == "replay":
        if traces_dir is None:
            errors.append("energy.traces_dir: required when energy.source = 'replay'")
        elif check_files and not traces_dir.is_dir():
            errors.append(f"energy.traces_dir: not a directory: {traces_dir}")
    energy = EnergySettings(
        source=source,
        powercap_root=en_raw.get("powercap_root", ""),
        interval_ms=float(en_raw.get("interval_ms", 100.0)),
        traces_dir=traces_dir,
        idle_trace=en_raw.get("idle_trace", "idle.csv"),
        synthetic_idle_w=float(en_raw.get("synthetic_idle_w", 5.0)),
        synthetic_load_w=float(en_raw.get("synthetic_load_w", 40.0)),
        idle_duration_s=float(en_raw.get("idle_duration_s", 60.0)),
        baseline_min_s=float(en_raw.get("baseline_min_s", 60.0)),
        baseline_max_age_s=float(en_raw.get("baseline_max_age_s", 86400.0)),
    )

    vmaf = None
    vm_raw = data.get("vmaf", {})
    if vm_raw.get("enabled", bool(vm_raw)):
        vmaf = VmafTool(
            binary=vm_raw.get("binary", "vmaf"),
            args_template=vm_raw.get("args", DEFAULT_VMAF_ARGS),
        )

    codecs: list[CodecSpec] = []
    seen_ids = set()
    for i, c in enumerate(data.get("codecs", [])):
        cid = c.get("id", "")
        label = f"codecs[{i}]{f' ({cid})' if cid else ''}"
        if not cid:
            errors.append(f"{label}: id is required")
            continue
        if cid in seen_ids:
            errors.append(f"{label}: duplicate codec id")
            continue
        seen_ids.add(cid)
        encode = c.get("encode", "")
        if not encode:
            errors.append(f"{label}: encode template is required")
        decode = c.get("decode", DEFAULT_DECODE_TEMPLATES.get(cid, ""))
        if not decode:
            errors.append(f"{label}: decode template is required (no default for {cid!r})")
        try:
            codecs.append(
                CodecSpec(
                    id=cid,
                    encode_template=encode,
                    decode_template=decode,
                    qp_scale=int(c.get("qp_scale", 51)),
                    bitstream_ext=c.get("bitstream_ext", "bin"),
                    gop=int(c.get("gop", 16)),
                    keyint=int(c.get("keyint", 64)),
                )
            )
        except ValidationError as exc:
            errors.extend(exc.errors)

    sequences: list[SequenceMeta] = []
    seen_names = set()
    for i, s in enumerate(data.get("sequences", [])):
        name = s.get("name", f"sequences[{i}]")
        if name in seen_names:
            errors.append(f"sequences[{i}] ({name}): duplicate sequence name")
            continue
        seen_names.add(name)
        try:
            meta = SequenceMeta(
                name=name,
                class_label=s.get("class", ""),
                width=int(s.get("width", 0)),
                height=int(s.get("height", 0)),
                frame_count=int(s.get("frames", 0)),
                fps=float(s.get("fps", 0)),
                bit_depth=int(s.get("bit_depth", 8)),
                path=_resolve(base, s.get("path", "")),
                pixel_format=s.get("pixel_format", ""),
            )
        except ValidationError as exc:
            errors.extend(exc.errors)
            continue
        if check_files:
            try:
                meta.validate_file()
            except ValidationError as exc:
                errors.extend(exc.errors)
        sequences.append(meta)

    if anchor and anchor not in seen_ids:
        errors.append(f"experiment.anchor: {anchor!r} is not a configured codec")
    if not codecs:
        errors.append("codecs: at least one codec is required")
    if not sequences:
        errors.append("sequences: at least one sequence is required")

    if errors:
        raise ValidationError(errors)

    return ExperimentConfig(
        codecs=tuple(codecs),
        sequences=tuple(sequences),
        qp_sets={51: qp51, 63: qp63},
        anchor_codec_id=anchor,
        convergence=convergence,
        energy=energy,
        vmaf=vmaf,
        workdir=workdir,
        cooldown_s=cooldown_s,
        psnr_mode=psnr_mode,
    )

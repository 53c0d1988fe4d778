"""Shared fixtures: deterministic content, stub codec, replay traces."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

from codecbench.harness import SequenceMeta, map_qp
from codecbench.power import PowerSample, PowerTrace


def mix_bytes(n: int, seed: int) -> np.ndarray:
    """Deterministic pseudo-random bytes (SplitMix64 finalizer over indices).

    Stable across platforms and numpy versions, unlike Generator streams.
    """
    idx = np.arange(n, dtype=np.uint64) + np.uint64(seed)
    with np.errstate(over="ignore"):
        z = idx * np.uint64(0x9E3779B97F4A7C15)
        z ^= z >> np.uint64(30)
        z *= np.uint64(0xBF58476D1CE4E5B9)
        z ^= z >> np.uint64(27)
        z *= np.uint64(0x94D049BB133111EB)
        z ^= z >> np.uint64(31)
    return (z & np.uint64(0xFF)).astype(np.uint8)


def write_yuv(path: Path, meta: SequenceMeta, seed: int = 1) -> Path:
    """Write a deterministic 8-bit raw 4:2:0 file matching the metadata."""
    assert meta.bit_depth == 8, "fixtures are 8-bit"
    data = mix_bytes(meta.frame_count * meta.frame_bytes, seed)
    path.write_bytes(data.tobytes())
    return path


def make_sequence(tmp_path: Path, name: str = "SynthA", frames: int = 4, seed: int = 1) -> SequenceMeta:
    """A small Class-D sequence with a real file behind it."""
    meta = SequenceMeta(
        name=name,
        class_label="D",
        width=416,
        height=240,
        frame_count=frames,
        fps=50.0,
        bit_depth=8,
        path=tmp_path / f"{name}_416x240.yuv",
    )
    write_yuv(meta.path, meta, seed)
    return meta


def constant_trace(watts: float, duration_s: float, n_samples: int = 11, dram_w: float = 0.0) -> PowerTrace:
    times = np.linspace(0.0, duration_s * 1000.0, n_samples)
    samples = tuple(PowerSample(float(t), watts, dram_w) for t in times)
    return PowerTrace(samples)


def linear_trace(w0: float, w1: float, duration_s: float, n_samples: int = 11) -> PowerTrace:
    times = np.linspace(0.0, duration_s * 1000.0, n_samples)
    watts = np.linspace(w0, w1, n_samples)
    return PowerTrace(tuple(PowerSample(float(t), float(w)) for t, w in zip(times, watts)))


def write_trace_csv(path: Path, duration_ms: float, pkg_w: float, dram_w: float, step_ms: float = 500.0) -> Path:
    times = np.arange(0.0, duration_ms + step_ms / 2, step_ms)
    lines = ["t_ms,pkg_w,dram_w"]
    lines += [f"{t:.1f},{pkg_w!r},{dram_w!r}" for t in times]
    path.write_text("\n".join(lines) + "\n")
    return path


STUB_CODEC = '''\
import json
import sys


def main():
    mode = sys.argv[1]
    args = dict(zip(sys.argv[2::2], sys.argv[3::2]))
    if mode == "encode":
        with open(args["-i"], "rb") as fh:
            src = fh.read()
        qp = int(args["-q"])
        shift = max(1, min(7, (qp - 14) // 4))
        table = bytes(((b >> shift) << shift) for b in range(256))
        body = src.translate(table)
        header = json.dumps({"size": len(body), "shift": shift, "qp": qp}).encode()
        with open(args["-o"], "wb") as fh:
            fh.write(header + b"\\n")
            fh.write(body)
            fh.write(b"\\x00" * ((64 - qp) * 4096))
    elif mode == "decode":
        with open(args["-i"], "rb") as fh:
            header = json.loads(fh.readline())
            body = fh.read(header["size"])
        if len(body) != header["size"]:
            sys.exit("truncated bitstream")
        with open(args["-o"], "wb") as fh:
            fh.write(body)
    else:
        sys.exit("unknown mode: " + mode)


main()
'''


@pytest.fixture
def stub_codec(tmp_path: Path) -> dict[str, str]:
    """Templates for a deterministic fake codec driven through Python."""
    script = tmp_path / "stubcodec.py"
    script.write_text(STUB_CODEC)
    py = sys.executable
    return {
        "encode": f"{py} {script} encode -i $input -o $output -q $QP -w $width -h $height",
        "decode": f"{py} {script} decode -i $input -o $output",
        "script": str(script),
    }


def build_experiment(
    root: Path,
    stub: dict[str, str],
    codec_ids: tuple[str, ...] = ("stubA", "stubB"),
    n_sequences: int = 2,
    qp51: tuple[int, ...] = (22, 27, 32, 37),
    frames: int = 4,
) -> Path:
    """A complete deterministic replay-mode experiment under ``root``.

    Returns the path of the generated config file. The first codec is the
    anchor on the 51 scale; every other codec runs on the 63 scale so the
    derived QP set differs.
    """
    seq_dir = root / "seqs"
    seq_dir.mkdir(parents=True, exist_ok=True)
    traces = root / "traces"
    traces.mkdir(exist_ok=True)

    sequences = [
        make_sequence(seq_dir, name=f"Synth{chr(ord('A') + j)}", frames=frames, seed=j + 1)
        for j in range(n_sequences)
    ]

    write_trace_csv(traces / "idle.csv", 10_000.0, 4.0, 1.0)
    qp_sets = {51: qp51, 63: tuple(map_qp(q) for q in qp51)}
    for ci, codec_id in enumerate(codec_ids):
        scale = 51 if ci == 0 else 63
        for sj, seq in enumerate(sequences):
            for qp in qp_sets[scale]:
                write_trace_csv(
                    traces / f"{codec_id}_{seq.name}_qp{qp}_encode.csv",
                    4_000.0,
                    10.0 + 0.08 * (64 - qp) + 2.0 * ci + 0.5 * sj,
                    1.0,
                )
                write_trace_csv(
                    traces / f"{codec_id}_{seq.name}_qp{qp}_decode.csv",
                    2_000.0,
                    6.0 + 0.01 * (64 - qp) + 0.5 * ci + 0.2 * sj,
                    1.0,
                )

    codec_blocks = []
    for ci, codec_id in enumerate(codec_ids):
        codec_blocks.append(
            f"""
[[codecs]]
id = "{codec_id}"
qp_scale = {51 if ci == 0 else 63}
bitstream_ext = "svb"
encode = "{stub['encode']}"
decode = "{stub['decode']}"
"""
        )
    seq_blocks = []
    for seq in sequences:
        seq_blocks.append(
            f"""
[[sequences]]
name = "{seq.name}"
class = "D"
width = 416
height = 240
frames = {seq.frame_count}
fps = {int(seq.fps)}
bit_depth = 8
path = "{seq.path}"
"""
        )
    config_text = f"""
[experiment]
anchor = "{codec_ids[0]}"
qp51 = [{", ".join(str(q) for q in qp51)}]
workdir = "{root / 'work'}"

[convergence]
min_runs = 2
max_runs_encode = 3
max_runs_decode = 3
rel_threshold = 0.05

[energy]
source = "replay"
traces_dir = "{traces}"
idle_trace = "idle.csv"
idle_duration_s = 60.0
""" + "".join(codec_blocks) + "".join(seq_blocks)
    config_path = root / "experiment.toml"
    config_path.write_text(config_text)
    return config_path

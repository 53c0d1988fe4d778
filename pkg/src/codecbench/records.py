"""Campaign result rows and their persistence.

Each (codec, sequence, QP) cell yields one :class:`RunRecord`. Records are
appended incrementally to a JSON-lines file (full fidelity, used for
resume and analysis) and mirrored to a flat CSV for spreadsheets. Failed
cells are first-class records carrying an error message.
"""

from __future__ import annotations

import csv
import json
import os
import platform
from dataclasses import dataclass
from pathlib import Path

from .energy import ConvergedStat

RECORDS_JSONL = "records.jsonl"
RECORDS_CSV = "records.csv"

CSV_COLUMNS = [
    "codec",
    "sequence",
    "class",
    "qp",
    "status",
    "bitrate_kbps",
    "psnr_yuv",
    "vmaf",
    "enc_j_mean",
    "enc_j_ci",
    "enc_runs",
    "enc_converged",
    "dec_j_mean",
    "dec_j_ci",
    "dec_runs",
    "dec_converged",
    "enc_wall_s",
    "dec_wall_s",
    "codec_version",
    "host_fingerprint",
    "started_at",
    "error",
]


@dataclass(frozen=True)
class EnergySummary:
    """Condensed view of a converged measurement for one phase."""

    mean_j: float
    ci_half_width_j: float
    n_runs: int
    converged: bool

    @classmethod
    def from_stat(cls, stat: ConvergedStat) -> "EnergySummary":
        return cls(
            mean_j=stat.mean,
            ci_half_width_j=stat.ci_half_width,
            n_runs=stat.n_runs,
            converged=stat.converged,
        )

    def to_json(self) -> dict:
        return {
            "mean_j": self.mean_j,
            "ci_half_width_j": self.ci_half_width_j,
            "n_runs": self.n_runs,
            "converged": self.converged,
        }

    @classmethod
    def from_json(cls, data: dict) -> "EnergySummary":
        return cls(**data)


@dataclass(frozen=True)
class RunRecord:
    """One (codec, sequence, QP) measurement outcome."""

    codec_id: str
    sequence_name: str
    class_label: str
    qp: int
    status: str = "ok"  # ok | failed
    error: str | None = None
    bitrate_kbps: float | None = None
    psnr_yuv: float | None = None
    psnr_y: float | None = None
    psnr_u: float | None = None
    psnr_v: float | None = None
    vmaf: float | None = None
    enc_energy: EnergySummary | None = None
    dec_energy: EnergySummary | None = None
    enc_wall_s: float | None = None
    dec_wall_s: float | None = None
    codec_version: str = ""
    host_fingerprint: str = ""
    started_at: float = 0.0

    def key(self) -> tuple[str, str, int]:
        return (self.codec_id, self.sequence_name, self.qp)

    def to_json(self) -> dict:
        data = {
            "codec_id": self.codec_id,
            "sequence_name": self.sequence_name,
            "class_label": self.class_label,
            "qp": self.qp,
            "status": self.status,
            "error": self.error,
            "bitrate_kbps": self.bitrate_kbps,
            "psnr_yuv": self.psnr_yuv,
            "psnr_y": self.psnr_y,
            "psnr_u": self.psnr_u,
            "psnr_v": self.psnr_v,
            "vmaf": self.vmaf,
            "enc_energy": self.enc_energy.to_json() if self.enc_energy else None,
            "dec_energy": self.dec_energy.to_json() if self.dec_energy else None,
            "enc_wall_s": self.enc_wall_s,
            "dec_wall_s": self.dec_wall_s,
            "codec_version": self.codec_version,
            "host_fingerprint": self.host_fingerprint,
            "started_at": self.started_at,
        }
        return data

    @classmethod
    def from_json(cls, data: dict) -> "RunRecord":
        data = dict(data)
        for phase in ("enc_energy", "dec_energy"):
            if data.get(phase) is not None:
                data[phase] = EnergySummary.from_json(data[phase])
        return cls(**data)


def append_record(workdir: Path | str, record: RunRecord) -> None:
    """Append one record to the JSONL store and refresh the CSV mirror."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    jsonl = workdir / RECORDS_JSONL
    existing = {r.key() for r in load_records(workdir)} if jsonl.exists() else set()
    if record.key() in existing:
        raise ValueError(f"duplicate record key {record.key()}")
    with open(jsonl, "a") as fh:
        fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
    write_csv(load_records(workdir), workdir / RECORDS_CSV)


def load_records(workdir: Path | str) -> list[RunRecord]:
    jsonl = Path(workdir) / RECORDS_JSONL
    if not jsonl.exists():
        return []
    out = []
    with open(jsonl) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(RunRecord.from_json(json.loads(line)))
    return out


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(records: list[RunRecord], path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            enc = r.enc_energy or EnergySummary(0.0, 0.0, 0, False)
            dec = r.dec_energy or EnergySummary(0.0, 0.0, 0, False)
            writer.writerow(
                [
                    r.codec_id,
                    r.sequence_name,
                    r.class_label,
                    r.qp,
                    r.status,
                    _cell(r.bitrate_kbps),
                    _cell(r.psnr_yuv),
                    _cell(r.vmaf),
                    _cell(enc.mean_j if r.enc_energy else None),
                    _cell(enc.ci_half_width_j if r.enc_energy else None),
                    _cell(enc.n_runs if r.enc_energy else None),
                    _cell(enc.converged if r.enc_energy else None),
                    _cell(dec.mean_j if r.dec_energy else None),
                    _cell(dec.ci_half_width_j if r.dec_energy else None),
                    _cell(dec.n_runs if r.dec_energy else None),
                    _cell(dec.converged if r.dec_energy else None),
                    _cell(r.enc_wall_s),
                    _cell(r.dec_wall_s),
                    r.codec_version,
                    r.host_fingerprint,
                    _cell(r.started_at),
                    r.error or "",
                ]
            )


def host_fingerprint(domain_kinds: list[str] | None = None) -> str:
    """CPU model + core count + sampler domains; identifies a measurement host."""
    model = ""
    cpuinfo = Path("/proc/cpuinfo")
    if cpuinfo.exists():
        for line in cpuinfo.read_text().splitlines():
            if line.lower().startswith("model name"):
                model = line.split(":", 1)[1].strip()
                break
    if not model:
        model = platform.processor() or platform.machine()
    cores = os.cpu_count() or 0
    domains = "+".join(domain_kinds) if domain_kinds else "none"
    return f"{model}|{cores}|{domains}"

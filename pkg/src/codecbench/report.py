"""Analysis of campaign records into comparison tables and plot data.

For every sequence, each non-anchor codec gets a BD-PSNR/BD-VMAF pair
against the anchor, and every codec (anchor included) gets encode/decode
energy-per-bitrate slopes with their R². An averages row summarizes each
codec over all sequences, and per-codec rate/quality/energy curve points
(one per QP rung, averaged across sequences) feed the plot files.

Emitted artifacts are deterministic: reported values are rounded to six
decimals and host/environment details live in a separate file so the
analysis JSON depends only on record contents.
"""

from __future__ import annotations

import csv
import json
import platform
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .curves import CurvePoint, average_curves, bd_quality, ebr, fit_re_line
from .errors import (
    BenchError,
    EmptyReport,
    MissingAnchor,
    MixedFingerprints,
)
from .quality import compute_siti, read_yuv
from .records import RunRecord

REPORT_CSV_HEADER = [
    "class",
    "sequence",
    "codec",
    "bd_psnr",
    "bd_vmaf",
    "ebr_enc",
    "ebr_dec",
    "r2_enc",
    "r2_dec",
]

PLOT_HEADER_RATE = ["codec", "qp", "rate_kbps", "value"]
PLOT_HEADER_ENERGY = ["codec", "qp", "energy_j", "value"]

AVERAGE_LABEL = "Average"


@dataclass(frozen=True)
class MetricRow:
    """One sequence x codec cell of the comparison table."""

    class_label: str
    sequence: str
    codec: str
    bd_psnr: float | None
    bd_vmaf: float | None
    ebr_enc: float | None
    ebr_dec: float | None
    r2_enc: float | None
    r2_dec: float | None
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class CurveRung:
    """Cross-sequence mean operating point of one codec at one QP rung."""

    qp: int
    rate_kbps: float
    psnr: float
    vmaf: float | None
    enc_j: float | None
    dec_j: float | None


@dataclass(frozen=True)
class Report:
    anchor_id: str
    rows: tuple[MetricRow, ...]
    averages: tuple[MetricRow, ...]
    curves: dict[str, tuple[CurveRung, ...]]
    environment: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()


def _rung_points(records: list[RunRecord], qps: tuple[int, ...], value: str, energy: str):
    """CurvePoints for one (codec, sequence) sweep ordered by QP rung."""
    by_qp = {r.qp: r for r in records}
    points = []
    for qp in qps:
        r = by_qp.get(qp)
        if r is None or r.status != "ok" or r.bitrate_kbps is None:
            return None
        quality = getattr(r, value)
        if quality is None:
            return None
        summary = getattr(r, energy)
        points.append(
            CurvePoint(
                rate_kbps=r.bitrate_kbps,
                quality=quality,
                energy_j=summary.mean_j if summary is not None else None,
            )
        )
    return points


def analyze(
    records: list[RunRecord],
    config: ExperimentConfig,
    force_merge: bool = False,
) -> Report:
    """Compute the comparison table and curve data from campaign records."""
    prints = {r.host_fingerprint for r in records if r.host_fingerprint}
    if len(prints) > 1 and not force_merge:
        raise MixedFingerprints(f"records come from {len(prints)} hosts; use force-merge to combine")

    anchor_id = config.anchor_codec_id
    ok_records = [r for r in records if r.status == "ok"]
    by_codec_seq: dict[str, dict[str, list[RunRecord]]] = {}
    for r in ok_records:
        by_codec_seq.setdefault(r.codec_id, {}).setdefault(r.sequence_name, []).append(r)
    if anchor_id not in by_codec_seq:
        raise MissingAnchor(f"no usable records for anchor codec {anchor_id!r}")

    notes_global: list[str] = []
    rows: list[MetricRow] = []
    seq_class = {s.name: s.class_label for s in config.sequences}
    seq_order = [s.name for s in config.sequences]

    for codec in config.codecs:
        qps = config.qps_for(codec)
        anchor_qps = config.qps_for(config.codec(anchor_id))
        for seq_name in seq_order:
            recs = by_codec_seq.get(codec.id, {}).get(seq_name, [])
            notes: list[str] = []

            bd_psnr = bd_vmaf = None
            if codec.id == anchor_id:
                if _rung_points(recs, qps, "psnr_yuv", "enc_energy") is not None:
                    bd_psnr = 0.0
                if _rung_points(recs, qps, "vmaf", "enc_energy") is not None:
                    bd_vmaf = 0.0
            else:
                anchor_recs = by_codec_seq.get(anchor_id, {}).get(seq_name, [])
                for metric, attr in (("psnr", "psnr_yuv"), ("vmaf", "vmaf")):
                    test_pts = _rung_points(recs, qps, attr, "enc_energy")
                    anchor_pts = _rung_points(anchor_recs, anchor_qps, attr, "enc_energy")
                    if test_pts is None or anchor_pts is None:
                        notes.append(f"bd_{metric}: incomplete curve")
                        continue
                    try:
                        with warnings.catch_warnings(record=True) as caught:
                            warnings.simplefilter("always")
                            result = bd_quality(
                                anchor_pts, test_pts, metric=metric,
                                anchor_id=anchor_id, test_id=codec.id,
                            )
                        notes.extend(str(w.message) for w in caught)
                        if result.outlier:
                            notes.append(f"bd_{metric}: outlier |{result.bd_quality:.2f}| > 20")
                        if metric == "psnr":
                            bd_psnr = result.bd_quality
                        else:
                            bd_vmaf = result.bd_quality
                    except BenchError as exc:
                        notes.append(f"bd_{metric}: {type(exc).__name__}: {exc}")

            cells = {}
            for phase, attr in (("enc", "enc_energy"), ("dec", "dec_energy")):
                pts = _rung_points(recs, qps, "psnr_yuv", attr)
                if pts is None or any(p.energy_j is None for p in pts):
                    notes.append(f"ebr_{phase}: incomplete curve")
                    cells[phase] = (None, None)
                    continue
                try:
                    with warnings.catch_warnings(record=True) as caught:
                        warnings.simplefilter("always")
                        fit = fit_re_line(pts)
                        slope = ebr(fit)
                    notes.extend(str(w.message) for w in caught)
                    cells[phase] = (slope, fit.r_squared)
                except BenchError as exc:
                    notes.append(f"ebr_{phase}: {type(exc).__name__}: {exc}")
                    cells[phase] = (None, None)

            rows.append(
                MetricRow(
                    class_label=seq_class.get(seq_name, ""),
                    sequence=seq_name,
                    codec=codec.id,
                    bd_psnr=bd_psnr,
                    bd_vmaf=bd_vmaf,
                    ebr_enc=cells["enc"][0],
                    ebr_dec=cells["dec"][0],
                    r2_enc=cells["enc"][1],
                    r2_dec=cells["dec"][1],
                    notes=tuple(notes),
                )
            )

    averages = tuple(_average_row(rows, codec.id) for codec in config.codecs)
    curves = {}
    for codec in config.codecs:
        rungs = _codec_curve(by_codec_seq.get(codec.id, {}), config, codec)
        if rungs:
            curves[codec.id] = rungs

    fingerprint = next(iter(prints)) if len(prints) == 1 else ";".join(sorted(prints))
    environment = {
        "host_fingerprint": fingerprint,
        "platform": platform.platform(),
        "codec_versions": {
            c.id: _codec_version(by_codec_seq.get(c.id, {})) for c in config.codecs
        },
        "energy_source": config.energy.source,
    }
    return Report(
        anchor_id=anchor_id,
        rows=tuple(rows),
        averages=averages,
        curves=curves,
        environment=environment,
        warnings=tuple(notes_global),
    )


def _codec_version(seq_map: dict[str, list[RunRecord]]) -> str:
    for recs in seq_map.values():
        for r in recs:
            if r.codec_version:
                return r.codec_version
    return ""


def _average_row(rows: list[MetricRow], codec_id: str) -> MetricRow:
    mine = [r for r in rows if r.codec == codec_id]

    def mean_of(attr: str) -> float | None:
        values = [getattr(r, attr) for r in mine if getattr(r, attr) is not None]
        return float(np.mean(values)) if values else None

    return MetricRow(
        class_label="",
        sequence=AVERAGE_LABEL,
        codec=codec_id,
        bd_psnr=mean_of("bd_psnr"),
        bd_vmaf=mean_of("bd_vmaf"),
        ebr_enc=mean_of("ebr_enc"),
        ebr_dec=mean_of("ebr_dec"),
        r2_enc=mean_of("r2_enc"),
        r2_dec=mean_of("r2_dec"),
    )


def _codec_curve(
    seq_map: dict[str, list[RunRecord]],
    config: ExperimentConfig,
    codec,
) -> tuple[CurveRung, ...]:
    """Per-rung means across sequences with complete sweeps."""
    qps = config.qps_for(codec)
    psnr_curves, vmaf_curves, dec_curves = [], [], []
    for recs in seq_map.values():
        psnr_pts = _rung_points(recs, qps, "psnr_yuv", "enc_energy")
        if psnr_pts is None:
            continue
        psnr_curves.append(psnr_pts)
        vmaf_pts = _rung_points(recs, qps, "vmaf", "dec_energy")
        vmaf_curves.append(vmaf_pts)
        dec_curves.append(_rung_points(recs, qps, "psnr_yuv", "dec_energy"))
    if not psnr_curves:
        return ()
    mean_psnr = average_curves(psnr_curves)
    mean_vmaf = None
    if vmaf_curves and all(c is not None for c in vmaf_curves):
        mean_vmaf = average_curves(vmaf_curves)
    dec_complete = [c for c in dec_curves if c is not None]
    mean_dec = average_curves(dec_complete) if dec_complete else None
    rungs = []
    for i, qp in enumerate(qps):
        rungs.append(
            CurveRung(
                qp=qp,
                rate_kbps=mean_psnr[i].rate_kbps,
                psnr=mean_psnr[i].quality,
                vmaf=mean_vmaf[i].quality if mean_vmaf is not None else None,
                enc_j=mean_psnr[i].energy_j,
                dec_j=mean_dec[i].energy_j if mean_dec else None,
            )
        )
    return tuple(rungs)


# ---------------------------------------------------------------------------
# emission


def _round6(value: float | None) -> float | None:
    return None if value is None else round(float(value), 6)


def report_to_json(report: Report) -> dict:
    """Pure analysis content; no host or wall-clock details."""

    def row_json(row: MetricRow) -> dict:
        return {
            "class": row.class_label,
            "sequence": row.sequence,
            "codec": row.codec,
            "bd_psnr": _round6(row.bd_psnr),
            "bd_vmaf": _round6(row.bd_vmaf),
            "ebr_enc": _round6(row.ebr_enc),
            "ebr_dec": _round6(row.ebr_dec),
            "r2_enc": _round6(row.r2_enc),
            "r2_dec": _round6(row.r2_dec),
            "notes": sorted(row.notes),
        }

    return {
        "anchor": report.anchor_id,
        "metrics": [row_json(r) for r in report.rows],
        "averages": [row_json(r) for r in report.averages],
        "curves": {
            codec: [
                {
                    "qp": rung.qp,
                    "rate_kbps": _round6(rung.rate_kbps),
                    "psnr": _round6(rung.psnr),
                    "vmaf": _round6(rung.vmaf),
                    "enc_j": _round6(rung.enc_j),
                    "dec_j": _round6(rung.dec_j),
                }
                for rung in rungs
            ]
            for codec, rungs in sorted(report.curves.items())
        },
    }


def _fmt(value: float | None) -> str:
    if value is None:
        return ""
    return format(round(float(value), 6), ".6f").rstrip("0").rstrip(".")


def emit(report: Report, out_dir: Path | str, formats: set[str] | None = None) -> list[Path]:
    """Write the report as CSV, analysis JSON and plot-data CSVs.

    Output is byte-deterministic for a given report; environment details
    go to their own file.
    """
    if not report.rows:
        raise EmptyReport("report has no rows")
    formats = formats or {"csv", "json", "plotdata"}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if "csv" in formats:
        path = out_dir / "report.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_CSV_HEADER)
            for row in list(report.rows) + list(report.averages):
                writer.writerow(
                    [
                        row.class_label,
                        row.sequence,
                        row.codec,
                        _fmt(row.bd_psnr),
                        _fmt(row.bd_vmaf),
                        _fmt(row.ebr_enc),
                        _fmt(row.ebr_dec),
                        _fmt(row.r2_enc),
                        _fmt(row.r2_dec),
                    ]
                )
        written.append(path)

    if "json" in formats:
        path = out_dir / "analysis.json"
        path.write_text(json.dumps(report_to_json(report), indent=2, sort_keys=True) + "\n")
        written.append(path)
        env_path = out_dir / "environment.json"
        env_path.write_text(json.dumps(report.environment, indent=2, sort_keys=True) + "\n")
        written.append(env_path)

    if "plotdata" in formats:
        plot_dir = out_dir / "plotdata"
        plot_dir.mkdir(exist_ok=True)
        panels = [
            ("rq_psnr.csv", PLOT_HEADER_RATE, lambda r: (r.rate_kbps, r.psnr)),
            ("rq_vmaf.csv", PLOT_HEADER_RATE, lambda r: (r.rate_kbps, r.vmaf)),
            ("re_enc.csv", PLOT_HEADER_RATE, lambda r: (r.rate_kbps, r.enc_j)),
            ("re_dec.csv", PLOT_HEADER_RATE, lambda r: (r.rate_kbps, r.dec_j)),
            ("qe_vmaf_enc.csv", PLOT_HEADER_ENERGY, lambda r: (r.enc_j, r.vmaf)),
            ("qe_vmaf_dec.csv", PLOT_HEADER_ENERGY, lambda r: (r.dec_j, r.vmaf)),
            ("qe_psnr_enc.csv", PLOT_HEADER_ENERGY, lambda r: (r.enc_j, r.psnr)),
            ("qe_psnr_dec.csv", PLOT_HEADER_ENERGY, lambda r: (r.dec_j, r.psnr)),
        ]
        for name, header, extract in panels:
            path = plot_dir / name
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                for codec in sorted(report.curves):
                    for rung in report.curves[codec]:
                        x, y = extract(rung)
                        writer.writerow([codec, rung.qp, _fmt(x), _fmt(y)])
            written.append(path)

    return written


def siti_summary(config: ExperimentConfig) -> list[dict]:
    """SI/TI per configured sequence; per-sequence failures are recorded."""
    rows = []
    for seq in config.sequences:
        try:
            result = compute_siti(read_yuv(seq.path, seq))
            rows.append(
                {"sequence": seq.name, "class": seq.class_label,
                 "si": result.si, "ti": result.ti, "error": ""}
            )
        except (BenchError, OSError) as exc:
            rows.append(
                {"sequence": seq.name, "class": seq.class_label,
                 "si": None, "ti": None, "error": f"{type(exc).__name__}: {exc}"}
            )
    return rows


def write_siti_csv(rows: list[dict], path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence", "class", "si", "ti", "error"])
        for row in rows:
            writer.writerow(
                [row["sequence"], row["class"], _fmt(row["si"]), _fmt(row["ti"]), row["error"]]
            )

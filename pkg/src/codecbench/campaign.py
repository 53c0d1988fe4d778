"""Measurement campaign execution.

A campaign walks every (codec, sequence, QP) cell in per-codec batches:
encode once for bitstream statistics, measure encode energy to
convergence, decode once for quality metrics, measure decode energy, then
score PSNR and VMAF against the source. Records persist incrementally so
an interrupted campaign resumes where it stopped; a failed cell becomes a
failed record and the campaign continues.

Energy can come from the platform counters (``powercap``), from recorded
trace files (``replay``, fully deterministic, used by the test fixtures)
or from a constant synthetic load (``synthetic``, for dry runs).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from .config import ExperimentConfig
from .energy import (
    ConvergencePolicy,
    IdleBaseline,
    MeasurementLock,
    ensure_baseline_fresh,
    load_baseline,
    measure_idle,
    save_baseline,
)
from .errors import StaleBaseline, ToolMissing, ValidationError
from .harness import CodecSpec, SequenceMeta, probe_version, run_decode, run_encode
from .power import (
    ConstantProfile,
    PowercapProvider,
    PowerProvider,
    RealClock,
    ReplayProvider,
    SyntheticProvider,
    VirtualClock,
)
from .quality import psnr_sequence, vmaf_score
from .records import EnergySummary, RunRecord, append_record, host_fingerprint, load_records

BASELINE_DIR = "baselines"
LOCK_FILE = "campaign.lock"


def plan_keys(config: ExperimentConfig) -> list[tuple[str, str, int]]:
    """The record keys a campaign will produce; a pure function of config."""
    keys = []
    for codec in config.codecs:
        for seq in config.sequences:
            for qp in config.qps_for(codec):
                keys.append((codec.id, seq.name, qp))
    return keys


class EnergyRig:
    """Providers and host identity for the configured energy source."""

    def __init__(self, config: ExperimentConfig):
        self.settings = config.energy
        self._shared: PowerProvider | None = None
        if self.settings.source == "powercap":
            root = self.settings.powercap_root or None
            self._shared = PowercapProvider(root)
        elif self.settings.source == "synthetic":
            total = self.settings.synthetic_idle_w + self.settings.synthetic_load_w
            self._shared = SyntheticProvider(ConstantProfile(total), clock=RealClock())
        elif self.settings.source != "replay":
            raise ValidationError([f"energy.source: unknown source {self.settings.source!r}"])

    @property
    def interval_ms(self) -> float:
        return self.settings.interval_ms

    def domain_kinds(self) -> list[str]:
        if self._shared is not None:
            return [d.kind for d in self._shared.domains()]
        return ["package", "dram"]  # replay traces carry both columns

    def fingerprint(self) -> str:
        return host_fingerprint(self.domain_kinds())

    def idle_provider(self) -> PowerProvider:
        if self.settings.source == "replay":
            return ReplayProvider(self._trace_path(None, "idle"))
        if self.settings.source == "synthetic":
            # idle study runs on a virtual clock: deterministic and instant
            return SyntheticProvider(
                ConstantProfile(self.settings.synthetic_idle_w), clock=VirtualClock()
            )
        assert self._shared is not None
        return self._shared

    def provider_for(self, key: tuple[str, str, int], phase: str) -> PowerProvider:
        if self.settings.source == "replay":
            return ReplayProvider(self._trace_path(key, phase))
        assert self._shared is not None
        return self._shared

    def _trace_path(self, key: tuple[str, str, int] | None, phase: str) -> Path:
        root = self.settings.traces_dir
        if root is None:
            raise ValidationError(["energy.traces_dir: required for replay"])
        candidates = []
        if phase == "idle":
            candidates.append(root / self.settings.idle_trace)
        else:
            if key is not None:
                codec_id, seq_name, qp = key
                candidates.append(root / f"{codec_id}_{seq_name}_qp{qp}_{phase}.csv")
            candidates.append(root / f"{phase}.csv")
        candidates.append(root / "default.csv")
        for c in candidates:
            if c.exists():
                return c
        raise ValidationError([f"no replay trace found; tried {[str(c) for c in candidates]}"])


def capture_idle_baseline(config: ExperimentConfig, duration_s: float | None = None) -> IdleBaseline:
    """Measure the idle baseline and store it keyed by host fingerprint."""
    rig = EnergyRig(config)
    duration = duration_s if duration_s is not None else config.energy.idle_duration_s
    baseline = measure_idle(
        rig.idle_provider(),
        duration_s=duration,
        interval_ms=rig.interval_ms,
        min_duration_s=config.energy.baseline_min_s,
        host_fingerprint=rig.fingerprint(),
    )
    save_baseline(config.workdir / BASELINE_DIR, baseline)
    return baseline


def _policies(config: ExperimentConfig) -> tuple[ConvergencePolicy, ConvergencePolicy]:
    c = config.convergence
    encode = ConvergencePolicy(
        min_runs=c.min_runs,
        max_runs=c.max_runs_encode,
        rel_threshold=c.rel_threshold,
        confidence=c.confidence,
    )
    decode = ConvergencePolicy(
        min_runs=c.min_runs,
        max_runs=c.max_runs_decode,
        rel_threshold=c.rel_threshold,
        confidence=c.confidence,
    )
    return encode, decode


@dataclass
class _Cell:
    codec: CodecSpec
    seq: SequenceMeta
    qp: int


def _measure_cell(
    config: ExperimentConfig,
    rig: EnergyRig,
    baseline: IdleBaseline,
    cell: _Cell,
    codec_version: str,
    fingerprint: str,
) -> RunRecord:
    codec, seq, qp = cell.codec, cell.seq, cell.qp
    key = (codec.id, seq.name, qp)
    workdir = config.workdir
    log_dir = workdir / "logs"
    enc_policy, dec_policy = _policies(config)
    started = time.time()

    session_dir = workdir / "sessions"
    enc_result, enc_stat = run_encode(
        codec, seq, qp,
        rig.provider_for(key, "encode"), baseline, enc_policy,
        workdir, interval_ms=rig.interval_ms, log_dir=log_dir, session_dir=session_dir,
    )
    decoded, dec_stat = run_decode(
        codec, enc_result.bitstream_path, seq, qp,
        rig.provider_for(key, "decode"), baseline, dec_policy,
        workdir, interval_ms=rig.interval_ms,
        inner_loops=config.convergence.decode_inner_loops, log_dir=log_dir,
        session_dir=session_dir,
    )
    try:
        score = psnr_sequence(seq.path, decoded, seq, mode=config.psnr_mode)
        vmaf_value = None
        if config.vmaf is not None:
            try:
                vmaf_value = vmaf_score(seq.path, decoded, seq, tool=config.vmaf).mean
            except ToolMissing:
                vmaf_value = None
    finally:
        decoded.unlink(missing_ok=True)

    return RunRecord(
        codec_id=codec.id,
        sequence_name=seq.name,
        class_label=seq.class_label,
        qp=qp,
        bitrate_kbps=enc_result.bitrate_kbps,
        psnr_yuv=score.psnr_yuv,
        psnr_y=score.psnr_y,
        psnr_u=score.psnr_u,
        psnr_v=score.psnr_v,
        vmaf=vmaf_value,
        enc_energy=EnergySummary.from_stat(enc_stat),
        dec_energy=EnergySummary.from_stat(dec_stat),
        enc_wall_s=enc_result.encode_wall_s,
        dec_wall_s=sum(m.duration_s for m in dec_stat.per_run) / dec_stat.n_runs,
        codec_version=codec_version,
        host_fingerprint=fingerprint,
        started_at=started,
    )


def run_campaign(config: ExperimentConfig, resume: bool = False) -> list[RunRecord]:
    """Execute the full measurement campaign described by the config.

    Requires a fresh idle baseline for this host (capture one with
    ``measure-idle``). Existing records abort the campaign unless
    ``resume`` is set, in which case completed keys are skipped.
    """
    workdir = config.workdir
    workdir.mkdir(parents=True, exist_ok=True)
    rig = EnergyRig(config)
    fingerprint = rig.fingerprint()

    baseline = load_baseline(workdir / BASELINE_DIR, fingerprint)
    if baseline is None:
        raise StaleBaseline("no idle baseline for this host; run measure-idle first")
    ensure_baseline_fresh(baseline, fingerprint, config.energy.baseline_max_age_s)

    done = {r.key() for r in load_records(workdir)}
    if done and not resume:
        raise ValidationError(
            [f"{len(done)} records already present in {workdir}; rerun with resume or clean up"]
        )

    with MeasurementLock(workdir / LOCK_FILE):
        for codec in config.codecs:
            version = probe_version(codec.encode_binary)
            for seq in config.sequences:
                for qp in config.qps_for(codec):
                    key = (codec.id, seq.name, qp)
                    if key in done:
                        continue
                    try:
                        record = _measure_cell(
                            config, rig, baseline, _Cell(codec, seq, qp), version, fingerprint
                        )
                    except Exception as exc:  # one bad cell must not end the campaign
                        record = RunRecord(
                            codec_id=codec.id,
                            sequence_name=seq.name,
                            class_label=seq.class_label,
                            qp=qp,
                            status="failed",
                            error=f"{type(exc).__name__}: {exc}",
                            codec_version=version,
                            host_fingerprint=fingerprint,
                            started_at=time.time(),
                        )
                    append_record(workdir, record)
                    done.add(key)
            if config.cooldown_s > 0:
                time.sleep(config.cooldown_s)
    return load_records(workdir)

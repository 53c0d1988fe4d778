"""Measurement protocol: idle baseline, net energy, converged sessions.

Net energy for a phase is the trapezoidal integral of sampled power over
the phase window minus the idle baseline's mean power integrated over the
same window. Idle power cannot be observed while the workload runs, so the
baseline is measured separately and assumed stationary.

Runs repeat until the 95% Student-t confidence interval of the per-run net
energies is tight relative to their mean, or a run cap is hit. Decoding,
being much shorter than encoding, supports an inner loop that repeats the
decoder back-to-back within one measurement and divides the energy by the
loop count.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from .errors import (
    InsufficientSamples,
    LockContention,
    StaleBaseline,
    TaskFailed,
    WorkloadActive,
)
from .power import PowerProvider, PowerTrace, Sampler, sample_session

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

DEFAULT_MIN_IDLE_S = 60.0
DEFAULT_BASELINE_MAX_AGE_S = 24 * 3600.0


def integrate_power(trace: PowerTrace) -> float:
    """Trapezoidal integral of total power over the trace, in joules."""
    if len(trace) < 2:
        raise InsufficientSamples("integration needs at least 2 samples")
    t = np.asarray(trace.times_ms(), dtype=np.float64) / 1000.0
    w = np.asarray(trace.totals_w(), dtype=np.float64)
    return float(_trapezoid(w, t))


# ---------------------------------------------------------------------------
# idle baseline


@dataclass(frozen=True)
class IdleBaseline:
    """Platform power at rest, subtracted from every gross measurement."""

    mean_w: float
    std_w: float
    duration_s: float
    trace_ref: str = ""
    captured_at: float = 0.0
    host_fingerprint: str = ""

    def __post_init__(self):
        if self.mean_w <= 0:
            raise ValueError("idle mean power must be positive")

    def to_json(self) -> dict:
        return {
            "mean_w": self.mean_w,
            "std_w": self.std_w,
            "duration_s": self.duration_s,
            "trace_ref": self.trace_ref,
            "captured_at": self.captured_at,
            "host_fingerprint": self.host_fingerprint,
        }

    @classmethod
    def from_json(cls, data: dict) -> "IdleBaseline":
        return cls(**data)


_workload_flag = threading.Event()


@contextlib.contextmanager
def workload_running():
    """Marks a measured workload as active for the duration of the block."""
    if _workload_flag.is_set():
        raise WorkloadActive("a measured workload is already running")
    _workload_flag.set()
    try:
        yield
    finally:
        _workload_flag.clear()


def measure_idle(
    provider: PowerProvider,
    duration_s: float,
    interval_ms: float = 100.0,
    min_duration_s: float = DEFAULT_MIN_IDLE_S,
    trace_ref: str = "",
    host_fingerprint: str = "",
) -> IdleBaseline:
    """Observe the platform at rest and summarize its power draw."""
    if _workload_flag.is_set():
        raise WorkloadActive("cannot measure idle while a workload is running")
    if duration_s < min_duration_s:
        raise InsufficientSamples(
            f"idle window of {duration_s:g} s is shorter than the {min_duration_s:g} s minimum"
        )
    trace = sample_session(provider, interval_ms, duration_ms=duration_s * 1000.0)
    watts = np.asarray([s.total_w for s in trace.interval_samples()], dtype=np.float64)
    return IdleBaseline(
        mean_w=float(watts.mean()),
        std_w=float(watts.std()),
        duration_s=trace.duration_s,
        trace_ref=trace_ref,
        captured_at=time.time(),
        host_fingerprint=host_fingerprint,
    )


def ensure_baseline_fresh(
    baseline: IdleBaseline,
    host_fingerprint: str,
    max_age_s: float = DEFAULT_BASELINE_MAX_AGE_S,
    now: float | None = None,
) -> None:
    now = time.time() if now is None else now
    age = now - baseline.captured_at
    if age > max_age_s:
        raise StaleBaseline(f"baseline is {age / 3600.0:.1f} h old (limit {max_age_s / 3600.0:.1f} h)")
    if baseline.host_fingerprint and baseline.host_fingerprint != host_fingerprint:
        raise StaleBaseline("baseline was captured on a different host")


def save_baseline(store_dir: Path | str, baseline: IdleBaseline) -> Path:
    store_dir = Path(store_dir)
    store_dir.mkdir(parents=True, exist_ok=True)
    path = store_dir / f"{_fingerprint_key(baseline.host_fingerprint)}.json"
    path.write_text(json.dumps(baseline.to_json(), indent=2, sort_keys=True) + "\n")
    return path


def load_baseline(store_dir: Path | str, host_fingerprint: str) -> IdleBaseline | None:
    path = Path(store_dir) / f"{_fingerprint_key(host_fingerprint)}.json"
    if not path.exists():
        return None
    return IdleBaseline.from_json(json.loads(path.read_text()))


def _fingerprint_key(fingerprint: str) -> str:
    return hashlib.sha256(fingerprint.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# net energy


@dataclass(frozen=True)
class EnergyMeasurement:
    """Net joules of one encode/decode run after idle subtraction."""

    gross_j: float
    idle_j: float
    duration_s: float
    phase: str
    net_j: float = field(init=False)

    def __post_init__(self):
        if self.phase not in ("encode", "decode"):
            raise ValueError("phase must be 'encode' or 'decode'")
        if self.gross_j < 0 or self.duration_s <= 0:
            raise ValueError("gross_j must be >= 0 and duration_s > 0")
        object.__setattr__(self, "net_j", self.gross_j - self.idle_j)

    @property
    def flagged(self) -> bool:
        """Negative net energy indicates idle-baseline drift."""
        return self.net_j < 0

    def scaled(self, factor: float) -> "EnergyMeasurement":
        """Uniformly rescale (used to divide an inner-loop measurement)."""
        return EnergyMeasurement(
            gross_j=self.gross_j * factor,
            idle_j=self.idle_j * factor,
            duration_s=self.duration_s * factor,
            phase=self.phase,
        )

    def to_json(self) -> dict:
        return {
            "gross_j": self.gross_j,
            "idle_j": self.idle_j,
            "net_j": self.net_j,
            "duration_s": self.duration_s,
            "phase": self.phase,
        }

    @classmethod
    def from_json(cls, data: dict) -> "EnergyMeasurement":
        return cls(
            gross_j=data["gross_j"],
            idle_j=data["idle_j"],
            duration_s=data["duration_s"],
            phase=data["phase"],
        )


def net_energy(
    trace: PowerTrace,
    baseline: IdleBaseline,
    phase: str,
    duration_s: float | None = None,
) -> EnergyMeasurement:
    """Gross trace energy minus the idle baseline over the same window."""
    gross = integrate_power(trace)
    if duration_s is None:
        duration_s = trace.duration_s
    return EnergyMeasurement(
        gross_j=gross,
        idle_j=baseline.mean_w * duration_s,
        duration_s=duration_s,
        phase=phase,
    )


# ---------------------------------------------------------------------------
# converged measurement sessions


@dataclass(frozen=True)
class ConvergencePolicy:
    """When to stop repeating a measurement."""

    min_runs: int = 3
    max_runs: int = 30
    rel_threshold: float = 0.05
    confidence: float = 0.95

    def __post_init__(self):
        if self.min_runs < 2:
            raise ValueError("min_runs must be >= 2")
        if self.max_runs < self.min_runs:
            raise ValueError("max_runs must be >= min_runs")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must be in (0, 1)")


@dataclass(frozen=True)
class ConvergedStat:
    """Summary of a repeated measurement."""

    mean: float
    ci_half_width: float
    n_runs: int
    per_run: tuple[EnergyMeasurement, ...]
    converged: bool

    def recompute_ci(self, confidence: float = 0.95) -> tuple[float, float]:
        """(mean, half-width) recomputed from per_run; must match stored."""
        nets = [m.net_j for m in self.per_run]
        return float(np.mean(nets)), t_ci_half_width(nets, confidence)


def t_ci_half_width(values, confidence: float = 0.95) -> float:
    """Half-width of the Student-t CI for the mean of ``values``."""
    n = len(values)
    if n < 2:
        return math.inf
    arr = np.asarray(values, dtype=np.float64)
    s = float(arr.std(ddof=1))
    if s == 0.0:
        return 0.0
    quantile = float(stats.t.ppf((1.0 + confidence) / 2.0, n - 1))
    return quantile * s / math.sqrt(n)


def measure_workload(
    task: Callable[[], object],
    provider: PowerProvider,
    baseline: IdleBaseline,
    phase: str,
    interval_ms: float = 100.0,
    inner_loops: int = 1,
) -> EnergyMeasurement:
    """Run one workload under power sampling and return its net energy.

    Real-time providers are sampled from a background thread while the
    task runs. Simulated providers (virtual clocks) are sampled over the
    run's window after the fact, which is equivalent because their
    counters are pure functions of time.
    """
    if inner_loops < 1:
        raise ValueError("inner_loops must be >= 1")
    with workload_running():
        if provider.realtime:
            sampler = Sampler(provider, interval_ms).start()
            try:
                for _ in range(inner_loops):
                    task()
            finally:
                trace = sampler.stop()
        else:
            provider.begin_run()
            t0 = provider.clock.now_ms()
            for _ in range(inner_loops):
                task()
            t1 = provider.clock.now_ms()
            start, window = provider.run_window_ms(t0, t1)
            provider.clock.seek(start)
            trace = sample_session(provider, interval_ms, duration_ms=window)
    meas = net_energy(trace, baseline, phase)
    if inner_loops > 1:
        meas = meas.scaled(1.0 / inner_loops)
    return meas


def run_converged(
    task: Callable[[], object],
    provider: PowerProvider,
    baseline: IdleBaseline,
    policy: ConvergencePolicy,
    phase: str = "encode",
    interval_ms: float = 100.0,
    inner_loops: int = 1,
    session_log: Path | str | None = None,
) -> ConvergedStat:
    """Repeat a measured workload until its confidence interval is tight.

    Stops at the first n >= policy.min_runs where the relative CI
    half-width is within policy.rel_threshold, or at policy.max_runs with
    ``converged=False``. Per-run measurements are appended to
    ``session_log`` as JSON lines when given.
    """
    runs: list[EnergyMeasurement] = []
    converged = False
    for _ in range(policy.max_runs):
        try:
            meas = measure_workload(task, provider, baseline, phase, interval_ms, inner_loops)
        except Exception as exc:
            raise TaskFailed(f"run {len(runs) + 1} failed: {exc}", runs=runs) from exc
        runs.append(meas)
        if session_log is not None:
            with open(session_log, "a") as fh:
                fh.write(json.dumps(meas.to_json(), sort_keys=True) + "\n")
        if len(runs) >= policy.min_runs:
            nets = [m.net_j for m in runs]
            mean = float(np.mean(nets))
            hw = t_ci_half_width(nets, policy.confidence)
            if mean != 0.0:
                rel = hw / abs(mean)
            else:
                rel = 0.0 if hw == 0.0 else math.inf
            if rel <= policy.rel_threshold:
                converged = True
                break
    nets = [m.net_j for m in runs]
    return ConvergedStat(
        mean=float(np.mean(nets)),
        ci_half_width=t_ci_half_width(nets, policy.confidence),
        n_runs=len(runs),
        per_run=tuple(runs),
        converged=converged,
    )


def load_session_log(path: Path | str) -> list[EnergyMeasurement]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(EnergyMeasurement.from_json(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# machine-wide measurement lock


class MeasurementLock:
    """Advisory lock file serializing measured workloads on a machine.

    Holding the lock does not enforce anything; it protects measurement
    validity, not memory safety. A lock left behind by a dead process is
    reclaimed.
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._held = False

    def acquire(self) -> "MeasurementLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        for attempt in (0, 1):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                if attempt == 0 and self._is_stale():
                    self.path.unlink(missing_ok=True)
                    continue
                raise LockContention(f"measurement lock held: {self.path}") from None
            with os.fdopen(fd, "w") as fh:
                fh.write(str(os.getpid()))
            self._held = True
            return self
        raise LockContention(f"measurement lock held: {self.path}")

    def _is_stale(self) -> bool:
        try:
            pid = int(self.path.read_text().strip())
        except (OSError, ValueError):
            return True
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return True
        except PermissionError:
            return False
        return False

    def release(self) -> None:
        if self._held:
            self.path.unlink(missing_ok=True)
            self._held = False

    def __enter__(self) -> "MeasurementLock":
        return self.acquire()

    def __exit__(self, *exc):
        self.release()

"""Power sampling from platform energy counters and test providers.

The platform backend reads the Linux powercap filesystem (RAPL counters
exposed as monotonically increasing microjoule files). Synthetic and
replay providers expose exactly the same counter interface, driven by a
virtual clock, so the whole measurement pipeline can run deterministically
in tests.

All providers hand out integer microjoule counter readings; wattages are
derived from counter deltas over the *measured* elapsed time at the edge
of the sampler, never accumulated in floating point.
"""

from __future__ import annotations

import csv
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import (
    DomainMismatch,
    InsufficientSamples,
    PermissionDenied,
    ProviderFailure,
    SessionActive,
)

DEFAULT_POWERCAP_ROOT = Path("/sys/class/powercap/intel-rapl")

#: Counter range assumed for simulated providers (no wrap in practice).
SIMULATED_RANGE_UJ = 2**60

MIN_INTERVAL_MS = 10.0


# ---------------------------------------------------------------------------
# clocks


class RealClock:
    """Monotonic wall clock; sleeping really sleeps."""

    realtime = True

    def __init__(self):
        self._origin = time.monotonic()

    def now_ms(self) -> float:
        return (time.monotonic() - self._origin) * 1000.0

    def sleep_ms(self, dt_ms: float) -> None:
        time.sleep(dt_ms / 1000.0)

    def seek(self, t_ms: float) -> None:
        raise RuntimeError("a real clock cannot seek")


class VirtualClock:
    """Manually advanced clock; sleeping advances time instantly."""

    realtime = False

    def __init__(self, start_ms: float = 0.0):
        self._now = float(start_ms)

    def now_ms(self) -> float:
        return self._now

    def sleep_ms(self, dt_ms: float) -> None:
        self._now += dt_ms

    def advance_s(self, dt_s: float) -> None:
        self._now += dt_s * 1000.0

    def seek(self, t_ms: float) -> None:
        self._now = float(t_ms)


# ---------------------------------------------------------------------------
# samples and traces


@dataclass(frozen=True)
class PowerSample:
    """One power observation: milliseconds since trace start, watts."""

    t_ms: float
    pkg_w: float
    dram_w: float = 0.0

    @property
    def total_w(self) -> float:
        return self.pkg_w + self.dram_w


@dataclass(frozen=True)
class PowerTrace:
    """Ordered power samples over one measurement window.

    Timestamps are strictly increasing and wattages non-negative and
    finite; both are enforced at construction. Traces produced by
    :func:`sample_session` carry ``metadata['bookends'] = True``: the first
    and last samples anchor the window edges (duplicating the first/last
    interval wattage) so that the trapezoidal integral of the trace equals
    the total counter delta of the session.
    """

    samples: tuple[PowerSample, ...]
    interval_ms: float = 100.0
    origin: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        prev = -math.inf
        for s in self.samples:
            if not (s.t_ms > prev):
                raise ValueError("trace timestamps must be strictly increasing")
            if not (math.isfinite(s.pkg_w) and math.isfinite(s.dram_w)):
                raise ValueError("trace wattages must be finite")
            if s.pkg_w < 0 or s.dram_w < 0:
                raise ValueError("trace wattages must be non-negative")
            prev = s.t_ms

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def span_ms(self) -> float:
        if len(self.samples) < 2:
            return 0.0
        return self.samples[-1].t_ms - self.samples[0].t_ms

    @property
    def duration_s(self) -> float:
        return self.span_ms / 1000.0

    def interval_samples(self) -> tuple[PowerSample, ...]:
        """Samples excluding the synthetic window-edge anchors, if any."""
        if self.metadata.get("bookends") and len(self.samples) >= 3:
            return self.samples[1:-1]
        return self.samples

    def times_ms(self) -> list[float]:
        return [s.t_ms for s in self.samples]

    def totals_w(self) -> list[float]:
        return [s.total_w for s in self.samples]

    def to_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_ms", "pkg_w", "dram_w"])
            for s in self.samples:
                writer.writerow([repr(s.t_ms), repr(s.pkg_w), repr(s.dram_w)])

    @classmethod
    def from_csv(cls, path: Path | str, interval_ms: float = 100.0) -> "PowerTrace":
        samples = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or set(reader.fieldnames) < {"t_ms", "pkg_w", "dram_w"}:
                raise ValueError(f"{path}: expected header t_ms,pkg_w,dram_w")
            for row in reader:
                samples.append(
                    PowerSample(float(row["t_ms"]), float(row["pkg_w"]), float(row["dram_w"]))
                )
        return cls(tuple(samples), interval_ms=interval_ms, metadata={"source": str(path)})


@dataclass(frozen=True)
class CounterReading:
    """Snapshot of one monotone microjoule counter."""

    energy_uj: int
    max_range_uj: int
    domain: str
    t_ms: float

    def __post_init__(self):
        if not 0 <= self.energy_uj <= self.max_range_uj:
            raise ValueError("counter value outside [0, max_range_uj]")


@dataclass(frozen=True)
class DomainInfo:
    """One discoverable energy domain."""

    kind: str  # package | dram | psys
    name: str
    max_range_uj: int
    path: Path | None = None


def counter_delta(prev: CounterReading, nxt: CounterReading) -> int:
    """Microjoules consumed between two readings of the same counter.

    Corrects for at most one counter wraparound; the sampling interval is
    assumed short enough that a double wrap cannot occur.
    """
    if prev.domain != nxt.domain:
        raise DomainMismatch(f"cannot diff {prev.domain} against {nxt.domain}")
    if not prev.t_ms < nxt.t_ms:
        raise ValueError("readings must be ordered in time")
    if nxt.energy_uj >= prev.energy_uj:
        return nxt.energy_uj - prev.energy_uj
    return (prev.max_range_uj - prev.energy_uj) + nxt.energy_uj


def _classify_domain(name: str) -> str | None:
    low = name.strip().lower()
    if low.startswith("package"):
        return "package"
    if low == "dram":
        return "dram"
    if low.startswith("psys"):
        return "psys"
    return None


def list_domains(root: Path | str | None = None) -> list[DomainInfo]:
    """Discover package/DRAM/psys energy domains under a powercap root.

    Returns an empty list when the platform does not expose the powercap
    layout at all. Raises :class:`PermissionDenied` when counters exist
    but cannot be read (typically fixed by rerunning with privileges).
    """
    root = Path(root) if root is not None else DEFAULT_POWERCAP_ROOT
    if not root.is_dir():
        return []
    found = []
    for energy_file in sorted(root.glob("**/energy_uj")):
        domain_dir = energy_file.parent
        name_file = domain_dir / "name"
        try:
            name = name_file.read_text().strip() if name_file.exists() else domain_dir.name
        except PermissionError as exc:
            raise PermissionDenied(f"{name_file}: {exc}; rerun with privileges") from exc
        kind = _classify_domain(name)
        if kind is None:
            continue
        try:
            energy_file.read_text()
        except PermissionError as exc:
            raise PermissionDenied(f"{energy_file}: {exc}; rerun with privileges") from exc
        max_file = domain_dir / "max_energy_range_uj"
        max_range = int(max_file.read_text().strip()) if max_file.exists() else SIMULATED_RANGE_UJ
        found.append(DomainInfo(kind=kind, name=name, max_range_uj=max_range, path=domain_dir))
    return found


# ---------------------------------------------------------------------------
# power profiles (synthetic / replay sources)


class PowerProfile:
    """Power-over-time curve with an exact cumulative energy integral."""

    def power_w(self, t_s: float) -> float:
        raise NotImplementedError

    def energy_j(self, t_s: float) -> float:
        raise NotImplementedError


class ConstantProfile(PowerProfile):
    def __init__(self, watts: float):
        self.watts = float(watts)

    def power_w(self, t_s: float) -> float:
        return self.watts

    def energy_j(self, t_s: float) -> float:
        return self.watts * t_s


class RampProfile(PowerProfile):
    """Linear ramp from w0 to w1 over duration_s, holding w1 afterwards."""

    def __init__(self, w0: float, w1: float, duration_s: float):
        if duration_s <= 0:
            raise ValueError("ramp duration must be positive")
        self.w0, self.w1, self.duration_s = float(w0), float(w1), float(duration_s)

    def power_w(self, t_s: float) -> float:
        if t_s >= self.duration_s:
            return self.w1
        return self.w0 + (self.w1 - self.w0) * t_s / self.duration_s

    def energy_j(self, t_s: float) -> float:
        t = min(t_s, self.duration_s)
        e = self.w0 * t + 0.5 * (self.w1 - self.w0) * t * t / self.duration_s
        if t_s > self.duration_s:
            e += self.w1 * (t_s - self.duration_s)
        return e


class StepProfile(PowerProfile):
    """Cyclic sequence of (duration_s, watts) steps."""

    def __init__(self, steps: Sequence[tuple[float, float]]):
        if not steps:
            raise ValueError("at least one step required")
        self.steps = [(float(d), float(w)) for d, w in steps]
        self.period_s = sum(d for d, _ in self.steps)
        self._cycle_j = sum(d * w for d, w in self.steps)

    def power_w(self, t_s: float) -> float:
        t = math.fmod(t_s, self.period_s)
        for d, w in self.steps:
            if t < d:
                return w
            t -= d
        return self.steps[-1][1]

    def energy_j(self, t_s: float) -> float:
        cycles, rem = divmod(t_s, self.period_s)
        e = cycles * self._cycle_j
        for d, w in self.steps:
            if rem <= 0:
                break
            dt = min(rem, d)
            e += dt * w
            rem -= dt
        return e


class TraceProfile(PowerProfile):
    """Piecewise-linear power curve through trace points, last value held."""

    def __init__(self, t_ms: Sequence[float], watts: Sequence[float]):
        if len(t_ms) != len(watts) or len(t_ms) < 2:
            raise ValueError("trace profile needs >= 2 (t, w) pairs")
        self.t_s = [t / 1000.0 for t in t_ms]
        self.w = [float(w) for w in watts]
        # prefix integrals at the knots, exact for the piecewise-linear curve
        self._prefix_j = [0.0]
        for i in range(1, len(self.t_s)):
            seg = (self.t_s[i] - self.t_s[i - 1]) * (self.w[i] + self.w[i - 1]) / 2.0
            self._prefix_j.append(self._prefix_j[-1] + seg)

    @property
    def span_s(self) -> float:
        return self.t_s[-1] - self.t_s[0]

    def _locate(self, t_s: float) -> int:
        lo, hi = 0, len(self.t_s) - 1
        while lo + 1 < hi:
            mid = (lo + hi) // 2
            if self.t_s[mid] <= t_s:
                lo = mid
            else:
                hi = mid
        return lo

    def power_w(self, t_s: float) -> float:
        if t_s <= self.t_s[0]:
            return self.w[0]
        if t_s >= self.t_s[-1]:
            return self.w[-1]
        i = self._locate(t_s)
        frac = (t_s - self.t_s[i]) / (self.t_s[i + 1] - self.t_s[i])
        return self.w[i] + frac * (self.w[i + 1] - self.w[i])

    def energy_j(self, t_s: float) -> float:
        if t_s <= self.t_s[0]:
            return self.w[0] * (t_s - self.t_s[0])
        if t_s >= self.t_s[-1]:
            return self._prefix_j[-1] + self.w[-1] * (t_s - self.t_s[-1])
        i = self._locate(t_s)
        dt = t_s - self.t_s[i]
        w_t = self.power_w(t_s)
        return self._prefix_j[i] + dt * (self.w[i] + w_t) / 2.0


# ---------------------------------------------------------------------------
# providers


class PowerProvider:
    """Source of timestamped counter readings for the sampler."""

    clock: RealClock | VirtualClock

    @property
    def realtime(self) -> bool:
        return self.clock.realtime

    def domains(self) -> list[DomainInfo]:
        raise NotImplementedError

    def read(self) -> list[CounterReading]:
        """One reading per domain, all stamped with the same clock time."""
        raise NotImplementedError

    def begin_run(self) -> None:
        """Prepare for a fresh measurement run (replay rewinds its clock)."""

    def run_window_ms(self, t0_ms: float, t1_ms: float) -> tuple[float, float]:
        """(start, duration) of the sampling window for a run over [t0, t1]."""
        return t0_ms, t1_ms - t0_ms


class PowercapProvider(PowerProvider):
    """Reads the powercap filesystem counters (package + DRAM by default).

    psys domains are discoverable through :func:`list_domains` but are not
    included in totals.
    """

    def __init__(self, root: Path | str | None = None, kinds: Iterable[str] = ("package", "dram")):
        self.root = Path(root) if root is not None else DEFAULT_POWERCAP_ROOT
        self.clock = RealClock()
        self._domains = [d for d in list_domains(self.root) if d.kind in set(kinds)]
        if not self._domains:
            raise ProviderFailure(f"no usable energy domains under {self.root}")

    def domains(self) -> list[DomainInfo]:
        return list(self._domains)

    def read(self) -> list[CounterReading]:
        t = self.clock.now_ms()
        out = []
        for dom in self._domains:
            try:
                raw = (dom.path / "energy_uj").read_text()
            except PermissionError as exc:
                raise PermissionDenied(f"{dom.path}: {exc}; rerun with privileges") from exc
            out.append(
                CounterReading(
                    energy_uj=int(raw.strip()),
                    max_range_uj=dom.max_range_uj,
                    domain=dom.kind,
                    t_ms=t,
                )
            )
        return out


class _SimulatedProvider(PowerProvider):
    """Shared machinery for providers whose counters are functions of time."""

    def __init__(
        self,
        pkg: PowerProfile,
        dram: PowerProfile | None = None,
        clock: RealClock | VirtualClock | None = None,
        max_range_uj: int = SIMULATED_RANGE_UJ,
    ):
        self.pkg = pkg
        self.dram = dram
        self.clock = clock if clock is not None else VirtualClock()
        self.max_range_uj = int(max_range_uj)
        self.fail_after_ms: float | None = None  # test hook

    def domains(self) -> list[DomainInfo]:
        doms = [DomainInfo("package", "package-0", self.max_range_uj)]
        if self.dram is not None:
            doms.append(DomainInfo("dram", "dram", self.max_range_uj))
        return doms

    def _counter(self, profile: PowerProfile, t_ms: float) -> int:
        total_uj = int(round(profile.energy_j(t_ms / 1000.0) * 1e6))
        return total_uj % self.max_range_uj

    def read(self) -> list[CounterReading]:
        t = self.clock.now_ms()
        if self.fail_after_ms is not None and t > self.fail_after_ms:
            raise OSError("simulated counter failure")
        out = [CounterReading(self._counter(self.pkg, t), self.max_range_uj, "package", t)]
        if self.dram is not None:
            out.append(CounterReading(self._counter(self.dram, t), self.max_range_uj, "dram", t))
        return out


class SyntheticProvider(_SimulatedProvider):
    """Generates counters from constant/ramp/step power profiles."""

    def __init__(self, pkg, dram=None, clock=None, max_range_uj: int = SIMULATED_RANGE_UJ):
        if isinstance(pkg, (int, float)):
            pkg = ConstantProfile(pkg)
        if isinstance(dram, (int, float)):
            dram = ConstantProfile(dram)
        super().__init__(pkg, dram, clock, max_range_uj)


class ReplayProvider(_SimulatedProvider):
    """Replays a recorded power trace as counter readings.

    The trace's own span defines the natural measurement window of a run;
    beyond the end of the trace the last power level is held.
    """

    def __init__(self, trace: PowerTrace | Path | str, clock=None, max_range_uj: int = SIMULATED_RANGE_UJ):
        if not isinstance(trace, PowerTrace):
            trace = PowerTrace.from_csv(trace)
        if len(trace) < 2:
            raise InsufficientSamples("replay source needs at least 2 samples")
        t = trace.times_ms()
        pkg = TraceProfile(t, [s.pkg_w for s in trace.samples])
        dram = TraceProfile(t, [s.dram_w for s in trace.samples])
        super().__init__(pkg, dram, clock or VirtualClock(), max_range_uj)
        self.trace = trace
        self.span_ms = trace.span_ms

    def begin_run(self) -> None:
        self.clock.seek(self.trace.samples[0].t_ms)

    def run_window_ms(self, t0_ms: float, t1_ms: float) -> tuple[float, float]:
        # the replayed recording, not the workload's wall time, defines
        # the window: replay is used where timing must be deterministic
        return self.trace.samples[0].t_ms, self.span_ms


# ---------------------------------------------------------------------------
# the sampler

_session_guard = threading.Lock()


def _stop_predicate(stop) -> Callable[[], bool]:
    if stop is None:
        return lambda: False
    if isinstance(stop, threading.Event):
        return stop.is_set
    if callable(stop):
        return stop
    raise TypeError("stop must be an Event, a callable, or None")


def sample_session(
    provider: PowerProvider,
    interval_ms: float = 100.0,
    stop=None,
    duration_ms: float | None = None,
    on_start: Callable[[], None] | None = None,
) -> PowerTrace:
    """Sample a provider until a stop signal (or for a fixed duration).

    Each completed interval yields one sample at the interval midpoint
    whose wattage is the integer counter delta divided by the measured
    elapsed time. Anchor samples at the window edges complete the trace so
    its trapezoidal integral reproduces the session's total counter delta.
    One session may be active per process at a time.
    """
    if interval_ms < MIN_INTERVAL_MS:
        raise ValueError(f"interval_ms must be >= {MIN_INTERVAL_MS}")
    if duration_ms is None and stop is None:
        raise ValueError("a stop signal or a duration is required")
    stopped = _stop_predicate(stop)

    if not _session_guard.acquire(blocking=False):
        raise SessionActive("another sampling session is active in this process")
    try:
        wall_origin = time.time()
        prev = provider.read()
        if on_start is not None:
            on_start()
        t_start = prev[0].t_ms
        kinds = [r.domain for r in prev]
        has_dram = "dram" in kinds

        mids: list[tuple[float, float, float]] = []
        gaps: list[int] = []
        while True:
            now = provider.clock.now_ms()
            if stopped():
                break
            if duration_ms is not None and now - t_start >= duration_ms - 1e-6:
                break
            provider.clock.sleep_ms(interval_ms)
            try:
                cur = provider.read()
            except Exception as exc:
                partial = _build_trace(mids, prev[0].t_ms - t_start, interval_ms, wall_origin, gaps, has_dram)
                raise ProviderFailure(f"provider failed mid-session: {exc}", partial_trace=partial) from exc
            elapsed = cur[0].t_ms - prev[0].t_ms
            if elapsed <= 0:
                continue
            watts = {"package": 0.0, "dram": 0.0}
            for p, c in zip(prev, cur):
                delta_uj = counter_delta(p, c)
                watts[p.domain] += delta_uj / elapsed / 1000.0
            mid = (prev[0].t_ms + cur[0].t_ms) / 2.0 - t_start
            if elapsed > 5.0 * interval_ms:
                gaps.append(len(mids))
            mids.append((mid, watts["package"], watts["dram"]))
            prev = cur

        if not mids:
            raise InsufficientSamples("stop signalled before any complete interval")
        return _build_trace(mids, prev[0].t_ms - t_start, interval_ms, wall_origin, gaps, has_dram)
    finally:
        _session_guard.release()


def _build_trace(mids, end_ms, interval_ms, wall_origin, gaps, has_dram) -> PowerTrace | None:
    if not mids:
        return None
    first = PowerSample(0.0, mids[0][1], mids[0][2])
    last = PowerSample(end_ms, mids[-1][1], mids[-1][2])
    samples = [first] + [PowerSample(t, p, d) for t, p, d in mids] + [last]
    metadata = {"bookends": True, "gaps": list(gaps)}
    if not has_dram:
        metadata["package_only"] = True
    return PowerTrace(tuple(samples), interval_ms=interval_ms, origin=wall_origin, metadata=metadata)


class Sampler:
    """Runs a sampling session in a background thread.

    ``start()`` blocks until the session's baseline counter read has
    happened, so the trace is guaranteed to span a workload launched
    afterwards. Usage:
    ``s = Sampler(provider); s.start(); ...workload...; trace = s.stop()``.
    """

    def __init__(self, provider: PowerProvider, interval_ms: float = 100.0):
        self.provider = provider
        self.interval_ms = interval_ms
        self._stop = threading.Event()
        self._started = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._trace: PowerTrace | None = None
        self._error: BaseException | None = None

    def _run(self):
        try:
            self._trace = sample_session(
                self.provider, self.interval_ms, stop=self._stop, on_start=self._started.set
            )
        except BaseException as exc:  # surfaced in stop()
            self._error = exc
        finally:
            self._started.set()

    def start(self) -> "Sampler":
        self._thread.start()
        self._started.wait(timeout=10.0)
        return self

    def stop(self) -> PowerTrace:
        self._stop.set()
        self._thread.join()
        if self._error is not None:
            raise self._error
        assert self._trace is not None
        return self._trace

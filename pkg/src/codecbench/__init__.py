"""Energy, bitrate and quality benchmarking for software video codecs."""

from .curves import BDResult, CurveFit, CurvePoint, bd_quality, ebr, fit_re_line
from .energy import (
    ConvergedStat,
    ConvergencePolicy,
    EnergyMeasurement,
    IdleBaseline,
    integrate_power,
    measure_idle,
    net_energy,
    run_converged,
)
from .harness import CodecSpec, EncodeResult, SequenceMeta, compute_bitrate, map_qp, render_command
from .power import (
    CounterReading,
    PowercapProvider,
    PowerSample,
    PowerTrace,
    ReplayProvider,
    SyntheticProvider,
    counter_delta,
    list_domains,
    sample_session,
)
from .quality import QualityScore, SiTi, compute_siti, psnr_combined, psnr_plane, read_yuv, vmaf_score

__version__ = "0.1.0"

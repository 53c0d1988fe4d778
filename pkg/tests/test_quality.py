"""PSNR, YUV reading, SI/TI and the external VMAF client."""

import json
import math
import stat

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codecbench.errors import (
    DimensionMismatch,
    ParseError,
    SizeMismatch,
    TooFewFrames,
    ToolFailure,
    ToolMissing,
)
from codecbench.harness import SequenceMeta
from codecbench.quality import (
    FramePlanes,
    VmafResult,
    VmafTool,
    compute_siti,
    psnr_combined,
    psnr_plane,
    psnr_sequence,
    read_yuv,
    sobel_magnitude,
    vmaf_score,
)

from conftest import make_sequence, mix_bytes, write_yuv


def d_meta(tmp_path, frames=3, bit_depth=8, name="Clip"):
    return SequenceMeta(
        name=name,
        class_label="D",
        width=416,
        height=240,
        frame_count=frames,
        fps=50.0,
        bit_depth=bit_depth,
        path=tmp_path / f"{name}.yuv",
    )


class TestReadYuv:
    def test_frame_count_from_size(self, tmp_path):
        meta = d_meta(tmp_path, frames=3)
        assert meta.frame_bytes == 149_760
        write_yuv(meta.path, meta)
        frames = list(read_yuv(meta.path, meta))
        assert len(frames) == 3
        assert frames[0].y.shape == (240, 416)
        assert frames[0].u.shape == (120, 208)
        assert frames[0].v.shape == (120, 208)

    def test_partial_trailing_frame(self, tmp_path):
        meta = d_meta(tmp_path, frames=2)
        meta.path.write_bytes(bytes(meta.frame_bytes * 2 + 100))
        with pytest.raises(SizeMismatch):
            list(read_yuv(meta.path, meta))

    def test_ten_bit_frame_size(self):
        meta = SequenceMeta(
            name="Big", class_label="B", width=1920, height=1080,
            frame_count=1, fps=60.0, bit_depth=10, path="unused.yuv",
        )
        assert meta.frame_bytes == 6_220_800
        assert meta.pixel_format == "yuv420p10le"

    def test_ten_bit_words_little_endian(self, tmp_path):
        meta = SequenceMeta(
            name="Tiny", class_label="D", width=416, height=240,
            frame_count=1, fps=50.0, bit_depth=10, path=tmp_path / "t.yuv",
        )
        words = (mix_bytes(meta.frame_bytes // 2, 9).astype("<u2") << 2).astype("<u2")
        meta.path.write_bytes(words.tobytes())
        (frame,) = read_yuv(meta.path, meta)
        assert frame.y.dtype == np.dtype("<u2") or frame.y.dtype == np.dtype("uint16")
        assert int(frame.y.max()) <= 1023


class TestPsnrPlane:
    def test_identical_hits_cap(self):
        plane = mix_bytes(64, 0).reshape(8, 8)
        assert psnr_plane(plane, plane.copy(), 8) == 100.0

    def test_black_vs_white_is_zero(self):
        ref = np.zeros((8, 8), dtype=np.uint8)
        dist = np.full((8, 8), 255, dtype=np.uint8)
        assert psnr_plane(ref, dist, 8) == 0.0

    def test_random_pair_matches_bruteforce(self):
        ref = mix_bytes(64, 5).reshape(8, 8)
        dist = mix_bytes(64, 6).reshape(8, 8)
        total = 0.0
        for i in range(8):
            for j in range(8):
                diff = float(ref[i, j]) - float(dist[i, j])
                total += diff * diff
        expected = 10.0 * math.log10(255.0**2 / (total / 64.0))
        assert psnr_plane(ref, dist, 8) == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("c", [1, 2, 4])
    def test_shift_property(self, c):
        ref = (mix_bytes(256, 11) % 200).reshape(16, 16)  # headroom, no clipping
        dist = (ref + c).astype(np.uint8)
        expected = 10.0 * math.log10(255.0**2 / float(c) ** 2)
        assert psnr_plane(ref, dist, 8) == pytest.approx(expected, abs=1e-12)

    def test_symmetry(self):
        a = mix_bytes(100, 1).reshape(10, 10)
        b = mix_bytes(100, 2).reshape(10, 10)
        assert psnr_plane(a, b, 8) == psnr_plane(b, a, 8)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            psnr_plane(np.zeros((4, 4)), np.zeros((4, 8)), 8)

    def test_ten_bit_peak(self):
        ref = np.zeros((4, 4), dtype=np.uint16)
        dist = np.full((4, 4), 1023, dtype=np.uint16)
        assert psnr_plane(ref, dist, 10) == pytest.approx(0.0, abs=1e-12)


class TestPsnrCombined:
    def test_mean(self):
        assert psnr_combined(40.0, 42.0, 44.0) == pytest.approx(42.0)

    def test_equal_inputs(self):
        assert psnr_combined(40.0, 40.0, 40.0) == 40.0

    def test_weighted_mode(self):
        assert psnr_combined(40.0, 42.0, 44.0, mode="611") == pytest.approx(40.75)

    @given(st.floats(min_value=1.0, max_value=99.0))
    @settings(max_examples=25, deadline=None)
    def test_identity_on_equal_planes(self, x):
        assert psnr_combined(x, x, x) == pytest.approx(x, rel=1e-12)


class TestPsnrSequence:
    def test_identical_files(self, tmp_path):
        meta = make_sequence(tmp_path, frames=2)
        score = psnr_sequence(meta.path, meta.path, meta)
        assert score.psnr_yuv == 100.0

    def test_quantized_copy_is_finite_and_below_cap(self, tmp_path):
        meta = make_sequence(tmp_path, frames=2)
        raw = np.frombuffer(meta.path.read_bytes(), dtype=np.uint8)
        dist_path = tmp_path / "dist.yuv"
        dist_path.write_bytes(((raw >> 3) << 3).tobytes())
        score = psnr_sequence(meta.path, dist_path, meta)
        assert 20.0 < score.psnr_yuv < 100.0
        assert score.psnr_y != score.psnr_u or score.psnr_y != score.psnr_v

    def test_frame_count_mismatch(self, tmp_path):
        meta = make_sequence(tmp_path, frames=3)
        short_path = tmp_path / "short.yuv"
        short_path.write_bytes(meta.path.read_bytes()[: 2 * meta.frame_bytes])
        with pytest.raises(SizeMismatch):
            psnr_sequence(meta.path, short_path, meta)


FAKE_VMAF_OK = """\
#!/usr/bin/env python3
import json, sys
out = sys.argv[sys.argv.index("--output") + 1]
payload = {
    "version": "fake-2.3.1",
    "params": {"model": "fake_model_v1"},
    "frames": [
        {"frameNum": 0, "metrics": {"vmaf": 97.5}},
        {"frameNum": 1, "metrics": {"vmaf": 98.5}},
    ],
    "pooled_metrics": {"vmaf": {"mean": 98.0}},
}
with open(out, "w") as fh:
    json.dump(payload, fh)
"""

FAKE_VMAF_BAD_JSON = """\
#!/usr/bin/env python3
import sys
out = sys.argv[sys.argv.index("--output") + 1]
with open(out, "w") as fh:
    fh.write("{not json")
"""

FAKE_VMAF_CRASH = """\
#!/usr/bin/env python3
import sys
sys.stderr.write("model load failed\\n")
sys.exit(3)
"""


def fake_tool(tmp_path, body, name="fakevmaf"):
    script = tmp_path / name
    script.write_text(body)
    script.chmod(script.stat().st_mode | stat.S_IEXEC)
    return VmafTool(binary=str(script))


class TestVmaf:
    def test_parses_pooled_and_frames(self, tmp_path):
        meta = make_sequence(tmp_path, frames=2)
        result = vmaf_score(meta.path, meta.path, meta, tool=fake_tool(tmp_path, FAKE_VMAF_OK))
        assert result.mean == 98.0
        assert result.per_frame == (97.5, 98.5)
        assert result.tool_version == "fake-2.3.1"
        assert result.model == "fake_model_v1"

    def test_tool_missing(self, tmp_path):
        meta = make_sequence(tmp_path, frames=2)
        with pytest.raises(ToolMissing):
            vmaf_score(meta.path, meta.path, meta, tool=VmafTool(binary="/no/such/vmaf"))

    def test_tool_failure_attaches_stderr(self, tmp_path):
        meta = make_sequence(tmp_path, frames=2)
        with pytest.raises(ToolFailure) as info:
            vmaf_score(meta.path, meta.path, meta, tool=fake_tool(tmp_path, FAKE_VMAF_CRASH))
        assert "model load failed" in info.value.stderr

    def test_malformed_json(self, tmp_path):
        meta = make_sequence(tmp_path, frames=2)
        with pytest.raises(ParseError):
            vmaf_score(meta.path, meta.path, meta, tool=fake_tool(tmp_path, FAKE_VMAF_BAD_JSON))

    def test_result_round_trip(self):
        result = VmafResult(mean=91.25, per_frame=(90.0, 92.5), tool_version="v", model="m")
        assert VmafResult.from_json(json.loads(json.dumps(result.to_json()))) == result


def frame_from_luma(luma: np.ndarray, bit_depth: int = 8) -> FramePlanes:
    h, w = luma.shape
    chroma = np.full((h // 2, w // 2), 128, dtype=luma.dtype)
    return FramePlanes(y=luma, u=chroma, v=chroma, bit_depth=bit_depth, width=w, height=h)


class TestSiTi:
    def test_constant_video(self):
        gray = np.full((16, 16), 77, dtype=np.uint8)
        result = compute_siti([frame_from_luma(gray)] * 3)
        assert result.si == 0.0
        assert result.ti == 0.0

    def test_static_complex_video(self):
        luma = mix_bytes(256, 21).reshape(16, 16)
        result = compute_siti([frame_from_luma(luma)] * 4)
        assert result.ti == 0.0
        assert result.si > 0.0

    def test_step_edge_matches_direct_convolution(self):
        luma = np.zeros((16, 16), dtype=np.uint8)
        luma[:, 8:] = 200
        impl = compute_siti([frame_from_luma(luma)] * 2).si

        kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
        ky = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=np.float64)
        mags = []
        a = luma.astype(np.float64)
        for i in range(1, 15):
            for j in range(1, 15):
                window = a[i - 1 : i + 2, j - 1 : j + 2]
                gx = float((window * kx).sum())
                gy = float((window * ky).sum())
                mags.append(math.hypot(gx, gy))
        mean = sum(mags) / len(mags)
        var = sum((m - mean) ** 2 for m in mags) / len(mags)
        assert impl == pytest.approx(math.sqrt(var), abs=1e-12)

    def test_motion_registers_in_ti(self):
        a = mix_bytes(256, 30).reshape(16, 16)
        b = mix_bytes(256, 31).reshape(16, 16)
        result = compute_siti([frame_from_luma(a), frame_from_luma(b)])
        assert result.ti > 0.0

    def test_ti_zero_iff_identical_frames(self):
        frames = [frame_from_luma(mix_bytes(256, 40).reshape(16, 16)) for _ in range(3)]
        assert compute_siti(frames).ti == 0.0

    def test_too_few_frames(self):
        with pytest.raises(TooFewFrames):
            compute_siti([frame_from_luma(np.zeros((16, 16), dtype=np.uint8))])

    def test_ten_bit_scaled_to_eight_bit_range(self):
        luma8 = mix_bytes(256, 50).reshape(16, 16)
        luma10 = (luma8.astype(np.uint16) << 2).astype(np.uint16)
        si8 = compute_siti([frame_from_luma(luma8)] * 2).si
        si10 = compute_siti([frame_from_luma(luma10, bit_depth=10)] * 2).si
        assert si10 == pytest.approx(si8, rel=1e-12)

    def test_sobel_excludes_borders(self):
        luma = np.zeros((8, 8))
        assert sobel_magnitude(luma).shape == (6, 6)

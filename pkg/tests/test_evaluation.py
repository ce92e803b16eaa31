"""Tests for the evaluation report and field scoring."""

import numpy as np
import pytest

from monofield.cameras import intrinsics_for_fov
from monofield.evaluation import LPIPS_NOTE, EvalReport, evaluate_field
from monofield.field import FieldConfig, HashGridConfig, init_field
from monofield.render import RenderConfig, make_field_fn, render_image
from monofield.scenes import ring_cameras

_CACHE = {}


def tiny_field():
    """Perturbed random field plus its config; memoized."""
    if "field" not in _CACHE:
        fcfg = FieldConfig(
            grid=HashGridConfig(levels=2, base_resolution=4,
                                table_size_log2=8),
            hidden_width=8, hidden_layers=1,
        )
        params = init_field(fcfg, seed=3)
        rng = np.random.default_rng(3)
        for t in params.values():
            t.data += rng.normal(0.0, 0.3, t.data.shape)
        _CACHE["field"] = (params, fcfg)
    return _CACHE["field"]


def field_dataset(rcfg: RenderConfig):
    """Dataset whose frames are renders of tiny_field itself; memoized."""
    key = ("dataset", rcfg.samples_per_ray)
    if key not in _CACHE:
        params, fcfg = tiny_field()
        fn = make_field_fn(params, fcfg)
        intr = intrinsics_for_fov(12, 12, 45.0)
        cams = ring_cameras(3, intr, radius=2.2, elevation_deg=15.0)
        images, depths = [], []
        for intr_i, pose_i in cams:
            img, dep, _ = render_image(fn, intr_i, pose_i, -1.0, 1.0, rcfg)
            images.append(img)
            depths.append(dep)
        _CACHE[key] = {
            "images": np.stack(images),
            "depths": np.stack(depths),
            "cameras": cams,
        }
    return _CACHE[key]


def sample_report() -> EvalReport:
    return EvalReport(
        view_psnr=(30.0, 28.0), view_ssim=(0.9, 0.8),
        mean_psnr=29.0, std_psnr=1.0, mean_ssim=0.85,
        depth_rho=0.95, config_hash="abc123",
    )


class TestEvalReport:
    def test_non_finite_psnr_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            EvalReport(view_psnr=(np.inf,), view_ssim=(0.5,),
                       mean_psnr=np.inf, std_psnr=0.0, mean_ssim=0.5,
                       depth_rho=0.0)

    def test_out_of_range_ssim_rejected(self):
        with pytest.raises(ValueError, match="SSIM"):
            EvalReport(view_psnr=(20.0,), view_ssim=(1.5,),
                       mean_psnr=20.0, std_psnr=0.0, mean_ssim=1.5,
                       depth_rho=0.0)

    def test_lines_carry_every_metric(self):
        lines = sample_report().lines()
        assert "view=0 psnr=30.0000 ssim=0.900000" in lines
        assert "view=1 psnr=28.0000 ssim=0.800000" in lines
        assert "mean_psnr=29.0000" in lines
        assert "std_psnr=1.0000" in lines
        assert "mean_ssim=0.850000" in lines
        assert "depth_rho=0.950000" in lines
        assert f"lpips={LPIPS_NOTE}" in lines
        assert "config_hash=abc123" in lines

    def test_save_writes_the_lines(self, tmp_path):
        rep = sample_report()
        path = tmp_path / "report.txt"
        rep.save(path)
        assert path.read_text().strip().split("\n") == rep.lines()


class TestEvaluateField:
    def test_self_consistent_dataset_scores_perfectly(self):
        params, fcfg = tiny_field()
        rcfg = RenderConfig(samples_per_ray=16)
        rep = evaluate_field(params, fcfg, field_dataset(rcfg), rcfg,
                             input_view=0, config_hash="h0")
        assert rep.view_psnr == (99.0, 99.0, 99.0)
        np.testing.assert_allclose(rep.view_ssim, 1.0, atol=1e-12)
        np.testing.assert_allclose(rep.depth_rho, 1.0, atol=1e-9)
        assert rep.config_hash == "h0"

    def test_wrong_field_scores_imperfectly_but_finite(self):
        params, fcfg = tiny_field()
        other = init_field(fcfg, seed=9)
        rcfg = RenderConfig(samples_per_ray=16)
        rep = evaluate_field(other, fcfg, field_dataset(rcfg), rcfg)
        assert all(np.isfinite(p) for p in rep.view_psnr)
        assert all(p < 99.0 for p in rep.view_psnr)
        assert all(-1.0 <= s <= 1.0 for s in rep.view_ssim)

    def test_worker_count_does_not_change_scores(self):
        params, fcfg = tiny_field()
        rcfg = RenderConfig(samples_per_ray=16)
        a = evaluate_field(params, fcfg, field_dataset(rcfg), rcfg,
                           n_workers=1)
        b = evaluate_field(params, fcfg, field_dataset(rcfg), rcfg,
                           n_workers=2)
        assert a.view_psnr == b.view_psnr
        assert a.view_ssim == b.view_ssim
        assert a.depth_rho == b.depth_rho

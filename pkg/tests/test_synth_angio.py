import numpy as np
import pytest

from angionav.raster import BinaryMask
from angionav.seg_metrics import pixel_metrics
from angionav.synth_angio import (
    DegradeError,
    DegradeSpec,
    GenerationError,
    SynthConfig,
    degrade,
    generate_case,
    load_case,
    save_case,
)
from angionav.topology import betti0, distance_transform, skeletonize
from angionav.vessel_geometry import build_profile, extract_paths, generate_candidates

from conftest import straight_tube

QUICK = SynthConfig(canvas=128, radius_root=5.0, depth=2, n_stenoses=1,
                    n_crossings=1, n_decoys=1)


@pytest.fixture(scope="module")
def quick_case():
    return generate_case(QUICK, 42)


class TestGenerateCase:
    def test_deterministic(self, quick_case):
        again = generate_case(QUICK, 42)
        assert np.array_equal(again.image.values, quick_case.image.values)
        assert np.array_equal(again.gt_mask.bits, quick_case.gt_mask.bits)
        assert again.stenoses == quick_case.stenoses

    def test_stenosis_count_exact(self):
        cfg = SynthConfig(canvas=160, radius_root=5.0, depth=2, n_stenoses=3,
                          n_crossings=0, n_decoys=0)
        for seed in range(5):
            assert len(generate_case(cfg, seed).stenoses) == 3

    def test_single_component(self):
        for seed in range(8):
            case = generate_case(QUICK, seed)
            assert betti0(case.gt_mask) == 1

    def test_severity_measured_through_edt(self):
        cfg = SynthConfig(canvas=256, radius_root=6.0, depth=1, n_stenoses=1,
                          severity_min=0.5, severity_max=0.5, n_crossings=0,
                          n_decoys=0)
        for seed in range(6):
            case = generate_case(cfg, seed)
            field = distance_transform(case.gt_mask)
            s = case.stenoses[0]
            measured = field.values[int(round(s.y)), int(round(s.x))]
            # severity 0.5 -> remaining radius within 20% of half the
            # baseline (the [2.4, 3.6] band for a 6 px vessel)
            assert 0.4 * s.baseline_radius <= measured <= 0.6 * s.baseline_radius
            assert abs((1.0 - measured / s.baseline_radius) - s.severity) <= 0.15

    def test_centroids_on_mask(self, quick_case):
        for s in quick_case.stenoses:
            assert quick_case.gt_mask.bits[int(round(s.y)), int(round(s.x))]

    def test_artifact_kinds(self, quick_case):
        kinds = {a.kind for a in quick_case.artifacts}
        assert kinds <= {"bifurcation", "crossing"}
        assert "crossing" in kinds

    def test_canvas_too_small(self):
        with pytest.raises(GenerationError):
            generate_case(SynthConfig(canvas=32), 0)

    def test_candidate_recall_on_planted_stenoses(self):
        hits = total = 0
        for seed in range(25):
            case = generate_case(QUICK, seed)
            field = distance_transform(case.gt_mask)
            pixels = []
            for pid, path in enumerate(extract_paths(skeletonize(case.gt_mask))):
                if len(path) < 3:
                    continue
                prof = build_profile(path, field)
                pixels += [xy for _, _, xy in generate_candidates(prof, path_id=pid).candidates]
            for s in case.stenoses:
                total += 1
                hits += any(np.hypot(x - s.x, y - s.y) <= 10 for x, y in pixels)
        assert hits / total >= 0.95


class TestDegrade:
    def test_none_is_identity(self, quick_case):
        out = degrade(quick_case.gt_mask, DegradeSpec(mode="none"))
        assert np.array_equal(out.bits, quick_case.gt_mask.bits)

    def test_fragment_raises_betti_and_keeps_overlap(self):
        tube = straight_tube(60, 3)
        out = degrade(tube, DegradeSpec(mode="fragment", gap_px=2, n_cuts=1, seed=1))
        assert betti0(out) == betti0(tube) + 1
        assert pixel_metrics(out, tube)["dice"] > 0.8

    def test_fragment_multiple_cuts(self, quick_case):
        out = degrade(quick_case.gt_mask,
                      DegradeSpec(mode="fragment", gap_px=2, n_cuts=2, seed=3))
        assert betti0(out) >= betti0(quick_case.gt_mask) + 2

    def test_fragment_deterministic(self, quick_case):
        spec = DegradeSpec(mode="fragment", gap_px=2, n_cuts=1, seed=9)
        a = degrade(quick_case.gt_mask, spec)
        b = degrade(quick_case.gt_mask, spec)
        assert np.array_equal(a.bits, b.bits)

    def test_fragment_too_small_errors(self):
        tiny = np.zeros((8, 8), dtype=bool)
        tiny[3, 3:5] = True
        with pytest.raises(DegradeError):
            degrade(BinaryMask(tiny), DegradeSpec(mode="fragment", gap_px=2, n_cuts=1))

    def test_spurious_blobs_add_exact_components(self, quick_case):
        out = degrade(quick_case.gt_mask, DegradeSpec(mode="spurious_blob", n_blobs=2, seed=5))
        assert betti0(out) == betti0(quick_case.gt_mask) + 2

    def test_over_dilate_strict_superset(self, quick_case):
        out = degrade(quick_case.gt_mask, DegradeSpec(mode="over_dilate", dilate_px=1.5, seed=0))
        assert not (quick_case.gt_mask.bits & ~out.bits).any()
        assert out.foreground_count > quick_case.gt_mask.foreground_count

    def test_empty_mask_rejected(self):
        with pytest.raises(DegradeError):
            degrade(BinaryMask.zeros(8, 8), DegradeSpec(mode="fragment"))

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            DegradeSpec(mode="melt")
        with pytest.raises(ValueError):
            DegradeSpec(mode="fragment", gap_px=0)


class TestBundles:
    def test_roundtrip(self, tmp_path, quick_case):
        save_case(quick_case, tmp_path / "c0", QUICK)
        loaded = load_case(tmp_path / "c0")
        assert np.array_equal(loaded.gt_mask.bits, quick_case.gt_mask.bits)
        assert loaded.stenoses == quick_case.stenoses
        assert loaded.artifacts == quick_case.artifacts
        assert loaded.seed == quick_case.seed
        # image is 8-bit quantized on disk
        assert np.abs(loaded.image.values - quick_case.image.values).max() <= 0.5 / 255 + 1e-12

    def test_bundle_files(self, tmp_path, quick_case):
        save_case(quick_case, tmp_path / "c1", QUICK)
        names = {p.name for p in (tmp_path / "c1").iterdir()}
        assert names == {"image.pgm", "mask.pgm", "case.json"}

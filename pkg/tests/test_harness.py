import json
import math

import numpy as np
import pytest

from pbpcc.exceptions import ImageFormatError, ParameterError
from pbpcc.harness import (
    GRID_COLUMNS,
    GridSpec,
    ManifestEntry,
    RunOptions,
    bench_single,
    camera_averaged_stats,
    dataset_report,
    downsample_sweep,
    dumps,
    grid_search,
    make_method,
    prepare_dataset,
    read_manifest,
    read_records_csv,
    run_dataset,
    stats_by_camera,
    write_manifest,
    write_records_csv,
)
from pbpcc.imaging import LinearImage, save_png16
from pbpcc.metrics import error_stats
from pbpcc.synth import make_suite, write_suite

from conftest import uniform_image

EXACT = (51 / 255, 102 / 255, 204 / 255)


def write_uniform_set(tmp_path, colors, gt=EXACT, camera_tags=None):
    entries = []
    for i, color in enumerate(colors):
        path = tmp_path / f"u{i}.png"
        save_png16(path, uniform_image(color, 24, 36))
        tag = camera_tags[i] if camera_tags else None
        entries.append(ManifestEntry(f"u{i}", str(path), gt, bit_depth=16, camera_tag=tag))
    manifest = tmp_path / "manifest.csv"
    write_manifest(manifest, entries)
    return manifest


def isolated_whites_fixture(tmp_path, count=4):
    """Dim texture plus isolated white pixels that no S=4 lattice point hits."""
    rng = np.random.default_rng(99)
    entries = []
    for i in range(count):
        e = np.array([0.8, 0.55, 0.3]) if i % 2 else np.array([0.4, 0.6, 0.85])
        refl = rng.uniform(0.0, 0.3, size=(48, 72, 3))
        refl[0:48:4, 0:72:4] = 0.3
        for r in range(1, 48, 4):
            for c in range(1, 72, 4):
                refl[r, c] = 1.0
        image = LinearImage.from_array(refl * e)
        path = tmp_path / f"iso{i}.png"
        save_png16(path, image)
        entries.append(ManifestEntry(f"iso{i}", str(path), tuple(e), bit_depth=16))
    return entries


class TestManifest:
    def test_round_trip_and_relative_paths(self, tmp_path):
        manifest = write_uniform_set(tmp_path, [EXACT, EXACT], camera_tags=["a", "b"])
        entries = read_manifest(manifest)
        assert [e.image_id for e in entries] == ["u0", "u1"]
        assert entries[0].image_path == str(tmp_path / "u0.png")
        assert entries[1].camera_tag == "b"
        assert entries[0].bit_depth == 16
        assert entries[0].gt_rgb == pytest.approx(EXACT)

    def test_optional_columns(self, tmp_path):
        m = tmp_path / "m.csv"
        m.write_text("image_id,image_path,gt_r,gt_g,gt_b\nx,x.png,1,2,3\n")
        (e,) = read_manifest(m)
        assert e.mask_path is None and e.bit_depth is None and e.camera_tag is None
        assert e.saturation_fraction == 1.0

    def test_bad_row_reports_line(self, tmp_path):
        m = tmp_path / "m.csv"
        m.write_text("image_id,image_path,gt_r,gt_g,gt_b\nx,x.png,1,2,3\ny,y.png,1,oops,3\n")
        with pytest.raises(ImageFormatError, match=":3:"):
            read_manifest(m)

    def test_missing_column(self, tmp_path):
        m = tmp_path / "m.csv"
        m.write_text("image_id,image_path,gt_r\nx,x.png,1\n")
        with pytest.raises(ImageFormatError):
            read_manifest(m)

    def test_bad_groundtruth(self, tmp_path):
        m = tmp_path / "m.csv"
        m.write_text("image_id,image_path,gt_r,gt_g,gt_b\nx,x.png,0,0,0\n")
        with pytest.raises(ImageFormatError):
            read_manifest(m)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ImageFormatError):
            read_manifest(tmp_path / "absent.csv")


class TestMakeMethod:
    def test_pbp_defaults(self):
        m = make_method("pbp", base="sog")
        assert m.pbp.sample_fraction == 0.005 and m.pbp.downsample_interval == 4
        assert m.params.minkowski_p == 1
        assert m.label == "PBP-(1,1)+SOG"

    def test_overrides(self):
        m = make_method("pbp", base="gw", n=2, sample_fraction=0.03, interval=5, minkowski_p=2)
        assert (m.pbp.grid_factor, m.pbp.sample_fraction, m.pbp.downsample_interval) == (2, 0.03, 5)
        assert m.pbp.base.minkowski_p == 2

    def test_unknown(self):
        with pytest.raises(ParameterError):
            make_method("ffcc")
        with pytest.raises(ParameterError):
            make_method("pbp", base="wp")

    def test_baseline_with_interval(self):
        m = make_method("gw").with_interval(4)
        img = uniform_image((0.2, 0.4, 0.6), 20, 20)
        assert m.estimate(img).rgb == pytest.approx(make_method("gw").estimate(img).rgb)
        assert make_method("pbp").with_interval(3).pbp.downsample_interval == 3


class TestRunDataset:
    def test_synthetic_pbp_below_one_degree(self, tmp_path):
        manifest = write_suite(tmp_path, make_suite(5, 6, height=240, width=360))
        result = run_dataset(read_manifest(manifest), make_method("pbp", sample_fraction=0.02, interval=1))
        assert result.stats.count == 6
        assert result.stats.mean < 1.0
        assert not result.failures
        assert all(r.elapsed_ms >= 0 for r in result.records)

    def test_estimate_equals_truth(self, tmp_path):
        manifest = write_uniform_set(tmp_path, [EXACT])
        result = run_dataset(read_manifest(manifest), make_method("gw"), RunOptions(quantize_8bit=False))
        s = result.stats
        for v in (s.mean, s.median, s.trimean, s.best25, s.worst25, s.geo_mean):
            assert v == pytest.approx(0.0, abs=1e-9)

    def test_unreadable_image_recorded(self, tmp_path):
        manifest = write_uniform_set(tmp_path, [EXACT, EXACT, EXACT])
        (tmp_path / "u1.png").unlink()
        result = run_dataset(read_manifest(manifest), make_method("gw"))
        assert result.stats.count == 2
        assert [f.image_id for f in result.failures] == ["u1"]

    def test_estimation_failure_recorded(self, tmp_path):
        manifest = write_uniform_set(tmp_path, [EXACT, (0, 0, 0)])
        result = run_dataset(read_manifest(manifest), make_method("pbp", interval=1))
        assert result.stats.count == 1
        assert result.failures[0].kind == "DegenerateBrightnessError"

    def test_empty(self):
        with pytest.raises(ParameterError):
            run_dataset([], make_method("gw"))

    def test_deterministic_and_parallel_order(self, tmp_path):
        entries = read_manifest(write_suite(tmp_path, make_suite(8, 5, height=60, width=90)))
        method = make_method("pbp", base="ge1", interval=1)
        a = run_dataset(entries, method)
        b = run_dataset(entries, method, jobs=2)
        assert [r.image_id for r in b.records] == [e.image_id for e in entries]
        assert [r.error_deg for r in a.records] == [r.error_deg for r in b.records]
        assert a.stats == b.stats

    def test_mask_applied(self, tmp_path):
        from pbpcc.imaging import save_mask

        data = np.zeros((10, 10, 3))
        data[...] = (0.2, 0.4, 0.6)
        data[:2, :2] = (1.0, 0.0, 0.0)
        save_png16(tmp_path / "m.png", LinearImage.from_array(data))
        mask = np.ones((10, 10), bool)
        mask[:2, :2] = False
        save_mask(tmp_path / "mask.png", mask)
        entry = ManifestEntry("m", str(tmp_path / "m.png"), (0.2, 0.4, 0.6), str(tmp_path / "mask.png"), 16)
        result = run_dataset([entry], make_method("wp"), RunOptions(quantize_8bit=False))
        assert result.mask_used
        assert result.records[0].error_deg == pytest.approx(0.0, abs=1e-6)

    def test_saturation_threshold_applied(self, tmp_path):
        data = np.zeros((10, 10, 3))
        data[...] = (0.2, 0.4, 0.6)
        data[0, 0] = (1.0, 0.1, 0.1)
        save_png16(tmp_path / "s.png", LinearImage.from_array(data))
        entry = ManifestEntry("s", str(tmp_path / "s.png"), (0.2, 0.4, 0.6), None, 16, 0.95)
        result = run_dataset([entry], make_method("wp"), RunOptions(quantize_8bit=False))
        assert result.records[0].error_deg == pytest.approx(0.0, abs=1e-6)

    def test_camera_grouping(self, tmp_path):
        manifest = write_uniform_set(
            tmp_path, [EXACT, (0.5, 0.5, 0.5), (0.2, 0.5, 0.5)], camera_tags=["a", "a", "b"]
        )
        result = run_dataset(read_manifest(manifest), make_method("gw"))
        per = stats_by_camera(result.records)
        assert set(per) == {"a", "b"}
        avg = camera_averaged_stats(result.records)
        assert avg.mean == pytest.approx((per["a"].mean + per["b"].mean) / 2)
        report = dataset_report(result, make_method("gw"), grouping="camera")
        assert report["stats"]["mean"] == pytest.approx(avg.mean)
        assert report["pooled_stats"]["mean"] == pytest.approx(result.stats.mean)
        assert "estimation call" in report["timing"]
        json.loads(dumps(report))

    def test_records_csv_round_trip(self, tmp_path):
        manifest = write_uniform_set(tmp_path, [EXACT, (0.5, 0.3, 0.3), (0.1, 0.5, 0.2)])
        result = run_dataset(read_manifest(manifest), make_method("gw"))
        write_records_csv(tmp_path / "errs.csv", result.records)
        rows = read_records_csv(tmp_path / "errs.csv")
        assert [r[0] for r in rows] == ["u0", "u1", "u2"]
        assert error_stats([r[1] for r in rows]) == result.stats


class TestGridSearch:
    def test_singleton(self, tmp_path):
        entries = read_manifest(write_suite(tmp_path, make_suite(1, 2, height=60, width=90)))
        grid = GridSpec(sample_fractions=(0.03,), intervals=(2,), minkowski_ps=(1,))
        res = grid_search(entries, "gw", grid)
        assert len(res.table) == 1
        assert (res.best["sample_fraction"], res.best["interval"], res.best["minkowski_p"]) == (0.03, 2, 1)

    def test_fine_detail_prefers_no_downsampling(self, tmp_path):
        entries = isolated_whites_fixture(tmp_path)
        grid = GridSpec(sample_fractions=(0.02,), intervals=(1, 4), minkowski_ps=(1,))
        res = grid_search(entries, "gw", grid, RunOptions(quantize_8bit=False))
        assert res.best["interval"] == 1
        by_s = {row["interval"]: row["objective"] for row in res.table}
        assert by_s[1] < by_s[4]

    def test_tie_break_lexicographic(self, tmp_path):
        manifest = write_uniform_set(tmp_path, [EXACT, EXACT])
        grid = GridSpec(sample_fractions=(0.04, 0.02), intervals=(2, 1), minkowski_ps=(2, 1))
        res = grid_search(read_manifest(manifest), "gw", grid, RunOptions(quantize_8bit=False))
        assert len(res.table) == 8
        assert all(row["objective"] == pytest.approx(0.0, abs=1e-9) for row in res.table)
        assert (res.best["sample_fraction"], res.best["interval"], res.best["minkowski_p"]) == (0.02, 1, 1)

    def test_table_csv(self, tmp_path):
        entries = read_manifest(write_suite(tmp_path, make_suite(2, 2, height=60, width=90)))
        grid = GridSpec(sample_fractions=(0.02, 0.04), intervals=(1, 2), minkowski_ps=(1,))
        res = grid_search(entries, "sog", grid)
        assert res.best in res.table
        best_obj = min(r["objective"] for r in res.table)
        assert res.best["objective"] == best_obj
        res.write_csv(tmp_path / "grid.csv")
        lines = (tmp_path / "grid.csv").read_text().splitlines()
        assert lines[0].split(",") == list(GRID_COLUMNS)
        assert len(lines) == 5

    def test_empty_axis(self):
        with pytest.raises(ParameterError):
            GridSpec(intervals=())


class TestSweep:
    def test_constant_images_flat(self, tmp_path):
        manifest = write_uniform_set(tmp_path, [EXACT, (0.3, 0.3, 0.6)])
        rows = downsample_sweep(read_manifest(manifest), [make_method("gw"), make_method("sog")], [1, 2, 5])
        assert len(rows) == 6
        for name in ("gw", "sog"):
            means = [r["mean"] for r in rows if r["method"] == name]
            assert max(means) - min(means) < 1e-9

    def test_single_interval(self, tmp_path):
        manifest = write_uniform_set(tmp_path, [(0.5, 0.3, 0.3)])
        rows = downsample_sweep(read_manifest(manifest), [make_method("pbp")], [1])
        assert len(rows) == 1
        assert rows[0]["method"] == "PBP-(1,1)+GW"
        assert rows[0]["time_norm"] == 1.0

    def test_normalization_peaks_at_one(self, tmp_path):
        entries = read_manifest(write_suite(tmp_path, make_suite(4, 3, height=80, width=120)))
        prepared, _ = prepare_dataset(entries)
        rows = downsample_sweep(prepared, [make_method("ge1")], [1, 2, 3, 4])
        assert max(r["mean_norm"] for r in rows) == 1.0
        assert max(r["time_norm"] for r in rows) == 1.0

    def test_bad_intervals(self, tmp_path):
        with pytest.raises(ParameterError):
            downsample_sweep([], [make_method("gw")], [])
        with pytest.raises(ParameterError):
            downsample_sweep([], [make_method("gw")], [0])


class TestBench:
    def test_single_repeat(self):
        res = bench_single(uniform_image((0.2, 0.3, 0.4), 30, 40), make_method("gw"), repeats=1)
        assert res.repeats == 1
        assert res.min_ms == res.mean_ms == res.p95_ms
        assert set(res.as_dict()) == {"min_ms", "mean_ms", "p95_ms", "repeats"}

    def test_ordering(self, tmp_path):
        save_png16(tmp_path / "b.png", uniform_image((0.2, 0.3, 0.4), 30, 40))
        res = bench_single(tmp_path / "b.png", make_method("pbp", interval=1), repeats=5)
        assert res.min_ms <= res.mean_ms
        assert res.min_ms <= res.p95_ms <= max(res.samples_ms)

    def test_bad_repeats(self):
        with pytest.raises(ParameterError):
            bench_single(uniform_image((0.2, 0.3, 0.4)), make_method("gw"), repeats=0)


def test_nan_free_stats(tmp_path):
    manifest = write_suite(tmp_path, make_suite(6, 3, height=60, width=90))
    result = run_dataset(read_manifest(manifest), make_method("ge2"))
    assert all(math.isfinite(v) for v in result.stats.as_dict().values())

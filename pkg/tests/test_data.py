import hashlib
import warnings
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from localcount.data import (
    DatasetManifest, ImageRecord, PatchSample, SamplingConfig, Split, SynthConfig, TargetMode, add_mean,
    compute_channel_mean, extract_training_patches, lattice, load_annotation, load_manifest, prepare_arrays,
    prepare_image, shuffle_split, stack_batch, subtract_mean, synth_generate, write_annotation, write_manifest,
)
from localcount.density import DotAnnotation, local_count, render_density, total_count
from localcount.errors import DataError

HEADER = "image_path,annotation_path,sequence,split\n"

# (sequence, images, used for train/val, used for test)
FIELD_SEQUENCES = [
    ("Zhengzhou2010", 37, True), ("Zhengzhou2011", 24, False), ("Zhengzhou2012", 22, True),
    ("Taian2010_1", 30, True), ("Taian2010_2", 32, False), ("Taian2011_1", 21, True),
    ("Taian2011_2", 19, False), ("Taian2012_1", 41, True), ("Taian2012_2", 23, False),
    ("Taian2013_1", 8, True), ("Taian2013_2", 8, False), ("Gucheng2012", 15, True),
    ("Gucheng2014", 45, False), ("Jalaid2015_1", 12, True), ("Jalaid2015_2", 12, False),
    ("Jalaid2015_3", 12, False),
]


def write_files(tmp_path: Path, text: str) -> Path:
    p = tmp_path / "manifest.csv"
    p.write_text(text)
    return p


# -- manifest -------------------------------------------------------------------

def test_empty_manifest_is_valid(tmp_path):
    m = load_manifest(write_files(tmp_path, HEADER))
    assert m.records == [] and m.sequences() == []


def test_split_is_case_insensitive(tmp_path):
    m = load_manifest(write_files(tmp_path, HEADER + "a.png,a.csv,s1,TEST\nb.png,b.csv,s1,Train\n"), check_paths=False)
    assert [r.split for r in m.records] == [Split.TEST, Split.TRAIN]
    assert m.records[0].image_path == tmp_path / "a.png"


@pytest.mark.parametrize("body,line,msg", [
    ("a.png,a.csv,s1,holdout\n", 2, "unknown split"),
    ("a.png,a.csv,s1,train\nb.png,b.csv\n", 3, "expected 4 fields"),
    ("a.png,,s1,train\n", 2, "empty field"),
])
def test_malformed_rows_report_line(tmp_path, body, line, msg):
    with pytest.raises(DataError, match=msg) as err:
        load_manifest(write_files(tmp_path, HEADER + body), check_paths=False)
    assert err.value.line == line
    assert f"manifest.csv:{line}" in str(err.value)


def test_bad_header(tmp_path):
    with pytest.raises(DataError, match="header"):
        load_manifest(write_files(tmp_path, "img,ann,seq,split\n"))


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_manifest(tmp_path / "nope.csv")


def test_missing_referenced_file(tmp_path):
    with pytest.raises(DataError, match="missing"):
        load_manifest(write_files(tmp_path, HEADER + "a.png,a.csv,s1,train\n"))


def test_field_table_sequences(tmp_path):
    rows = []
    for name, n, trainval in FIELD_SEQUENCES:
        for i in range(n):
            # train/val sequences share their images between both splits
            split = ("val" if i % 10 == 9 or i == n - 1 else "train") if trainval else "test"
            rows.append(f"{name}/{i}.jpg,{name}/{i}.csv,{name},{split}\n")
    m = load_manifest(write_files(tmp_path, HEADER + "".join(rows)), check_paths=False)
    assert len(m.sequences()) == 16
    assert len(m.sequences(Split.TRAIN, Split.VAL)) == 8
    assert len(m.sequences(Split.TEST)) == 8
    assert set(m.sequences(Split.TRAIN)) == set(m.sequences(Split.VAL))
    assert "Zhengzhou2010" in m.sequences(Split.TRAIN) and "Zhengzhou2010" in m.sequences(Split.VAL)
    assert len(m.by_split(Split.TRAIN, Split.VAL)) == 186
    assert len(m.by_split(Split.TEST)) == 175


def test_manifest_round_trip_and_stable_order(tmp_path):
    recs = [ImageRecord(tmp_path / f"i{k}.png", tmp_path / f"a{k}.csv", f"s{k % 2}", Split.TRAIN) for k in range(5)]
    write_manifest(DatasetManifest(recs), tmp_path / "m.csv")
    a = load_manifest(tmp_path / "m.csv", check_paths=False)
    b = load_manifest(tmp_path / "m.csv", check_paths=False)
    assert a.records == b.records == recs


# -- annotations ------------------------------------------------------------------

def test_annotation_round_trip(tmp_path):
    pts = np.array([[1.25, 2.5], [1e-3, 799.999]])
    write_annotation(DotAnnotation(pts), tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().startswith("x,y\n")
    np.testing.assert_array_equal(load_annotation(tmp_path / "a.csv").points, pts)


@pytest.mark.parametrize("text,line", [("x;y\n", 1), ("x,y\n1,2\n3\n", 3), ("x,y\n1,abc\n", 2)])
def test_annotation_errors(tmp_path, text, line):
    (tmp_path / "a.csv").write_text(text)
    with pytest.raises(DataError) as err:
        load_annotation(tmp_path / "a.csv")
    assert err.value.line == line


def test_empty_annotation(tmp_path):
    (tmp_path / "a.csv").write_text("x,y\n")
    assert len(load_annotation(tmp_path / "a.csv")) == 0


# -- preparation --------------------------------------------------------------------

def test_identity_preparation():
    img = Image.fromarray(np.random.default_rng(0).integers(0, 255, (20, 30, 3), dtype=np.uint8))
    arr, dots = prepare_arrays(img, DotAnnotation([[3.5, 7.25]]), 1.0)
    np.testing.assert_array_equal(arr, np.asarray(img, dtype=np.float32))
    np.testing.assert_array_equal(dots.points, [[3.5, 7.25]])


def test_full_resolution_field_image_shrinks_to_working_size():
    img = Image.new("RGB", (3648, 2736))
    arr, dots = prepare_arrays(img, DotAnnotation([[800, 400]]), 1 / 8)
    assert arr.shape == (342, 456, 3)
    np.testing.assert_array_equal(dots.points, [[100, 50]])


def test_out_of_bounds_dot_names_the_image():
    with pytest.raises(DataError, match="frame7"):
        prepare_arrays(Image.new("RGB", (10, 10)), DotAnnotation([[11, 2]]), 1.0, name="frame7")


def test_undecodable_image(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"not an image")
    (tmp_path / "bad.csv").write_text("x,y\n")
    rec = ImageRecord(tmp_path / "bad.png", tmp_path / "bad.csv", "s", Split.TRAIN)
    with pytest.raises(DataError, match="bad.png"):
        prepare_image(rec, SamplingConfig())


# -- patches --------------------------------------------------------------------

def test_single_patch_for_exact_size():
    img = np.zeros((32, 32, 3), np.float32)
    assert len(extract_training_patches(img, np.zeros((32, 32), np.float32), SamplingConfig())) == 1


def test_field_image_patch_count():
    img = np.zeros((342, 456, 3), np.float32)
    patches = extract_training_patches(img, np.zeros((342, 456), np.float32), SamplingConfig(r=32, s_r=8))
    assert len(patches) == ((456 - 32) // 8 + 1) * ((342 - 32) // 8 + 1) == 2106
    assert all(p.target == 0.0 for p in patches)


def test_patches_on_lattice_without_duplicates():
    rng = np.random.default_rng(1)
    d = render_density(DotAnnotation(rng.uniform(0, 60, (10, 2))), 50, 70, 2.0)
    cfg = SamplingConfig(r=16, s_r=6, sigma=2.0)
    patches = extract_training_patches(np.zeros((50, 70, 3), np.float32), d, cfg, "img")
    offsets = [p.source[1:] for p in patches]
    assert len(set(offsets)) == len(offsets)
    for r0, c0 in offsets:
        assert r0 % 6 == 0 and c0 % 6 == 0 and r0 + 16 <= 50 and c0 + 16 <= 70
    for p in patches:
        assert p.pixels.shape == (16, 16, 3)
        assert p.target == pytest.approx(local_count(d, (p.source[1], p.source[2], 16)))
        assert p.target >= 0


def test_non_overlapping_tiling_conserves_mass():
    rng = np.random.default_rng(3)
    d = render_density(DotAnnotation(rng.uniform(0, 64, (25, 2))), 64, 96, 4.0)
    patches = extract_training_patches(np.zeros((64, 96, 3), np.float32), d, SamplingConfig(r=32, s_r=32, sigma=4.0))
    assert sum(p.target for p in patches) == pytest.approx(total_count(d), abs=1e-4)


def test_small_image_warns_and_yields_nothing():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = extract_training_patches(np.zeros((20, 40, 3), np.float32), np.zeros((20, 40), np.float32),
                                       SamplingConfig(r=32))
    assert out == [] and caught


def test_local_density_targets_are_maps():
    d = render_density(DotAnnotation([[16.0, 16.0]]), 32, 32, 2.0)
    cfg = SamplingConfig(r=32, target_mode=TargetMode.LOCAL_DENSITY, sigma=2.0)
    (p,) = extract_training_patches(np.zeros((32, 32, 3), np.float32), d, cfg)
    np.testing.assert_array_equal(p.target, d)


def test_lattice():
    assert lattice(456, 32, 8)[-1] == 424 and len(lattice(456, 32, 8)) == 54
    assert lattice(10, 32, 8) == []


@pytest.mark.parametrize("kw", [{"r": 4}, {"s_r": 0}, {"sigma": 0}, {"resize_factor": -1}])
def test_sampling_config_validation(kw):
    with pytest.raises(ValueError):
        SamplingConfig(**kw)


# -- means ------------------------------------------------------------------------

def test_constant_image_mean_and_zero_residual():
    s = PatchSample(np.full((8, 8, 3), 42.0, np.float32), 0.0)
    m = compute_channel_mean([s, s])
    np.testing.assert_array_equal(m, [42, 42, 42])
    assert not subtract_mean(s, m).pixels.any()


def test_mean_weights_by_pixel_count():
    a = PatchSample(np.zeros((4, 4, 3), np.float32), 0.0)
    b = PatchSample(np.full((4, 4, 3), 12.0, np.float32), 0.0)
    np.testing.assert_allclose(compute_channel_mean([a, a, a, b]), 3.0)


def test_mean_round_trip_is_exact():
    rng = np.random.default_rng(4)
    samples = [PatchSample(rng.integers(0, 256, (16, 16, 3)).astype(np.float32), 0.0) for _ in range(7)]
    m = compute_channel_mean(samples)
    for s in samples:
        np.testing.assert_array_equal(add_mean(subtract_mean(s, m), m).pixels, s.pixels)


def test_stack_batch_matches_subtract_mean():
    rng = np.random.default_rng(5)
    samples = [PatchSample(rng.integers(0, 256, (8, 8, 3)).astype(np.float32), 0.0) for _ in range(3)]
    m = compute_channel_mean(samples)
    batch = stack_batch([s.pixels for s in samples], m)
    assert batch.shape == (3, 3, 8, 8)
    for i, s in enumerate(samples):
        np.testing.assert_array_equal(batch[i], subtract_mean(s, m).pixels.transpose(2, 0, 1))


# -- split --------------------------------------------------------------------------

def test_split_ninety_ten():
    tr, va = shuffle_split(list(range(10)), 0.9, seed=0)
    assert len(tr) == 9 and len(va) == 1


def test_split_is_seeded_partition():
    items = list(range(101))
    a = shuffle_split(items, 0.9, seed=3)
    assert a == shuffle_split(items, 0.9, seed=3)
    assert sorted(a[0] + a[1]) == items
    assert a != shuffle_split(items, 0.9, seed=4)


@pytest.mark.parametrize("frac", [0.0, 1.0, 1.5])
def test_split_fraction_bounds(frac):
    with pytest.raises(ValueError):
        shuffle_split([1, 2, 3], frac, 0)


# -- synthetic data -------------------------------------------------------------------

def _digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_synth_is_deterministic(tmp_path):
    cfg = SynthConfig(n_images=5, height=64, width=80)
    synth_generate(cfg, 11, tmp_path / "a")
    synth_generate(cfg, 11, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    synth_generate(cfg, 12, tmp_path / "c")
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")


def test_synth_annotations_match_log(tmp_path):
    summary = synth_generate(SynthConfig(n_images=6, height=64, width=80), 2, tmp_path)
    m = load_manifest(tmp_path / "manifest.csv")
    logged = [int(line.split(",")[1]) for line in (tmp_path / "synth_log.csv").read_text().splitlines()[1:]]
    assert [len(load_annotation(r.annotation_path)) for r in m.records] == logged == summary.counts
    assert summary.splits == {"train": 5, "val": 0, "test": 1}
    for r in m.records:
        with Image.open(r.image_path) as im:
            assert im.size == (80, 64)


def test_synth_zero_objects(tmp_path):
    summary = synth_generate(SynthConfig(n_images=2, height=32, width=32, min_objects=0, max_objects=0), 0, tmp_path)
    assert summary.counts == [0, 0]
    assert (tmp_path / "annotations" / "img_00000.csv").read_text() == "x,y\n"


def test_synth_default_split_sizes():
    cfg = SynthConfig()
    assert cfg.n_images - cfg.n_test == 200 and cfg.n_test == 50


def test_synth_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(DataError):
        synth_generate(SynthConfig(n_images=1, height=16, width=16), 0, blocker / "ds")

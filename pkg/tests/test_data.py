import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from hymunet.data import (DatasetError, Sample, SplitSpec, Transform, augment, generate_sample, generate_synthetic,
                          ingest_isic, load_dataset, read_mask, resize_image, resize_mask, rotate_mask, save_dataset,
                          split, split_sizes, to_arrays, write_image, write_mask)


def test_generation_deterministic():
    a, b = generate_sample(7, 3), generate_sample(7, 3)
    assert a.image.tobytes() == b.image.tobytes() and a.mask.tobytes() == b.mask.tobytes()
    assert a.id == b.id
    assert generate_sample(7, 4).image.tobytes() != a.image.tobytes()


def test_generation_foreground_fraction():
    ds = generate_synthetic(42, 100, 64)
    assert len(ds) == 100
    for s in ds:
        frac = s.mask.mean()
        assert 0.05 <= frac <= 0.6, (s.id, frac)
        assert s.image.shape == (64, 64, 3) and s.image.min() >= 0 and s.image.max() <= 1


def test_artifact_flag_keeps_mask():
    clean, busy = generate_sample(1, 0, artifacts=0.0), generate_sample(1, 0, artifacts=1.0)
    assert np.array_equal(clean.mask, busy.mask)
    assert not np.array_equal(clean.image, busy.image)


def test_identity_transform_unchanged():
    s = generate_sample(0, 0, 32)
    out = augment(s, transform=Transform())
    assert np.array_equal(out.image, s.image) and np.array_equal(out.mask, s.mask)


def test_hflip_involution():
    s = generate_sample(0, 1, 32)
    twice = augment(augment(s, transform=Transform(hflip=True)), transform=Transform(hflip=True))
    assert twice.image.tobytes() == s.image.tobytes() and twice.mask.tobytes() == s.mask.tobytes()


@pytest.mark.parametrize("angle,k", [(90.0, 1), (-90.0, -1), (180.0, 2)])
def test_right_angle_rotation_is_exact_permutation(angle, k):
    s = generate_sample(0, 2, 32)
    out = augment(s, transform=Transform(angle=angle))
    assert np.array_equal(out.mask, np.rot90(s.mask, k))
    assert np.allclose(out.image, np.rot90(s.image, k), atol=1e-12)
    assert out.mask.sum() == s.mask.sum()


def test_rotation_fill_values():
    mask = np.ones((9, 9), dtype=bool)
    r = rotate_mask(mask, 45.0)
    assert not r[0, 0] and r[4, 4]
    s = Sample(np.random.default_rng(0).random((9, 9, 3)), mask, "x")
    out = augment(s, transform=Transform(angle=45.0))
    assert np.allclose(out.image[0, 0], s.image.reshape(-1, 3).mean(axis=0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_augmentation_foreground_change_bounded(seed):
    s = generate_sample(seed % 1000, 0, 32, artifacts=0.0)
    out = augment(s, np.random.default_rng(seed))
    perimeter = int((s.mask ^ np.roll(s.mask, 1, 0)).sum() + (s.mask ^ np.roll(s.mask, 1, 1)).sum())
    assert abs(int(out.mask.sum()) - int(s.mask.sum())) <= 2 * perimeter


def test_resize_matches_hand_bilinear():
    img = np.arange(16.0).reshape(4, 4, 1) / 16
    out = resize_image(img, 8)[..., 0]
    # half-pixel centres: output i samples source (i + 0.5)/2 - 0.5, clamped to [0, 3]
    ref = np.zeros((8, 8))
    for i in range(8):
        for j in range(8):
            sy = min(max((i + 0.5) / 2 - 0.5, 0.0), 3.0)
            sx = min(max((j + 0.5) / 2 - 0.5, 0.0), 3.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, 3), min(x0 + 1, 3)
            fy, fx = sy - y0, sx - x0
            ref[i, j] = ((1 - fy) * (1 - fx) * img[y0, x0, 0] + (1 - fy) * fx * img[y0, x1, 0]
                         + fy * (1 - fx) * img[y1, x0, 0] + fy * fx * img[y1, x1, 0])
    assert np.allclose(out, ref, atol=1e-15)


def test_resize_mask_nearest():
    m = np.zeros((4, 4), dtype=bool)
    m[:2, :2] = True
    out = resize_mask(m, 8)
    assert out[:4, :4].all() and not out[4:].any() and not out[:, 4:].any()


def _write_pair(root, key, img, mask, mask_name=None):
    (root / "img").mkdir(exist_ok=True)
    (root / "msk").mkdir(exist_ok=True)
    write_image(root / "img" / f"{key}.png", img)
    write_mask(root / "msk" / (mask_name or f"{key}.png"), mask)


def test_ingest_empty_dirs_warns(tmp_path, caplog):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    assert ingest_isic(tmp_path / "a", tmp_path / "b", 16) == []
    assert "no image" in caplog.text


def test_ingest_one_pair_with_isic_mask_name(tmp_path):
    s = generate_sample(0, 0, 32)
    _write_pair(tmp_path, "ISIC_0000001", s.image, s.mask, "ISIC_0000001_segmentation.png")
    out = ingest_isic(tmp_path / "img", tmp_path / "msk", 32)
    assert [x.id for x in out] == ["ISIC_0000001"]
    assert np.array_equal(out[0].mask, s.mask)


def test_ingest_missing_counterpart(tmp_path):
    s = generate_sample(0, 0, 32)
    _write_pair(tmp_path, "a", s.image, s.mask)
    write_image(tmp_path / "img" / "b.png", s.image)
    with pytest.raises(DatasetError, match="b"):
        ingest_isic(tmp_path / "img", tmp_path / "msk", 32)


def test_ingest_unreadable_and_nonbinary(tmp_path):
    s = generate_sample(0, 0, 32)
    _write_pair(tmp_path, "a", s.image, s.mask)
    (tmp_path / "img" / "a.png").write_bytes(b"not a png")
    with pytest.raises(DatasetError, match="unreadable"):
        ingest_isic(tmp_path / "img", tmp_path / "msk", 32)
    Image.fromarray(np.arange(16, dtype=np.uint8).reshape(4, 4) * 10).save(tmp_path / "grey.png")
    with pytest.raises(DatasetError, match="binary"):
        read_mask(tmp_path / "grey.png")


def test_serialize_ingest_round_trip_lossless_masks(tmp_path):
    ds = generate_synthetic(3, 6, 32)
    save_dataset(tmp_path / "d", {"train": ds[:4], "test": ds[4:]})
    back = load_dataset(tmp_path / "d")
    assert [s.id for s in back["train"]] == [s.id for s in ds[:4]]
    for a, b in zip(ds, back["train"] + back["test"]):
        assert np.array_equal(a.mask, b.mask)
        assert np.abs(a.image - b.image).max() <= 0.5 / 255 + 1e-12
    save_dataset(tmp_path / "e", {"all": back["train"]})
    again = load_dataset(tmp_path / "e")["all"]
    for a, b in zip(back["train"], again):
        assert np.array_equal(a.mask, b.mask) and np.array_equal(a.image, b.image)


def test_load_dataset_without_manifest(tmp_path):
    with pytest.raises(DatasetError, match="manifest"):
        load_dataset(tmp_path)


@pytest.mark.parametrize("n,ratios,sizes", [
    (2594, (0.8, 0.1, 0.1), (2075, 259, 260)),
    (10, (0.8, 0.1, 0.1), (8, 1, 1)),
    (300, (2 / 3, 1 / 6, 1 / 6), (200, 50, 50)),
])
def test_split_sizes(n, ratios, sizes):
    assert split_sizes(n, ratios) == sizes


def test_split_disjoint_cover_and_seeded():
    items = list(range(57))
    tr, va, te = split(items, SplitSpec(seed=3))
    assert sorted(tr + va + te) == items
    assert not (set(tr) & set(va)) and not (set(tr) & set(te)) and not (set(va) & set(te))
    assert split(items, SplitSpec(seed=3)) == (tr, va, te)
    assert split(items, SplitSpec(seed=4)) != (tr, va, te)


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec((0.5, 0.5, 0.5))


def test_to_arrays_layout():
    ds = generate_synthetic(0, 3, 32)
    x, y = to_arrays(ds)
    assert x.shape == (3, 3, 32, 32) and y.shape == (3, 1, 32, 32)
    assert np.array_equal(x[1].transpose(1, 2, 0), ds[1].image)


def test_sample_size_mismatch():
    with pytest.raises(ValueError):
        Sample(np.zeros((4, 4, 3)), np.zeros((5, 5), dtype=bool), "bad")

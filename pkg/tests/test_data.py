from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from cdgan.core import ValueRange
from cdgan.data import (
    DatasetError,
    DatasetManifest,
    Pairing,
    load_dataset,
    make_toy_dataset,
    preprocess,
    save_grid,
    save_image,
    split_ids,
    to_uint8,
    toy_inverse_transform,
    toy_transform,
)


def write_rgb(path: Path, arr):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)


@pytest.fixture
def parallel_root(tmp_path, rng):
    for i in range(5):
        write_rgb(tmp_path / "A" / f"{i:03d}.png", rng.integers(0, 256, (16, 16, 3)))
        write_rgb(tmp_path / "B" / f"{i:03d}.png", np.full((16, 16, 3), 10 * i))
    return tmp_path


class TestPreprocess:
    def test_exact_size_is_not_resampled(self, rng):
        arr = rng.integers(0, 256, (8, 8, 3)).astype(np.uint8)
        img = preprocess(arr, size=8)
        np.testing.assert_allclose(img.data, arr.transpose(2, 0, 1) / 127.5 - 1, atol=1e-6)
        assert img.value_range is ValueRange.SIGNED_UNIT and img.data.dtype == np.float32

    def test_bicubic_resize(self, rng):
        arr = rng.integers(0, 256, (20, 30, 3)).astype(np.uint8)
        ref = np.asarray(Image.fromarray(arr).resize((16, 16), Image.BICUBIC))
        np.testing.assert_allclose(preprocess(arr, 16).data, ref.transpose(2, 0, 1) / 127.5 - 1, atol=1e-6)

    def test_grayscale_replicated(self, tmp_path):
        Image.fromarray(np.full((4, 4), 200, dtype=np.uint8), "L").save(tmp_path / "g.png")
        img = preprocess(tmp_path / "g.png", 4)
        assert img.shape == (3, 4, 4)
        assert np.all(img.data == img.data[0])

    def test_sixteen_bit(self, tmp_path):
        Image.fromarray(np.full((4, 4), 65535, dtype=np.uint16)).save(tmp_path / "n.png")
        assert np.allclose(preprocess(tmp_path / "n.png", 4).data, 1.0)

    def test_undecodable(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not an image")
        with pytest.raises(DatasetError, match="bad.png"):
            preprocess(bad)


class TestLoading:
    def test_parallel_dirs(self, parallel_root):
        m = DatasetManifest("mini", parallel_root, Pairing.PARALLEL_DIRS, 3, 2, image_size=16)
        train, test = load_dataset(m, workers=2)
        assert [p.id for p in train] == ["000", "001", "002"]
        assert [p.id for p in test] == ["003", "004"]
        assert np.allclose(to_uint8(test[1].image_b), 40)

    def test_side_by_side(self, tmp_path):
        for i in range(2):
            arr = np.zeros((8, 16, 3), dtype=np.uint8)
            arr[:, :8] = 50
            arr[:, 8:] = 200
            write_rgb(tmp_path / f"{i}.jpg", arr)
        m = DatasetManifest("sbs", tmp_path, Pairing.SIDE_BY_SIDE_IMAGE, 1, 1, image_size=8)
        train, _ = load_dataset(m)
        assert abs(to_uint8(train[0].image_a).mean() - 50) < 3
        assert abs(to_uint8(train[0].image_b).mean() - 200) < 3
        flipped = DatasetManifest("sbs", tmp_path, Pairing.SIDE_BY_SIDE_IMAGE, 1, 1, a_side="right", image_size=8)
        assert abs(to_uint8(load_dataset(flipped)[0][0].image_a).mean() - 200) < 3

    def test_missing_counterpart_names_the_id(self, parallel_root):
        (parallel_root / "B" / "002.png").unlink()
        m = DatasetManifest("mini", parallel_root, Pairing.PARALLEL_DIRS, 3, 2)
        with pytest.raises(DatasetError, match="'002'"):
            load_dataset(m)

    def test_count_mismatch(self, parallel_root):
        m = DatasetManifest("mini", parallel_root, Pairing.PARALLEL_DIRS, 3, 3)
        with pytest.raises(DatasetError, match="expects"):
            load_dataset(m)

    def test_missing_root(self, tmp_path):
        m = DatasetManifest.for_dataset("facades", tmp_path / "absent")
        with pytest.raises(DatasetError, match="absent"):
            load_dataset(m)

    def test_standard_splits(self):
        assert DatasetManifest.for_dataset("CUHK", ".").total == 188
        assert DatasetManifest.for_dataset("facades", ".").train_count == 400
        assert DatasetManifest.for_dataset("rgb-nir", ".").test_count == 90
        with pytest.raises(DatasetError):
            DatasetManifest.for_dataset("mnist", ".")

    def test_split_order_and_shuffle(self):
        ids = [f"{i}" for i in (3, 1, 2, 0)]
        m = DatasetManifest("x", ".", Pairing.PARALLEL_DIRS, 2, 2)
        assert split_ids(m, ids) == (["0", "1"], ["2", "3"])
        shuffled = DatasetManifest("x", ".", Pairing.PARALLEL_DIRS, 2, 2, shuffle=True, seed=4)
        assert split_ids(shuffled, ids) == split_ids(shuffled, list(reversed(ids)))

    def test_manifest_file(self, parallel_root):
        ini = parallel_root / "mini.ini"
        ini.write_text("[dataset]\nname = mini\nroot = .\npairing = parallel_dirs\n"
                       "train_count = 4\ntest_count = 1\nimage_size = 16\n")
        m = DatasetManifest.from_file(ini)
        assert m.root == parallel_root and m.train_count == 4
        assert len(load_dataset(m)[1]) == 1

    def test_manifest_file_errors(self, tmp_path):
        with pytest.raises(DatasetError):
            DatasetManifest.from_file(tmp_path / "none.ini")
        (tmp_path / "x.ini").write_text("[other]\n")
        with pytest.raises(DatasetError, match="dataset"):
            DatasetManifest.from_file(tmp_path / "x.ini")


class TestToy:
    def test_deterministic_and_ids(self):
        a, b = make_toy_dataset(3, 16, seed=5), make_toy_dataset(3, 16, seed=5)
        assert [p.id for p in a] == ["toy_0000", "toy_0001", "toy_0002"]
        assert all(x.image_a == y.image_a for x, y in zip(a, b))
        assert make_toy_dataset(1, 16, 6)[0].image_a != a[0].image_a

    def test_mapping_is_known(self):
        for p in make_toy_dataset(4, 16, seed=1):
            assert toy_transform(p.image_a) == p.image_b
            assert toy_inverse_transform(p.image_b) == p.image_a

    def test_bad_size(self):
        with pytest.raises(ValueError):
            make_toy_dataset(2, 10)


def test_image_writing(tmp_path, rng):
    p = make_toy_dataset(1, 16)[0]
    path = save_image(p.image_a, tmp_path / "sub" / "a.png")
    back = np.asarray(Image.open(path))
    assert back.shape == (16, 16, 3)
    np.testing.assert_array_equal(back, to_uint8(p.image_a))
    grid = save_grid([[p.image_a, p.image_b], [p.image_b, p.image_a]], tmp_path / "g.png")
    assert Image.open(grid).size == (32, 32)


def test_cuhk_sized_image_resized(tmp_path, rng):
    Image.fromarray(rng.integers(0, 256, (250, 200, 3), dtype=np.uint8)).save(tmp_path / "f.png")
    assert preprocess(tmp_path / "f.png").shape == (3, 256, 256)


def test_toy_shape_contract():
    pairs = make_toy_dataset(64, 64)
    assert len(pairs) == 64
    assert all(p.image_a.shape == p.image_b.shape == (3, 64, 64) for p in pairs)

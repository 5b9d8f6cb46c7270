import numpy as np
import pytest

from dmgan import data as D


def find(seed, caption, limit=2000):
    for i in range(limit):
        s = D.gen_sample(seed, i)
        if s.caption == caption:
            return s
    raise AssertionError(f"no {caption!r} in the first {limit} samples")


def test_deterministic():
    a, b = D.gen_sample(3, 17), D.gen_sample(3, 17)
    np.testing.assert_array_equal(a.image, b.image)
    assert a.caption == b.caption and a.class_id == b.class_id
    assert not np.array_equal(a.image, D.gen_sample(3, 18).image) or a.caption != D.gen_sample(3, 18).caption


def test_red_circle_on_black():
    s = find(0, "a red circle on a black background")
    assert s.image.shape == (3, 64, 64) and s.image.dtype == np.float32
    np.testing.assert_array_equal(s.image[:, 32, 32], [1.0, -1.0, -1.0])
    for y, x in [(0, 0), (0, 63), (63, 0), (63, 63)]:
        np.testing.assert_array_equal(s.image[:, y, x], [-1.0, -1.0, -1.0])
    # two flat colours only, no blending at the edge
    assert {tuple(p) for p in s.image.reshape(3, -1).T} == {(1.0, -1.0, -1.0), (-1.0, -1.0, -1.0)}


def test_circle_mask_matches_scalar_rasterizer():
    cx, cy, r = 30.3, 33.9, 14.2
    mask = D.shape_mask("circle", 64, cx, cy, r)
    for y in range(64):
        for x in range(64):
            assert mask[y, x] == ((x + 0.5 - cx) ** 2 + (y + 0.5 - cy) ** 2 <= r * r)


@pytest.mark.parametrize("shape", D.SHAPES)
def test_every_shape_is_centred_and_bounded(shape):
    mask = D.shape_mask(shape, 64, 32, 32, 16)
    assert mask[32, 32] and not mask[0, 0] and not mask[63, 63]
    assert 50 < mask.sum() < 64 * 64 / 2


def test_captions_describe_the_image():
    for i in range(40):
        s = D.gen_sample(5, i)
        shape, color, bg = D.class_attributes(s.class_id)
        assert s.caption == f"a {D.COLOR_NAMES[color]} {D.SHAPES[shape]} on a {D.BG_NAMES[bg]} background"
        pixels = {tuple(p) for p in s.image.reshape(3, -1).T}
        assert pixels == {D.COLORS[D.COLOR_NAMES[color]], D.BACKGROUNDS[D.BG_NAMES[bg]]}


def test_class_ids_roundtrip():
    assert D.N_CLASSES == 48
    for cid in range(D.N_CLASSES):
        assert D.class_id(*D.class_attributes(cid)) == cid
    assert len({D.caption_for(c) for c in range(D.N_CLASSES)}) == 48


def test_class_histogram_near_uniform():
    ds = D.gen_dataset(1234, 4800, resolution=16)
    counts = np.bincount(ds.class_ids, minlength=48)
    assert counts.min() >= 60 and counts.max() <= 140


def test_dataset_tokens_and_subset(tmp_path):
    ds = D.gen_dataset(2, 12, resolution=16)
    assert ds.images.shape == (12, 3, 16, 16) and ds.tokens.shape == (12, 7)
    vocab = D.build_vocabulary()
    assert vocab.decode(ds.tokens[3]) == ds.captions[3].split()
    # an offset start continues the same stream
    tail = D.gen_dataset(2, 4, resolution=16, start=8)
    np.testing.assert_array_equal(tail.images, ds.images[8:])
    sub = ds.subset([1, 4])
    assert sub.captions == [ds.captions[1], ds.captions[4]]
    D.save_dataset(ds, tmp_path / "d")
    back = D.load_dataset(tmp_path / "d")
    np.testing.assert_array_equal(back.images, ds.images)
    assert back.captions == ds.captions


def test_generation_is_pure():
    ds = D.gen_dataset(2, 3, resolution=16)
    before = ds.images.copy()
    D.downsample(ds.images, 8)
    np.testing.assert_array_equal(ds.images, before)


def test_downsample_is_block_mean():
    img = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(D.downsample(img, 2)[0, 0], [[2.5, 4.5], [10.5, 12.5]])

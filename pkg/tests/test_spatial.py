import numpy as np
import pytest

from spatialtab.docmodel import BBox
from spatialtab.spatial import (
    N_BUCKETS,
    init_spatial,
    spatial_embed,
    spatial_embed_batch,
    spatial_embed_grad,
)


class TestInit:
    def test_dimension_must_divide_by_six(self):
        with pytest.raises(ValueError):
            init_spatial(100)

    def test_table_shapes(self):
        tables = init_spatial(96, seed=0)
        assert tables.tables.shape == (6, N_BUCKETS, 16)
        assert tables.d == 96

    def test_random_normal_statistics(self):
        tables = init_spatial(768, "random_normal", seed=7)
        # one 1001 x 128 table: mean within +-0.002 of 0 at this seed
        sample = tables.tables[0]
        assert abs(sample.mean()) < 0.002
        assert abs(sample.std() - 0.02) < 0.002

    def test_same_seed_identical(self):
        a = init_spatial(96, seed=3)
        b = init_spatial(96, seed=3)
        np.testing.assert_array_equal(a.tables, b.tables)

    def test_sinusoidal_bucket_zero_alternates(self):
        tables = init_spatial(96, "sinusoidal")
        row = tables.tables[0, 0]
        np.testing.assert_allclose(row[0::2], 0.0, atol=1e-7)
        np.testing.assert_allclose(row[1::2], 1.0, atol=1e-7)

    def test_sinusoidal_row_norms_constant(self):
        tables = init_spatial(96, "sinusoidal")
        norms = (tables.tables[2].astype(np.float64) ** 2).sum(axis=1)
        np.testing.assert_allclose(norms, 96 / 12, rtol=1e-5)


class TestEmbed:
    def test_lookup_buckets(self):
        tables = init_spatial(96, seed=0)
        bbox = BBox(100, 200, 300, 250)
        out = spatial_embed(bbox, tables)
        expected = np.concatenate([
            tables.tables[0, 100], tables.tables[1, 200], tables.tables[2, 300],
            tables.tables[3, 250], tables.tables[4, 200], tables.tables[5, 50],
        ])
        np.testing.assert_array_equal(out, expected)

    def test_output_length_768(self):
        tables = init_spatial(768, seed=0)
        out = spatial_embed(BBox(0, 0, 1000, 1000), tables)
        assert out.shape == (768,)
        assert out[:128].shape == (128,)

    def test_identical_boxes_identical_embeddings(self):
        tables = init_spatial(96, seed=0)
        a = spatial_embed(BBox(5, 6, 7, 8), tables)
        b = spatial_embed(BBox(5, 6, 7, 8), tables)
        np.testing.assert_array_equal(a, b)

    def test_batch_matches_single(self):
        tables = init_spatial(96, seed=0)
        boxes = [BBox(1, 2, 3, 4), BBox(10, 20, 110, 220)]
        buckets = np.array(
            [[b.x_min, b.y_min, b.x_max, b.y_max, b.width, b.height] for b in boxes]
        )
        batch = spatial_embed_batch(buckets, tables.tables)
        for i, b in enumerate(boxes):
            np.testing.assert_array_equal(batch[i], spatial_embed(b, tables))


class TestGrad:
    def test_zero_upstream_zero_grad(self):
        tables = init_spatial(96, seed=0)
        grad = spatial_embed_grad(np.zeros(96), BBox(1, 2, 3, 4), tables)
        assert not grad.any()

    def test_one_hot_hits_single_row(self):
        tables = init_spatial(96, seed=0)
        upstream = np.zeros(96)
        upstream[0] = 1.0
        bbox = BBox(123, 0, 456, 0)
        grad = spatial_embed_grad(upstream, bbox, tables)
        assert grad[0, 123, 0] == 1.0
        grad[0, 123, 0] = 0.0
        assert not grad.any()

    def test_at_most_six_rows_touched(self):
        tables = init_spatial(96, seed=0)
        rng = np.random.default_rng(0)
        grad = spatial_embed_grad(rng.normal(size=96), BBox(10, 20, 30, 40), tables)
        touched = {(f, b) for f, b in zip(*np.nonzero(grad.any(axis=2)))}
        assert len(touched) <= 6

    def test_finite_difference_on_random_entry(self):
        rng = np.random.default_rng(5)
        tables = init_spatial(24, seed=5)
        tables.tables = tables.tables.astype(np.float64)
        bbox = BBox(100, 200, 300, 250)
        upstream = rng.normal(size=24)

        def loss():
            return float(spatial_embed(bbox, tables) @ upstream)

        grad = spatial_embed_grad(upstream, bbox, tables)
        h = 1e-3
        for f, b in [(0, 100), (4, 200), (5, 50)]:
            c = int(rng.integers(0, 4))
            orig = tables.tables[f, b, c]
            tables.tables[f, b, c] = orig + h
            up = loss()
            tables.tables[f, b, c] = orig - h
            down = loss()
            tables.tables[f, b, c] = orig
            fd = (up - down) / (2 * h)
            assert abs(fd - grad[f, b, c]) / max(abs(fd), 1e-9) < 1e-4

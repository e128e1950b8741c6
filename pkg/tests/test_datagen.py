"""Procedural dataset generation: determinism, layout, pairing, bank."""

import dataclasses

import numpy as np
import pytest

from conftest import tiny_config
from fovalign.datagen import generate_dataset, load_dataset, render_sample
from fovalign.pixmap import read_pixmap, write_pixmap
from fovalign.providers import SyntheticProvider, derive_noise_seed, save_embedding_bank


@pytest.fixture(scope="module")
def generated():
    return generate_dataset(tiny_config())


def _style():
    return {
        "background": np.array([0.1, 0.2, 0.3]),
        "blobs": [
            {"kind": "circle", "center": np.array([0.5, 0.5]), "radius": 0.2,
             "color": np.array([0.9, 0.1, 0.1])},
            {"kind": "square", "center": np.array([0.3, 0.7]), "radius": 0.15,
             "color": np.array([0.2, 0.8, 0.3])},
        ],
    }


class TestRenderSample:
    def test_shape_and_range(self):
        img = render_sample(_style(), np.random.default_rng(0), 32)
        assert img.shape == (3, 32, 32)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_deterministic_for_equal_rng_state(self):
        a = render_sample(_style(), np.random.default_rng(5), 16)
        b = render_sample(_style(), np.random.default_rng(5), 16)
        np.testing.assert_array_equal(a, b)

    def test_jitter_changes_rendering(self):
        a = render_sample(_style(), np.random.default_rng(1), 16)
        b = render_sample(_style(), np.random.default_rng(2), 16)
        assert not np.array_equal(a, b)

    def test_quantized_to_8bit_grid(self):
        img = render_sample(_style(), np.random.default_rng(3), 16)
        np.testing.assert_array_equal(img * 255.0, np.round(img * 255.0))

    def test_blobs_land_on_canvas(self):
        img = render_sample(_style(), np.random.default_rng(4), 32)
        background = np.array([0.1, 0.2, 0.3])
        off_background = np.any(
            np.abs(img - background[:, None, None]) > 0.1, axis=0
        )
        assert off_background.sum() > 20  # the shapes actually painted pixels


class TestGenerate:
    def test_deterministic(self, generated):
        again = generate_dataset(tiny_config())
        a, b = generated.dataset, again.dataset
        assert len(a.images) == len(b.images)
        for x, y in zip(a.images, b.images):
            np.testing.assert_array_equal(x, y)
        np.testing.assert_array_equal(a.neural, b.neural)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert a.splits == b.splits
        for level in generated.bank.kernel_levels:
            np.testing.assert_array_equal(
                generated.bank.features[level], again.bank.features[level]
            )

    def test_data_seed_changes_everything(self):
        cfg = tiny_config()
        other = dataclasses.replace(
            cfg, data=dataclasses.replace(cfg.data, seed=cfg.data.seed + 1)
        )
        a = generate_dataset(cfg).dataset
        b = generate_dataset(other).dataset
        assert not np.array_equal(a.images[0], b.images[0])
        assert not np.array_equal(a.neural, b.neural)

    def test_split_layout(self, generated):
        cfg = tiny_config()
        d = generated.dataset
        train_classes = cfg.data.classes - cfg.data.test_classes
        n_train = train_classes * cfg.data.train_samples_per_class
        assert d.sample_count == n_train + cfg.data.test_classes
        assert d.splits[:n_train] == ["train"] * n_train
        assert d.splits[n_train:] == ["test"] * cfg.data.test_classes
        # training labels repeat per class; each test class appears once
        np.testing.assert_array_equal(
            d.labels[:n_train],
            np.repeat(np.arange(train_classes), cfg.data.train_samples_per_class),
        )
        np.testing.assert_array_equal(
            d.labels[n_train:], np.arange(train_classes, cfg.data.classes)
        )

    def test_train_and_test_classes_disjoint(self, generated):
        d = generated.dataset
        train_labels = set(d.labels[d.train_indices()].tolist())
        test_labels = set(d.labels[d.test_indices()].tolist())
        assert train_labels.isdisjoint(test_labels)

    def test_same_class_samples_share_style(self, generated):
        # two renderings of one class differ only by jitter: much closer
        # to each other than to a different class
        d = generated.dataset
        same = np.abs(d.images[0] - d.images[1]).mean()
        other = d.train_indices()[d.labels[d.train_indices()] == 1][0]
        cross = np.abs(d.images[0] - d.images[other]).mean()
        assert same < cross

    def test_neural_is_a_shared_linear_map_of_clean_embeddings(self):
        # with the pairing noise off, every neural vector must be the same
        # linear function of its clean-image embedding: the least-squares
        # map fits all samples (train and test alike) with zero residual
        cfg = tiny_config()
        cfg = dataclasses.replace(
            cfg, data=dataclasses.replace(cfg.data, neural_noise=0.0)
        )
        out = generate_dataset(cfg)
        from fovalign.providers import SyntheticEncoder

        encoder = SyntheticEncoder(cfg.provider.dim_feature, cfg.provider.seed)
        clean = np.stack([encoder.encode(img) for img in out.dataset.images])
        mapping, residual, rank, _ = np.linalg.lstsq(clean, out.dataset.neural, rcond=None)
        fitted = clean @ mapping
        np.testing.assert_allclose(fitted, out.dataset.neural, atol=1e-9)

    def test_pairing_noise_perturbs_neural(self, generated):
        cfg = tiny_config()
        quiet = dataclasses.replace(
            cfg, data=dataclasses.replace(cfg.data, neural_noise=0.0)
        )
        clean = generate_dataset(quiet).dataset
        delta = generated.dataset.neural - clean.neural
        observed = delta.std()
        assert 0.5 * cfg.data.neural_noise < observed < 2.0 * cfg.data.neural_noise


class TestBank:
    def test_levels_sorted_and_match_config(self, generated):
        cfg = tiny_config()
        assert generated.bank.kernel_levels == sorted(cfg.data.bank_levels)

    def test_rows_replay_the_live_encoder(self, generated):
        cfg = tiny_config()
        provider = SyntheticProvider(
            cfg.transforms, cfg.views, cfg.provider.dim_feature, cfg.provider.seed
        )
        index = 3
        image = generated.dataset.images[index]
        noise_seed = derive_noise_seed(cfg.data.seed + 4, index, 0)
        for level in generated.bank.kernel_levels:
            want = np.stack([
                provider.view_feature(name, image, level, noise_seed)
                for name in provider.view_names
            ]).astype(np.float32)
            np.testing.assert_array_equal(generated.bank.features[level][index], want)

    def test_kernel_independent_views_shared_across_levels(self, generated):
        bank = generated.bank
        levels = bank.kernel_levels
        cfg = tiny_config()
        names = cfg.views.enabled()
        for i in range(0, bank.sample_count, 7):
            for row, name in enumerate(names):
                a = bank.features[levels[0]][i, row]
                b = bank.features[levels[-1]][i, row]
                if name == "foveated":
                    assert not np.array_equal(a, b), f"sample {i}"
                else:
                    np.testing.assert_array_equal(a, b)

    def test_bank_mirrors_dataset_metadata(self, generated):
        bank, d = generated.bank, generated.dataset
        np.testing.assert_array_equal(bank.labels, d.labels)
        assert bank.splits == d.splits
        assert bank.tag == d.tag
        np.testing.assert_allclose(bank.neural, d.neural, atol=1e-6)  # float32 storage


class TestLoadDataset:
    def test_round_trip_through_directory(self, generated, tmp_path):
        save_embedding_bank(tmp_path / "bank.bicp", generated.bank)
        images_dir = tmp_path / "images"
        images_dir.mkdir()
        for i, image in enumerate(generated.dataset.images):
            write_pixmap(images_dir / f"sample_{i:05d}.ppm", image)

        loaded = load_dataset(tmp_path)
        # images are quantized at render time, so the pixmap round trip
        # is exact; neural vectors pass through the bank's float32
        for a, b in zip(loaded.images, generated.dataset.images):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(
            loaded.neural, generated.dataset.neural.astype(np.float32).astype(np.float64)
        )
        np.testing.assert_array_equal(loaded.labels, generated.dataset.labels)
        assert loaded.splits == generated.dataset.splits
        assert loaded.tag == generated.dataset.tag

    def test_without_images(self, generated, tmp_path):
        save_embedding_bank(tmp_path / "bank.bicp", generated.bank)
        loaded = load_dataset(tmp_path, with_images=False)
        assert loaded.images is None
        assert loaded.sample_count == generated.dataset.sample_count

import numpy as np
import pytest

from tripletsr.datasets import (
    HIGH_RES,
    ImageStore,
    PreparedDataset,
    build_resolution_sets,
    load_image,
    sample_triplets,
    save_image,
    synthetic_degrade,
)
from tripletsr.errors import DataError
from tripletsr.synthetic import build_corpus
from tripletsr.upsamplers import resize

from oracles import direct_resize


def test_png_roundtrip_is_exact_on_8bit_grid(tmp_path, rng):
    img = np.rint(rng.uniform(size=(16, 16, 3)) * 255) / 255.0
    path = tmp_path / "x.png"
    save_image(path, img)
    assert np.array_equal(load_image(path), img)


def test_build_counts(tmp_path):
    corpus = build_corpus(tmp_path / "c", n_identities=4, images_per_identity=3, seed=1)
    ds = build_resolution_sets(corpus, tmp_path / "d", [14, 112], seed=0)
    total = len(ds.train.entries) + len(ds.test.entries)
    assert total == 4 * 3 * 2  # identities x images x resolutions
    idents = set(ds.train.identities()) | set(ds.test.identities())
    assert len(idents) == 4


def test_train_test_identities_disjoint(tiny_dataset):
    train_ids = set(tiny_dataset.train.identities())
    test_ids = set(tiny_dataset.test.identities())
    assert train_ids
    assert test_ids
    assert not (train_ids & test_ids)


def test_manifest_roundtrip(tiny_dataset):
    reloaded = PreparedDataset.load(tiny_dataset.root)
    assert reloaded.train.entries == tiny_dataset.train.entries
    assert reloaded.test.entries == tiny_dataset.test.entries
    assert reloaded.train.triplets == tiny_dataset.train.triplets
    assert reloaded.seed == tiny_dataset.seed


def test_prepare_deterministic(tmp_path):
    corpus = build_corpus(tmp_path / "c", n_identities=3, images_per_identity=3, seed=9)
    d1 = build_resolution_sets(corpus, tmp_path / "d1", [28, 112], seed=7)
    d2 = build_resolution_sets(corpus, tmp_path / "d2", [28, 112], seed=7)
    assert d1.train.entries == d2.train.entries
    assert d1.train.triplets == d2.train.triplets
    m1 = (d1.root / "manifest_train.csv").read_bytes()
    m2 = (d2.root / "manifest_train.csv").read_bytes()
    assert m1 == m2
    for e in d1.train.entries[:8]:
        assert np.array_equal(
            load_image(d1.root / e.path), load_image(d2.root / e.path)
        )


def test_constant_gray_stays_constant(tmp_path):
    corpus = tmp_path / "c"
    for ident in ("a", "b"):
        (corpus / ident).mkdir(parents=True)
        for j in range(2):
            save_image(corpus / ident / f"{j}.png", np.full((112, 112, 3), 128 / 255.0))
    ds = build_resolution_sets(corpus, tmp_path / "d", [14, 112], seed=0)
    entry = next(e for e in ds.train.entries if e.resolution == 14)
    img = load_image(ds.root / entry.path)
    assert np.array_equal(img, np.full((14, 14, 3), 128 / 255.0))


def test_checkerboard_downscale_matches_oracle(tmp_path):
    yy, xx = np.mgrid[0:112, 0:112]
    board = ((yy // 8 + xx // 8) % 2).astype(np.float64)
    board = np.stack([board] * 3, axis=-1)
    corpus = tmp_path / "c"
    for ident in ("a", "b"):
        (corpus / ident).mkdir(parents=True)
        for j in range(2):
            save_image(corpus / ident / f"{j}.png", board)
    ds = build_resolution_sets(corpus, tmp_path / "d", [56, 112], seed=0)
    entry = next(e for e in ds.train.entries if e.resolution == 56)
    got = load_image(ds.root / entry.path)
    want = direct_resize(board, 56, 56, "bicubic")
    # stored image quantizes to the 8-bit grid
    assert np.abs(got - want).max() <= 0.5 / 255.0 + 1e-12


def test_degrade_constant():
    img = np.full((112, 112, 3), 0.25)
    out = synthetic_degrade(img, 28)
    assert out.shape == (28, 28, 3)
    assert np.abs(out - 0.25).max() < 1e-12


def test_degrade_ramp_matches_analytic():
    w = 112
    ramp = np.tile(((np.arange(w) + 0.5) / w)[None, :, None], (w, 1, 3))
    out = synthetic_degrade(ramp, 56)
    analytic = (np.arange(56) + 0.5) / 56.0
    assert np.abs(out[20, 1:-1, 0] - analytic[1:-1]).max() < 1e-6


def test_degrade_shares_resize_kernel(rng):
    img = rng.uniform(size=(112, 112, 3))
    assert np.array_equal(synthetic_degrade(img, 28), resize(img, 28, 28, "bicubic"))


def test_degrade_rejects_upscale():
    img = np.zeros((112, 112, 3))
    with pytest.raises(ValueError, match="smaller than source"):
        synthetic_degrade(img, 112)


def test_degraded_values_in_unit_interval(tiny_dataset):
    store = ImageStore(tiny_dataset.root)
    for e in tiny_dataset.train.entries[:12]:
        img = store.load(e.path)
        assert img.min() >= 0.0
        assert img.max() <= 1.0


def test_triplet_invariants(tiny_dataset):
    triplets = tiny_dataset.train.triplets[14]
    assert triplets
    by_path = {e.path: e for e in tiny_dataset.train.entries}
    for t in triplets:
        anchor = by_path[t.anchor]
        positive = by_path[t.positive]
        negative = by_path[t.negative]
        assert anchor.identity == positive.identity
        assert anchor.identity != negative.identity
        assert anchor.resolution == 14
        assert positive.resolution == HIGH_RES
        assert negative.resolution == HIGH_RES
        assert anchor.source_id != positive.source_id


def test_sample_triplets_deterministic(tiny_dataset):
    a = sample_triplets(tiny_dataset.train, 28, 100, seed=7)
    b = sample_triplets(tiny_dataset.train, 28, 100, seed=7)
    assert a == b
    c = sample_triplets(tiny_dataset.train, 28, 100, seed=8)
    assert a != c


def test_sample_triplets_invariants_exhaustive(tmp_path):
    corpus = build_corpus(tmp_path / "c", n_identities=2, images_per_identity=2, seed=2)
    ds = build_resolution_sets(
        corpus, tmp_path / "d", [28, 112], seed=0, test_fraction=0.0
    )
    triplets = sample_triplets(ds.train, 28, 100, seed=3)
    assert len(triplets) == 100
    by_path = {e.path: e for e in ds.train.entries}
    for t in triplets:
        assert by_path[t.anchor].identity == by_path[t.positive].identity
        assert by_path[t.anchor].identity != by_path[t.negative].identity


def test_single_identity_raises(tmp_path):
    corpus = tmp_path / "c"
    (corpus / "only").mkdir(parents=True)
    for j in range(3):
        save_image(corpus / "only" / f"{j}.png", np.full((112, 112, 3), 0.5))
    ds = build_resolution_sets(corpus, tmp_path / "d", [28, 112], seed=0)
    with pytest.raises(DataError, match="negative identity"):
        sample_triplets(ds.train, 28, 10, seed=0)


def test_unreadable_image_skipped(tmp_path, caplog):
    corpus = tmp_path / "c"
    for ident in ("a", "b"):
        (corpus / ident).mkdir(parents=True)
        for j in range(2):
            save_image(corpus / ident / f"{j}.png", np.full((112, 112, 3), 0.3))
    (corpus / "a" / "broken.png").write_bytes(b"this is not a png")
    ds = build_resolution_sets(corpus, tmp_path / "d", [112], seed=0)
    total = len(ds.train.entries) + len(ds.test.entries)
    assert total == 4  # the broken file is skipped, not fatal
    assert any("unreadable" in r.message for r in caplog.records)


def test_missing_corpus_raises():
    with pytest.raises(DataError, match="corpus"):
        build_resolution_sets("/nonexistent/corpus", "/tmp/never", [112], seed=0)

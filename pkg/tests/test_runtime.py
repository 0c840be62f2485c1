"""Shuffle round trips, CutMix accounting, model/data builders."""

import numpy as np
import numpy.testing as npt
import pytest

from conftest import random_blocks, tiny_config
from pesl.data import Sample, make_blobs
from pesl.encoder import stack_forward
from pesl.errors import ConfigError
from pesl.permutation import identity, make_key, sample
from pesl.runtime import (
    authorize,
    build_datasets,
    build_model,
    cutmix,
    deauthorize,
    key_for_mode,
    shuffle_feature,
    shuffle_gradient,
    unshuffle_gradient,
    unshuffle_output,
)


def test_shuffle_roundtrips_are_bit_exact():
    rng = np.random.default_rng(10001)
    for _ in range(30):
        p, d = (int(x) for x in rng.integers(2, 12, 2))
        z = rng.standard_normal((p, d))
        pr, pc = sample(p, rng), sample(d, rng)
        zs = shuffle_feature(z, pr, pc)
        npt.assert_array_equal(unshuffle_output(zs, pr, pc), z)
        g = rng.standard_normal((p, d))
        npt.assert_array_equal(
            unshuffle_gradient(shuffle_gradient(g, pr, pc), pr, pc), g
        )


def test_cutmix_mask_is_exact_and_labels_conserve_mass():
    rng = np.random.default_rng(10002)
    batch = make_blobs(6, 8, 8, 2, 3, np.random.default_rng(5))
    mixed = cutmix(batch, rng, prob=1.0, n_classes=3)
    assert len(mixed) == 6
    for m in mixed:
        src = batch[m.source]
        x0, y0, r_w, r_h = m.rect
        inside = np.zeros((8, 8), dtype=bool)
        inside[y0 : y0 + r_h, x0 : x0 + r_w] = True
        partner = batch[m.partner] if m.partner is not None else src
        # outside the rectangle: source pixels, bit for bit; inside:
        # partner pixels, bit for bit
        npt.assert_array_equal(m.image[:, ~inside], src.image[:, ~inside])
        npt.assert_array_equal(m.image[:, inside], partner.image[:, inside])
        area = (r_w * r_h) / 64.0
        assert m.lam == 1.0 - area
        assert abs(m.soft_label.sum() - 1.0) < 1e-12
        want = np.zeros(3)
        want[src.label] += m.lam
        want[partner.label] += area
        npt.assert_allclose(m.soft_label, want, atol=1e-15)
        assert m.partner != m.source


def test_cutmix_prob_zero_is_identity():
    rng = np.random.default_rng(10003)
    batch = make_blobs(4, 6, 6, 1, 2, np.random.default_rng(6))
    mixed = cutmix(batch, rng, prob=0.0, n_classes=2)
    for s, m in zip(batch, mixed):
        npt.assert_array_equal(m.image, s.image)
        assert m.lam == 1.0
        assert m.partner is None
        assert m.soft_label[s.label] == 1.0


def test_cutmix_rejects_unmixable_batches():
    rng = np.random.default_rng(10004)
    batch = make_blobs(1, 6, 6, 1, 2, np.random.default_rng(7))
    with pytest.raises(ConfigError):
        cutmix(batch, rng, prob=0.5, n_classes=2)
    with pytest.raises(ConfigError):
        cutmix(batch, rng, prob=1.5, n_classes=2)
    # batch of one is fine when mixing is off
    assert len(cutmix(batch, rng, prob=0.0, n_classes=2)) == 1


def test_key_for_mode_per_mode():
    assert key_for_mode(tiny_config("vanilla")) is None
    rs = key_for_mode(tiny_config("row_shuffle"))
    assert rs.p_col.is_identity() and not rs.column_shuffled()
    rcs = key_for_mode(tiny_config("row_column_shuffle"))
    assert rcs.column_shuffled()
    npt.assert_array_equal(
        key_for_mode(tiny_config("row_shuffle")).row_perm(1, 2).indices,
        rs.row_perm(1, 2).indices,
    )


def test_authorize_deauthorize_is_bit_exact_and_changes_behavior():
    rng = np.random.default_rng(10005)
    blocks = random_blocks(rng, 2, 6, "full")
    pc = sample(6, rng)
    keyed = authorize(blocks, pc)
    z = rng.standard_normal((3, 6))
    out_plain, _ = stack_forward(blocks, z)
    out_keyed, _ = stack_forward(keyed, z)
    assert np.abs(out_plain - out_keyed).max() > 1e-6

    back = deauthorize(keyed, pc)
    for a, b in zip(blocks, back):
        npt.assert_array_equal(a.w_q, b.w_q)
        npt.assert_array_equal(a.w_2, b.w_2)
        npt.assert_array_equal(a.b_1, b.b_1)
        npt.assert_array_equal(a.gamma2, b.gamma2)
    assert authorize(blocks, identity(6))[0].w_q is not blocks[0].w_q


def test_build_datasets_synthetic_split_and_determinism():
    cfg = tiny_config()
    train, held = build_datasets(cfg)
    assert len(train) == 24 and len(held) == 4
    train2, held2 = build_datasets(cfg)
    npt.assert_array_equal(train[0].image, train2[0].image)
    npt.assert_array_equal(held[-1].image, held2[-1].image)
    # train and eval streams are independent draws
    assert not np.array_equal(train[0].image, held[0].image)


def test_build_datasets_csv_holds_out_last_fifth(tmp_path):
    from pesl.data import save_csv

    samples = make_blobs(10, 8, 8, 1, 2, np.random.default_rng(8))
    path = str(tmp_path / "train.csv")
    save_csv(path, samples)
    cfg = tiny_config(data__kind="csv", data__path=path, n=10)
    train, held = build_datasets(cfg)
    assert len(train) == 8 and len(held) == 2
    npt.assert_array_equal(held[0].image, samples[8].image)


def test_build_model_streams_are_separate_and_deterministic():
    cfg = tiny_config()
    blocks, edge = build_model(cfg)
    blocks2, edge2 = build_model(cfg)
    npt.assert_array_equal(blocks[0].w_q, blocks2[0].w_q)
    npt.assert_array_equal(edge.w_embed, edge2.w_embed)
    assert blocks[0].variant == "full"
    assert edge.pos_embed is None
    # a different seed moves both streams
    cfg2 = tiny_config(seed=12)
    blocks3, edge3 = build_model(cfg2)
    assert np.abs(blocks3[0].w_q - blocks[0].w_q).max() > 0
    assert np.abs(edge3.w_embed - edge.w_embed).max() > 0


def test_shuffled_cloud_view_differs_from_plain():
    # what leaves the edge under a key never equals the plain feature
    cfg = tiny_config("row_column_shuffle")
    key = key_for_mode(cfg)
    rng = np.random.default_rng(10006)
    z = rng.standard_normal((cfg.model.p, cfg.model.d))
    pr = key.row_perm(0, 0)
    zs = shuffle_feature(z, pr, key.p_col)
    assert not np.array_equal(zs, z)
    npt.assert_array_equal(unshuffle_output(zs, pr, key.p_col), z)

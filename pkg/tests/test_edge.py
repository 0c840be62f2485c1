"""Edge-side model: patching, embedding, head, loss, persistence."""

import numpy as np
import numpy.testing as npt
import pytest

from conftest import fd_grad, rel_err
from pesl.edge import (
    cross_entropy,
    embed_tokens,
    extract_patches,
    head_backward,
    head_forward,
    init_edge,
    load_edge,
    one_hot,
    patch_embed,
    patch_embed_backward,
    patch_embed_input_grad,
    patches_to_image,
    save_edge,
)
from pesl.errors import (
    ContractError,
    DecodeError,
    DomainError,
    ShapeError,
)

FD_TOL = 1e-5


def test_patch_layout_is_raster_then_channel_major():
    # 1 channel, 4x4 image, 2x2 patches: patch k holds the 2x2 tile at
    # grid position (k // 2, k % 2), rows before columns inside it
    img = np.arange(16, dtype=np.float64).reshape(1, 4, 4)
    patches = extract_patches(img, 2, 2)
    npt.assert_array_equal(patches[0], [0, 1, 4, 5])
    npt.assert_array_equal(patches[1], [2, 3, 6, 7])
    npt.assert_array_equal(patches[2], [8, 9, 12, 13])
    npt.assert_array_equal(patches[3], [10, 11, 14, 15])


def test_patch_layout_channel_major_within_patch():
    img = np.stack([
        np.arange(4, dtype=np.float64).reshape(2, 2),
        10 + np.arange(4, dtype=np.float64).reshape(2, 2),
    ])
    patches = extract_patches(img, 2, 2)
    npt.assert_array_equal(patches, [[0, 1, 2, 3, 10, 11, 12, 13]])


def test_extract_and_scatter_are_exact_inverses():
    rng = np.random.default_rng(5001)
    for _ in range(30):
        c = int(rng.integers(1, 4))
        ph, pw = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        gh, gw = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        img = rng.standard_normal((c, gh * ph, gw * pw))
        patches = extract_patches(img, ph, pw)
        assert patches.shape == (gh * gw, c * ph * pw)
        back = patches_to_image(patches, c, gh * ph, gw * pw, ph, pw)
        npt.assert_array_equal(back, img)


def test_extract_patches_contracts():
    with pytest.raises(ShapeError):
        extract_patches(np.zeros((4, 4)), 2, 2)
    with pytest.raises(ShapeError):
        extract_patches(np.zeros((1, 4, 4)), 3, 2)
    bad = np.zeros((1, 4, 4))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ContractError):
        extract_patches(bad, 2, 2)


def test_embed_head_and_loss_gradients_match_fd():
    rng = np.random.default_rng(5002)
    for pos in (False, True):
        w = init_edge(4, 4, 2, 2, 2, 5, 3, rng, position_embedding=pos)
        img = rng.uniform(0, 1, (2, 4, 4))
        label = 1

        def loss():
            z0 = patch_embed(w, img)
            pooled, logits = head_forward(w, z0)
            return cross_entropy(logits, label)[0]

        patches = extract_patches(img, 2, 2)
        z0 = patch_embed(w, img)
        pooled, logits = head_forward(w, z0)
        _, d_logits = cross_entropy(logits, label)
        d_w_head, d_b_head, d_a = head_backward(w, pooled, d_logits, z0.shape[0])
        d_w_embed, d_b_embed, d_pos = patch_embed_backward(w, patches, d_a)

        assert rel_err(d_w_head, fd_grad(loss, w.w_head)) < FD_TOL
        assert rel_err(d_b_head, fd_grad(loss, w.b_head)) < FD_TOL
        assert rel_err(d_w_embed, fd_grad(loss, w.w_embed)) < FD_TOL
        assert rel_err(d_b_embed, fd_grad(loss, w.b_embed)) < FD_TOL
        if pos:
            assert rel_err(d_pos, fd_grad(loss, w.pos_embed)) < FD_TOL
        else:
            assert d_pos is None
        d_img = patch_embed_input_grad(w, d_a, 2, 4, 4)
        assert rel_err(d_img, fd_grad(loss, img)) < FD_TOL


def test_head_is_row_permutation_invariant_up_to_rounding():
    rng = np.random.default_rng(5003)
    w = init_edge(4, 4, 1, 2, 2, 6, 3, rng)
    a = rng.standard_normal((4, 6))
    _, base = head_forward(w, a)
    for _ in range(10):
        _, other = head_forward(w, a[rng.permutation(4)])
        npt.assert_allclose(other, base, rtol=0, atol=1e-12)


def test_cross_entropy_soft_labels_and_contracts():
    logits = np.array([0.3, -0.2, 1.1])
    l_int, g_int = cross_entropy(logits, 2)
    l_soft, g_soft = cross_entropy(logits, one_hot(2, 3))
    assert l_int == l_soft
    npt.assert_array_equal(g_int, g_soft)
    # gradient sums to zero against any probability-vector target
    mix = np.array([0.25, 0.5, 0.25])
    _, g_mix = cross_entropy(logits, mix)
    assert abs(g_mix.sum()) < 1e-12
    with pytest.raises(DomainError):
        one_hot(3, 3)
    with pytest.raises(ContractError):
        cross_entropy(logits, np.array([0.5, 0.5, 0.5]))
    with pytest.raises(ShapeError):
        cross_entropy(logits, np.array([1.0, 0.0]))
    with pytest.raises(ContractError):
        cross_entropy(np.array([1.0, np.inf]), 0)


def test_cross_entropy_matches_direct_formula():
    rng = np.random.default_rng(5004)
    for _ in range(25):
        n = int(rng.integers(2, 7))
        logits = rng.uniform(-8, 8, n)
        label = int(rng.integers(0, n))
        loss, grad = cross_entropy(logits, label)
        probs = np.exp(logits) / np.exp(logits).sum()
        assert abs(loss + np.log(probs[label])) < 1e-9
        npt.assert_allclose(grad, probs - one_hot(label, n), atol=1e-12)


def test_embed_tokens_shape_contracts():
    rng = np.random.default_rng(5005)
    w = init_edge(4, 4, 1, 2, 2, 5, 2, rng)
    with pytest.raises(ShapeError):
        embed_tokens(w, rng.standard_normal((4, 3)))
    with pytest.raises(ShapeError):
        head_forward(w, rng.standard_normal((4, 6)))


def test_edge_file_roundtrip_and_errors(tmp_path):
    rng = np.random.default_rng(5006)
    for pos in (False, True):
        w = init_edge(8, 8, 3, 4, 2, 7, 4, rng, position_embedding=pos)
        path = str(tmp_path / f"edge{int(pos)}.bin")
        save_edge(path, w)
        back = load_edge(path)
        npt.assert_array_equal(back.w_embed, w.w_embed)
        npt.assert_array_equal(back.b_embed, w.b_embed)
        npt.assert_array_equal(back.w_head, w.w_head)
        npt.assert_array_equal(back.b_head, w.b_head)
        assert (back.patch_h, back.patch_w) == (4, 2)
        if pos:
            npt.assert_array_equal(back.pos_embed, w.pos_embed)
        else:
            assert back.pos_embed is None

    raw = open(str(tmp_path / "edge0.bin"), "rb").read()
    trunc = tmp_path / "trunc.bin"
    trunc.write_bytes(raw[:-4])
    with pytest.raises(DecodeError):
        load_edge(str(trunc))
    trailing = tmp_path / "trail.bin"
    trailing.write_bytes(raw + b"\xff")
    with pytest.raises(DecodeError):
        load_edge(str(trailing))
    badver = tmp_path / "badver.bin"
    badver.write_bytes(b"\x07" + raw[1:])
    with pytest.raises(DecodeError):
        load_edge(str(badver))

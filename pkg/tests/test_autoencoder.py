"""Embedding, SSM encoder blocks, decoder, loss masking, reconstruction."""

import math

import numpy as np
import pytest

from cadseq import seqmodel as sm
from cadseq.autoencoder import (
    AEConfig,
    Autoencoder,
    InvalidPredictionError,
    Reconstructor,
    ae_loss,
    discretize_ssm,
    prediction_to_sequence,
    reconstruct,
)
from cadseq.numcore import Tensor, gradcheck, mse, no_grad, ssm_scan, tsum, mul


TINY = AEConfig(d_model=16, n_encoder_blocks=1, n_decoder_blocks=1, latent_dim=8,
                n_heads=2, ffn_dim=24, state_dim=3, dropout=0.0, dtype="float64")


@pytest.fixture(scope="module")
def tiny_model():
    return Autoencoder(TINY, seed=0)


@pytest.fixture(scope="module")
def tiny_inputs():
    seqs = [sm.synthesize_sequence(i, 64) for i in range(2)]
    return Autoencoder.arrays_from_sequences(seqs)


# -- embedding ------------------------------------------------------------------


def test_embed_shapes(tiny_model, tiny_inputs):
    types, params = tiny_inputs
    with no_grad():
        emb = tiny_model.embed(types, params)
    assert emb.shape == (2, 256, TINY.d_model)


def test_embed_zero_weights(tiny_inputs):
    types, params = tiny_inputs
    model = Autoencoder(TINY, seed=1)
    for name in ("embed.cmd", "embed.pb", "embed.pa", "embed.pos"):
        model.params[name].data = np.zeros_like(model.params[name].data)
    with no_grad():
        emb = model.embed(types, params)
    assert np.all(emb.data == 0.0)


def test_embed_locality(tiny_model, tiny_inputs):
    types, params = tiny_inputs
    t2 = types.copy()
    p2 = params.copy()
    k = 3
    t2[0, k] = (t2[0, k] + 1) % 5
    p2[0, k] = -1
    p2[0, k, 0] = 7
    with no_grad():
        a = tiny_model.embed(types, params).data
        b = tiny_model.embed(t2, p2).data
    diff = np.abs(a - b).sum(axis=-1)
    assert diff[0, k] > 0
    mask = np.ones((2, 256), dtype=bool)
    mask[0, k] = False
    assert np.all(diff[mask] == 0.0)


# -- discretization and scan ------------------------------------------------------


def test_discretize_limits():
    dt = Tensor(np.full((1, 1, 1), 1e-9))
    a = Tensor(np.array([[-1.0]]))
    bsel = Tensor(np.ones((1, 1, 1)))
    abar, bbar = discretize_ssm(dt, a, bsel)
    assert abar.data[0, 0, 0, 0] == pytest.approx(1.0, abs=1e-8)
    assert bbar.data[0, 0, 0, 0] == pytest.approx(0.0, abs=1e-8)

    # A = -1, dt = ln 2 -> abar = exp(-ln 2) = 0.5.
    dt = Tensor(np.full((1, 1, 1), math.log(2.0)))
    abar, _ = discretize_ssm(dt, a, bsel)
    assert abar.data[0, 0, 0, 0] == pytest.approx(0.5, rel=1e-12)

    rng = np.random.default_rng(0)
    dt = Tensor(rng.uniform(0.001, 3.0, (1, 5, 4)))
    a = Tensor(-rng.uniform(0.01, 5.0, (4, 3)))
    bsel = Tensor(rng.standard_normal((1, 5, 3)))
    abar, _ = discretize_ssm(dt, a, bsel)
    assert np.all(abar.data > 0.0) and np.all(abar.data < 1.0)


def test_scan_prefix_sums():
    # abar = bbar = c = 1 with scalar state turns the scan into prefix sums.
    T = 6
    x = Tensor(np.arange(1.0, T + 1).reshape(1, T, 1))
    ones = Tensor(np.ones((1, T, 1, 1)))
    c = Tensor(np.ones((1, T, 1)))
    y = ssm_scan(x, ones, ones, c).data[0, :, 0]
    np.testing.assert_allclose(y, np.cumsum(np.arange(1.0, T + 1)), rtol=1e-14)


def test_scan_zero_input():
    T = 4
    z = Tensor(np.zeros((1, T, 2)))
    abar = Tensor(np.random.default_rng(0).uniform(0.1, 0.9, (1, T, 2, 3)))
    bbar = Tensor(np.ones((1, T, 2, 3)))
    c = Tensor(np.ones((1, T, 3)))
    assert np.all(ssm_scan(z, abar, bbar, c).data == 0.0)


def test_scan_causality():
    rng = np.random.default_rng(2)
    T = 8
    x = rng.standard_normal((1, T, 2))
    abar = rng.uniform(0.1, 0.9, (1, T, 2, 3))
    bbar = rng.standard_normal((1, T, 2, 3))
    c = rng.standard_normal((1, T, 3))
    base = ssm_scan(Tensor(x), Tensor(abar), Tensor(bbar), Tensor(c)).data
    x2 = x.copy()
    x2[0, 5] += 10.0
    pert = ssm_scan(Tensor(x2), Tensor(abar), Tensor(bbar), Tensor(c)).data
    np.testing.assert_array_equal(base[0, :5], pert[0, :5])
    assert not np.allclose(base[0, 5:], pert[0, 5:])


def test_scan_matches_dense_recurrence_oracle():
    # Acceptance: 100 random instances (T<=32, N<=8) against the dense
    # unrolled recurrence within 1e-10.
    rng = np.random.default_rng(42)
    for _ in range(100):
        T = int(rng.integers(1, 33))
        E = int(rng.integers(1, 4))
        N = int(rng.integers(1, 9))
        x = rng.standard_normal((1, T, E))
        abar = rng.uniform(0.05, 0.99, (1, T, E, N))
        bbar = rng.standard_normal((1, T, E, N))
        c = rng.standard_normal((1, T, N))
        got = ssm_scan(Tensor(x), Tensor(abar), Tensor(bbar), Tensor(c)).data[0]
        h = np.zeros((E, N))
        expect = np.zeros((T, E))
        for t in range(T):
            h = abar[0, t] * h + bbar[0, t] * x[0, t, :, None]
            expect[t] = h @ c[0, t]
        np.testing.assert_allclose(got, expect, atol=1e-10, rtol=1e-10)


# -- Mamba+ block ------------------------------------------------------------------


def test_block_forget_gate_half(tiny_inputs):
    # Gating branch forced to zero: sigmoid(0) = 0.5, so with the scan
    # silenced the block output is Linear(0.5 * silu(conv(Linear_x(x)))).
    model = Autoencoder(TINY, seed=3)
    p = model.params
    for n in ("enc0.in_z.w", "enc0.in_z.b", "enc0.sel_b.w"):
        p[n].data = np.zeros_like(p[n].data)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 10, TINY.d_model))
    with no_grad():
        out = model.mamba_plus_block(0, Tensor(x)).data

    def np_silu(v):
        return v / (1.0 + np.exp(-v))

    xb = x @ p["enc0.in_x.w"].data + p["enc0.in_x.b"].data
    K = TINY.conv_kernel
    xp_pad = np.concatenate([np.zeros((1, K - 1, xb.shape[2])), xb], axis=1)
    conv = sum(p["enc0.conv.w"].data[k] * xp_pad[:, k:k + 10] for k in range(K))
    conv += p["enc0.conv.b"].data
    xprime = np_silu(conv)
    expect = (0.5 * xprime) @ p["enc0.out.w"].data + p["enc0.out.b"].data
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_block_gate_saturation(tiny_inputs):
    # Huge gating pre-activation: G_f -> 0, so the output reduces to the
    # linear image of the scan result alone.
    model = Autoencoder(TINY, seed=4)
    p = model.params
    p["enc0.in_z.w"].data = np.zeros_like(p["enc0.in_z.w"].data)
    p["enc0.in_z.b"].data = np.full_like(p["enc0.in_z.b"].data, 50.0)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 8, TINY.d_model))
    with no_grad():
        out = model.mamba_plus_block(0, Tensor(x)).data
        # Reference: same block with the conv branch silenced after the
        # scan, i.e. subtract the x'' contribution by rebuilding it.
        zero_gate = Autoencoder(TINY, seed=4)
        q = zero_gate.params
        q["enc0.in_z.w"].data = np.zeros_like(q["enc0.in_z.w"].data)
        q["enc0.in_z.b"].data = np.full_like(q["enc0.in_z.b"].data, -50.0)
        # G_f -> 1 here, so out_zero = Linear(x' + h_ssm).
        out_keep = zero_gate.mamba_plus_block(0, Tensor(x)).data

    # out = Linear(h_ssm); out_keep = Linear(x' + h_ssm). Their difference
    # is the Linear image of x', which is nonzero.
    assert not np.allclose(out, out_keep)


def test_gate_identity_exact():
    # sigmoid + (1 - sigmoid) must be exactly 1.0 in floating point.
    from cadseq.numcore.tensor import _sigmoid

    rng = np.random.default_rng(0)
    z = rng.standard_normal(10_000) * 10
    s = _sigmoid(z)
    assert np.all(s + (1.0 - s) == 1.0)


def test_block_gradcheck(tiny_inputs):
    # Acceptance: full Mamba+ block scalar head, rel err <= 1e-4.
    cfg = AEConfig(d_model=6, n_encoder_blocks=1, n_decoder_blocks=1, latent_dim=4,
                   n_heads=2, ffn_dim=8, state_dim=2, dropout=0.0, dtype="float64")
    model = Autoencoder(cfg, seed=5)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 5, 6))
    probe = rng.standard_normal((1, 5, 6))
    names = [n for n in model.params.names() if n.startswith("enc0.")]

    def f(_):
        return tsum(mul(model.mamba_plus_block(0, Tensor(x)), Tensor(probe)))

    err = gradcheck(f, [model.params[n] for n in names])
    assert err <= 1e-4


# -- encoder / decoder ---------------------------------------------------------------


def test_encoder_shape_and_determinism(tiny_model, tiny_inputs):
    types, params = tiny_inputs
    with no_grad():
        z1 = tiny_model.encode_tensor(types, params).data
        z2 = tiny_model.encode_tensor(types, params).data
    assert z1.shape == (2, 256, TINY.latent_dim)
    assert np.array_equal(z1, z2)


def test_encoder_causal_before_compression(tiny_model, tiny_inputs):
    types, params = tiny_inputs
    t2, p2 = types.copy(), params.copy()
    k = 200
    t2[0, k] = sm.TYPE_INDEX[sm.CommandType.SOL]
    p2[0, k] = -1
    with no_grad():
        z1 = tiny_model.encode_tensor(types, params).data
        z2 = tiny_model.encode_tensor(t2, p2).data
    np.testing.assert_array_equal(z1[0, :k], z2[0, :k])
    assert not np.array_equal(z1[0, k:], z2[0, k:])


def test_decoder_constant_in_zero_latent(tiny_model):
    rng = np.random.default_rng(3)
    z0 = np.zeros((1, 256, TINY.latent_dim))
    with no_grad():
        out_zero = tiny_model.decode_tensor(Tensor(z0))[0].data
        # Zeroing the up-projection makes any latent equivalent to Z = 0.
        saved = tiny_model.params["dec.up.w"].data.copy()
        tiny_model.params["dec.up.w"].data = np.zeros_like(saved)
        out_any = tiny_model.decode_tensor(
            Tensor(rng.standard_normal((1, 256, TINY.latent_dim))))[0].data
        tiny_model.params["dec.up.w"].data = saved
    np.testing.assert_allclose(out_zero, out_any, atol=1e-12)


def test_decoder_sensitive_to_latent_permutation(tiny_model):
    rng = np.random.default_rng(4)
    z = rng.standard_normal((1, 256, TINY.latent_dim))
    perm = rng.permutation(256)
    with no_grad():
        a = tiny_model.decode_tensor(Tensor(z))[0].data
        b = tiny_model.decode_tensor(Tensor(z[:, perm]))[0].data
    assert not np.allclose(a, b)


def test_logit_shapes(tiny_model, tiny_inputs):
    types, params = tiny_inputs
    with no_grad():
        tl, pl = tiny_model.forward(types, params)
    assert tl.shape == (2, 256, 6)
    assert pl.shape == (2, 256, 16, 256)


# -- loss -----------------------------------------------------------------------------


def test_loss_perfect_prediction_near_zero(tiny_inputs):
    types, params = tiny_inputs
    B, T = types.shape
    tl = np.full((B, T, 6), -30.0)
    np.put_along_axis(tl, types[..., None], 30.0, axis=-1)
    pl = np.full((B, T, 16, 256), -30.0)
    safe = np.maximum(params, 0)
    np.put_along_axis(pl, safe[..., None], 30.0, axis=-1)
    loss = ae_loss(Tensor(tl), Tensor(pl), types, params)
    assert loss.item() < 1e-8


def test_loss_uniform_single_position():
    # Effective length 1 (EOS at position 0), no used parameters: the
    # loss is exactly the cross entropy of the uniform 6-way guess.
    types = np.full((1, 4), sm.TYPE_INDEX[sm.CommandType.EOS], dtype=np.int64)
    params = -np.ones((1, 4, 16), dtype=np.int64)
    tl = np.zeros((1, 4, 6))
    pl = np.zeros((1, 4, 16, 256))
    loss = ae_loss(Tensor(tl), Tensor(pl), types, params)
    assert loss.item() == pytest.approx(math.log(6.0), rel=1e-12)


def test_loss_padding_bit_identical(tiny_inputs):
    types, params = tiny_inputs
    rng = np.random.default_rng(5)
    tl = Tensor(rng.standard_normal((2, 256, 6)), requires_grad=True)
    pl = Tensor(rng.standard_normal((2, 256, 16, 256)), requires_grad=True)
    base = ae_loss(tl, pl, types, params).item()
    # Perturbing parameter targets in the padded region (after the first
    # EOS) must leave the loss bit-identical.
    eos_at = int(np.argmax(types[0] == sm.TYPE_INDEX[sm.CommandType.EOS]))
    p3 = params.copy()
    p3[0, eos_at + 1:, 5] = 9
    assert ae_loss(tl, pl, types, p3).item() == base

    tl.grad = None
    loss = ae_loss(tl, pl, types, params)
    loss.backward()
    assert np.all(tl.grad[0, eos_at + 1:] == 0.0)
    assert np.all(pl.grad[0, eos_at + 1:] == 0.0)


def test_end_to_end_tiny_gradcheck():
    # Acceptance: encode -> decode -> loss at d_E = 8 with 2 positions.
    cfg = AEConfig(d_model=8, n_encoder_blocks=1, n_decoder_blocks=1, latent_dim=4,
                   ffn_dim=8, n_heads=2, state_dim=2, dropout=0.0, dtype="float64",
                   n_positions=2)
    model = Autoencoder(cfg, seed=3)
    types = np.array([[1, 5]])
    params = -np.ones((1, 2, 16), dtype=np.int64)
    params[0, 0, 0] = 100
    params[0, 0, 1] = 50

    def f(_):
        tl, pl = model.forward(types, params)
        return ae_loss(tl, pl, types, params)

    err = gradcheck(f, model.params.tensors(), sample=24)
    assert err <= 1e-4


# -- reconstruction --------------------------------------------------------------------


def test_prediction_to_sequence_truncation():
    t_hat = np.full(256, sm.TYPE_INDEX[sm.CommandType.LINE], dtype=np.int64)
    t_hat[0] = sm.TYPE_INDEX[sm.CommandType.SOL]
    t_hat[3] = sm.TYPE_INDEX[sm.CommandType.EOS]
    p_hat = np.full((256, 16), 9, dtype=np.int64)
    seq = prediction_to_sequence(t_hat, p_hat)
    assert seq.true_length == 4
    # Applicability re-imposed: Line keeps only x, y.
    assert seq.commands[1].params[sm.R] == -1
    assert seq.commands[1].params[sm.X] == 9
    assert seq.commands[0].params == (-1,) * 16


def test_prediction_without_eos_is_unterminated():
    t_hat = np.full(256, sm.TYPE_INDEX[sm.CommandType.LINE], dtype=np.int64)
    p_hat = np.zeros((256, 16), dtype=np.int64)
    seq = prediction_to_sequence(t_hat, p_hat)
    rep = sm.validate_sequence(seq)
    assert not rep.ok and rep.rule in ("unterminated", "grammar-curve-outside-loop")


def test_reconstruct_error_carries_sequence(tiny_model):
    seq = sm.synthesize_sequence(0, 70)
    try:
        out = reconstruct(tiny_model, seq)
        assert sm.validate_sequence(out).ok
    except InvalidPredictionError as exc:
        assert isinstance(exc.sequence, sm.CadSequence)
        assert not sm.validate_sequence(exc.sequence).ok


def test_reconstructor_deterministic(tiny_model):
    seqs = [sm.synthesize_sequence(i, 64) for i in range(2)]
    rec = Reconstructor(tiny_model)
    a = rec.raw(seqs)
    b = rec.raw(seqs)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

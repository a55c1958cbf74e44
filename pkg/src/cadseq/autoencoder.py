"""Sequence autoencoder: per-command embedding, a stack of forget-gate SSM
blocks compressed to a 256x64 latent block, and a non-autoregressive
Transformer decoder with type/parameter heads.

The SSM block follows a dual-branch layout: the feature branch runs a
causal depthwise conv, SiLU, input-dependent (B, C, dt) projections and
the state-space scan; the gating branch produces G = sigmoid(z) whose
complement (the forget gate) re-weights the convolved features before
they are summed with the scan output. Blocks are stacked pre-norm with
residuals and a final per-position linear maps down to the latent width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import seqmodel as sm
from .nn import Params, affine_layer_norm, feed_forward, linear, self_attention
from .numcore import (
    Tensor,
    add,
    conv1d_causal,
    cross_entropy_sum,
    dropout,
    fused_ssm_scan,
    gather,
    matmul,
    mul,
    no_grad,
    reshape,
    sigmoid,
    silu,
    softplus,
    ssm_scan,
    texp,
    tsum,
)

N_TYPES = len(sm.TYPE_ORDER)
UNUSED_CLASS = sm.N_LEVELS  # index 256 of the 257-way parameter one-hot


class InvalidPredictionError(ValueError):
    """Greedy decode produced a sequence that fails validation.

    The raw (invalid) sequence is attached so callers can still score
    per-position accuracy and count the failure toward IR/SR.
    """

    def __init__(self, report: sm.ValidationReport, sequence: sm.CadSequence):
        super().__init__(f"invalid prediction: {report.rule} at {report.position}")
        self.report = report
        self.sequence = sequence


@dataclass
class AEConfig:
    d_model: int = 256
    n_encoder_blocks: int = 4
    n_decoder_blocks: int = 4
    latent_dim: int = 64
    n_heads: int = 8
    ffn_dim: int = 1024
    state_dim: int = 16
    expand: int = 2
    conv_kernel: int = 4
    dt_rank: int = 0          # 0 -> ceil(d_model / 16)
    dropout: float = 0.1
    gate_ssm: bool = False    # True: scan output gated by G (ablation)
    dtype: str = "float32"
    loss_beta: float = 2.0
    n_positions: int = sm.N_COMMANDS  # tiny configs shrink this for checking

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model

    @property
    def rank(self) -> int:
        return self.dt_rank if self.dt_rank > 0 else max(1, math.ceil(self.d_model / 16))


def discretize_ssm(dt: Tensor, a: Tensor, b_sel: Tensor) -> tuple[Tensor, Tensor]:
    """First-order-hold discretization of a diagonal state system.

    dt (B,T,E) > 0, a (E,N) the continuous diagonal transition, b_sel
    (B,T,N) the input projection. Returns abar = exp(dt*a) and
    bbar = dt*b, both (B,T,E,N).
    """
    B, T, E = dt.shape
    N = a.shape[-1]
    dte = reshape(dt, (B, T, E, 1))
    abar = texp(mul(dte, a))
    bbar = mul(dte, reshape(b_sel, (B, T, 1, N)))
    return abar, bbar


class Autoencoder:
    def __init__(self, config: AEConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self._dropout_rng = np.random.default_rng(seed + 0x5EED)
        p = Params(rng, np.dtype(config.dtype))
        d, e, n = config.d_model, config.d_inner, config.state_dim

        p.add("embed.cmd", rng.normal(0.0, 0.02, (N_TYPES, d)))
        p.add("embed.pb", rng.normal(0.0, 0.02, (UNUSED_CLASS + 1, d)))
        p.add("embed.pa", rng.normal(0.0, 1.0 / math.sqrt(16 * d), (16, d, d)))
        p.add("embed.pos", rng.normal(0.0, 0.02, (config.n_positions, d)))

        for i in range(config.n_encoder_blocks):
            pre = f"enc{i}."
            p.add(pre + "ln.g", np.ones(d))
            p.add(pre + "ln.b", np.zeros(d))
            p.linear(pre + "in_x", d, e)
            p.linear(pre + "in_z", d, e)
            p.add(pre + "conv.w", rng.normal(0.0, 1.0 / math.sqrt(config.conv_kernel), (config.conv_kernel, e)))
            p.add(pre + "conv.b", np.zeros(e))
            p.add(pre + "a_log", np.log(np.tile(np.arange(1, n + 1, dtype=np.float64), (e, 1))))
            p.linear(pre + "sel_b", e, n, bias=False)
            p.linear(pre + "sel_c", e, n, bias=False)
            p.linear(pre + "dt1", e, config.rank, bias=False)
            wdt2, bdt2 = p.linear(pre + "dt2", config.rank, e)
            # Bias so softplus lands in the usual [1e-3, 0.1] step-size band.
            dt_init = np.exp(rng.uniform(math.log(1e-3), math.log(0.1), e))
            bdt2.data = np.log(np.expm1(dt_init)).astype(p.dtype)
            p.add(pre + "dt_bias", np.full(e, 1e-4))
            p.linear(pre + "out", e, d)

        p.add("enc.final_ln.g", np.ones(d))
        p.add("enc.final_ln.b", np.zeros(d))
        p.linear("enc.compress", d, config.latent_dim)

        p.linear("dec.up", config.latent_dim, d)
        p.add("dec.query", rng.normal(0.0, 0.02, (config.n_positions, d)))
        for i in range(config.n_decoder_blocks):
            pre = f"dec{i}."
            p.add(pre + "ln1.g", np.ones(d))
            p.add(pre + "ln1.b", np.zeros(d))
            for w in ("wq", "wk", "wv", "wo"):
                p.linear(pre + w, d, d)
            p.add(pre + "ln2.g", np.ones(d))
            p.add(pre + "ln2.b", np.zeros(d))
            p.linear(pre + "ffn1", d, config.ffn_dim)
            p.linear(pre + "ffn2", config.ffn_dim, d)
        p.add("dec.final_ln.g", np.ones(d))
        p.add("dec.final_ln.b", np.zeros(d))
        p.linear("head.type", d, N_TYPES)
        p.linear("head.param", d, sm.N_PARAMS * sm.N_LEVELS)

        self.params = p
        self._zero_mask = np.zeros((config.n_positions, config.n_positions))

    # -- inputs ---------------------------------------------------------------

    @staticmethod
    def arrays_from_sequences(seqs: list[sm.CadSequence]) -> tuple[np.ndarray, np.ndarray]:
        """Type indices (B,256) and parameter levels (B,256,16) with -1 unused."""
        types = np.stack([s.type_indices() for s in seqs])
        params = np.stack([s.param_levels() for s in seqs])
        return types, params

    def embed(self, types: np.ndarray, params: np.ndarray) -> Tensor:
        """Summed command/parameter/position embedding, (B,256,d)."""
        p = self.params
        d = self.config.d_model
        emb = gather(p["embed.cmd"], types)
        # Parameter route: shared 257-way table, then a per-slot mixing
        # block. Composing table @ block once per step and gathering from
        # the 16 composed tables is algebraically the flatten-and-project
        # form but avoids materializing any one-hots.
        tables = matmul(reshape(p["embed.pb"], (1, UNUSED_CLASS + 1, d)), p["embed.pa"])
        flat = reshape(tables, (sm.N_PARAMS * (UNUSED_CLASS + 1), d))
        idx = np.where(params >= 0, params, UNUSED_CLASS)
        idx = idx + np.arange(sm.N_PARAMS, dtype=np.int64) * (UNUSED_CLASS + 1)
        emb = add(emb, tsum(gather(flat, idx), axis=2))
        return add(emb, p["embed.pos"])

    # -- encoder --------------------------------------------------------------

    def mamba_plus_block(self, i: int, x: Tensor) -> Tensor:
        """One dual-branch SSM block exactly as the pseudocode: no residual."""
        p = self.params
        cfg = self.config
        pre = f"enc{i}."
        B, T, _ = x.shape
        xb = linear(x, p[pre + "in_x.w"], p[pre + "in_x.b"])
        zb = linear(x, p[pre + "in_z.w"], p[pre + "in_z.b"])
        xp = silu(conv1d_causal(xb, p[pre + "conv.w"], p[pre + "conv.b"]))
        b_sel = linear(xp, p[pre + "sel_b.w"])
        c_sel = linear(xp, p[pre + "sel_c.w"])
        dt = softplus(linear(linear(xp, p[pre + "dt1.w"]), p[pre + "dt2.w"], p[pre + "dt2.b"]))
        dt = add(dt, p[pre + "dt_bias"])
        a = mul(texp(p[pre + "a_log"]), -1.0)
        h_ssm = fused_ssm_scan(xp, dt, a, b_sel, c_sel)
        g_b2 = sigmoid(zb)
        g_f = add(mul(g_b2, -1.0), 1.0)
        x2 = mul(g_f, xp)
        if cfg.gate_ssm:
            h_out = add(x2, mul(g_b2, h_ssm))
        else:
            h_out = add(x2, h_ssm)
        return linear(h_out, p[pre + "out.w"], p[pre + "out.b"])

    def encode_tensor(self, types: np.ndarray, params: np.ndarray,
                      train: bool = False) -> Tensor:
        p = self.params
        rng = self._dropout_rng if train else None
        x = self.embed(types, params)
        for i in range(self.config.n_encoder_blocks):
            pre = f"enc{i}."
            h = self.mamba_plus_block(i, affine_layer_norm(x, p[pre + "ln.g"], p[pre + "ln.b"]))
            x = add(x, dropout(h, self.config.dropout, rng))
        x = affine_layer_norm(x, p["enc.final_ln.g"], p["enc.final_ln.b"])
        return linear(x, p["enc.compress.w"], p["enc.compress.b"])

    # -- decoder --------------------------------------------------------------

    def decode_tensor(self, z: Tensor, train: bool = False) -> tuple[Tensor, Tensor]:
        p = self.params
        cfg = self.config
        rng = self._dropout_rng if train else None
        B = z.shape[0]
        x = add(linear(z, p["dec.up.w"], p["dec.up.b"]), p["dec.query"])
        for i in range(cfg.n_decoder_blocks):
            pre = f"dec{i}."
            h = self_attention(
                affine_layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"]),
                self._zero_mask, cfg.n_heads,
                p[pre + "wq.w"], p[pre + "wq.b"], p[pre + "wk.w"], p[pre + "wk.b"],
                p[pre + "wv.w"], p[pre + "wv.b"], p[pre + "wo.w"], p[pre + "wo.b"])
            x = add(x, dropout(h, cfg.dropout, rng))
            h = feed_forward(
                affine_layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"]),
                p[pre + "ffn1.w"], p[pre + "ffn1.b"], p[pre + "ffn2.w"], p[pre + "ffn2.b"])
            x = add(x, dropout(h, cfg.dropout, rng))
        x = affine_layer_norm(x, p["dec.final_ln.g"], p["dec.final_ln.b"])
        type_logits = linear(x, p["head.type.w"], p["head.type.b"])
        param_logits = reshape(
            linear(x, p["head.param.w"], p["head.param.b"]),
            (B, self.config.n_positions, sm.N_PARAMS, sm.N_LEVELS))
        return type_logits, param_logits

    def forward(self, types: np.ndarray, params: np.ndarray,
                train: bool = False) -> tuple[Tensor, Tensor]:
        z = self.encode_tensor(types, params, train)
        return self.decode_tensor(z, train)

    # -- inference ------------------------------------------------------------

    def encode_batch(self, seqs: list[sm.CadSequence], batch: int = 16) -> np.ndarray:
        """Latent blocks (n,256,latent_dim) for a list of sequences."""
        out = []
        with no_grad():
            for lo in range(0, len(seqs), batch):
                types, params = self.arrays_from_sequences(seqs[lo:lo + batch])
                out.append(self.encode_tensor(types, params).data)
        return np.concatenate(out, axis=0)

    def decode_latents(self, z: np.ndarray, batch: int = 16) -> tuple[np.ndarray, np.ndarray]:
        """Greedy types (n,256) and parameter levels (n,256,16) from latents."""
        t_all, p_all = [], []
        with no_grad():
            for lo in range(0, z.shape[0], batch):
                zt = Tensor(np.ascontiguousarray(z[lo:lo + batch], dtype=self.params.dtype))
                tl, pl = self.decode_tensor(zt)
                t_all.append(np.argmax(tl.data, axis=-1))
                p_all.append(np.argmax(pl.data, axis=-1))
        return np.concatenate(t_all), np.concatenate(p_all)


def ae_loss(type_logits: Tensor, param_logits: Tensor, types: np.ndarray,
            params: np.ndarray, beta: float = 2.0) -> Tensor:
    """Masked type + beta * parameter cross entropy, averaged over the batch.

    Positions after each sequence's first EOS contribute nothing, and
    parameter slots whose target is -1 contribute nothing; the EOS
    position itself is supervised on the type head.
    """
    B, T = types.shape
    eos = sm.TYPE_INDEX[sm.CommandType.EOS]
    has_eos = (types == eos).any(axis=1)
    first_eos = np.where(has_eos, np.argmax(types == eos, axis=1), T - 1)
    pos = np.arange(T)
    type_mask = pos[None, :] <= first_eos[:, None]
    param_mask = (params >= 0) & type_mask[:, :, None]
    type_term = cross_entropy_sum(type_logits, types, type_mask)
    param_term = cross_entropy_sum(param_logits, np.maximum(params, 0), param_mask)
    return mul(add(type_term, mul(param_term, beta)), 1.0 / B)


def prediction_to_sequence(t_hat: np.ndarray, p_hat: np.ndarray,
                           seq_id: str = "") -> sm.CadSequence:
    """Greedy arrays -> sequence: applicability re-imposed, EOS-truncated.

    The result is a raw container; run validate_sequence to decide
    whether the prediction is usable.
    """
    eos = sm.TYPE_INDEX[sm.CommandType.EOS]
    cmds: list[sm.CadCommand] = []
    for i in range(sm.N_COMMANDS):
        ctype = sm.TYPE_ORDER[int(t_hat[i])]
        if ctype is sm.CommandType.EOS:
            break
        used = sm.USES[ctype]
        levels = tuple(int(p_hat[i, j]) if j in used else -1 for j in range(sm.N_PARAMS))
        cmds.append(sm.CadCommand(ctype, levels))
    else:
        # No EOS predicted anywhere: keep the full (unterminated) block.
        full = [sm.CadCommand(sm.TYPE_ORDER[int(t_hat[i])],
                              tuple(int(p_hat[i, j]) if j in sm.USES[sm.TYPE_ORDER[int(t_hat[i])]]
                                    else -1 for j in range(sm.N_PARAMS)))
                for i in range(sm.N_COMMANDS)]
        return sm.CadSequence(full, seq_id)
    return sm.CadSequence.from_commands(cmds, seq_id)


class Reconstructor:
    """Batched greedy reconstruction through a trained autoencoder."""

    def __init__(self, model: Autoencoder, batch: int = 16):
        self.model = model
        self.batch = batch

    def raw(self, seqs: list[sm.CadSequence]) -> tuple[np.ndarray, np.ndarray]:
        types, params = self.model.arrays_from_sequences(seqs)
        t_all, p_all = [], []
        with no_grad():
            for lo in range(0, len(seqs), self.batch):
                tl, pl = self.model.forward(types[lo:lo + self.batch],
                                            params[lo:lo + self.batch])
                t_all.append(np.argmax(tl.data, axis=-1))
                p_all.append(np.argmax(pl.data, axis=-1))
        return np.concatenate(t_all), np.concatenate(p_all)

    def sequences(self, seqs: list[sm.CadSequence]) -> list[sm.CadSequence]:
        """Best-effort reconstructions; entries may fail validate_sequence."""
        t_hat, p_hat = self.raw(seqs)
        return [prediction_to_sequence(t_hat[k], p_hat[k], seqs[k].seq_id)
                for k in range(len(seqs))]


def reconstruct(model: Autoencoder, seq: sm.CadSequence) -> sm.CadSequence:
    """Greedy round trip of one sequence; raises on an invalid prediction."""
    out = Reconstructor(model).sequences([seq])[0]
    report = sm.validate_sequence(out)
    if not report.ok:
        raise InvalidPredictionError(report, out)
    return out


def save_model(path: str, model: Autoencoder, extra: dict | None = None) -> None:
    from .numcore import save_arrays

    meta = {"config": asdict(model.config), "kind": "autoencoder"}
    meta.update(extra or {})
    arrays = {f"ae.{k}": v for k, v in model.params.state_dict().items()}
    save_arrays(path, arrays, meta)


def load_model(path: str) -> tuple[Autoencoder, dict]:
    from .numcore import load_arrays

    arrays, meta = load_arrays(path)
    cfg = AEConfig(**meta["config"])
    model = Autoencoder(cfg, seed=0)
    model.params.load_state({k[3:]: v for k, v in arrays.items() if k.startswith("ae.")})
    return model, meta

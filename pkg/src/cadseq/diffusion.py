"""Latent diffusion: linear noise schedule, multi-scale windowed-attention
denoiser with timestep-modulated layers, training loss, and ancestral
samplers.

Two algebra modes exist end to end. "standard" is the usual DDPM: the
forward process scales the signal by sqrt(alpha_bar) and the sampler uses
the posterior mean with sqrt-variance noise. "paper-literal" reproduces
the source equations verbatim (alpha_bar without the square root in the
forward process, 1/alpha_bar and beta*z in the sampler); it is kept for
faithfulness and is numerically wild for long chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .nn import Params, feed_forward, linear, self_attention, sinusoidal_table
from .numcore import (
    Tensor,
    add,
    concat,
    dropout,
    layer_norm_modulated,
    mse,
    mul,
    narrow,
    no_grad,
    reshape,
    sigmoid,
    silu,
)

STANDARD, PAPER_LITERAL = "standard", "paper-literal"


class BadStepError(ValueError):
    pass


class SamplingDivergedError(FloatingPointError):
    pass


# -- schedule -----------------------------------------------------------------


@dataclass
class NoiseSchedule:
    """Per-step beta_t and the cumulative signal products, t = 1..T."""

    T: int
    betas: np.ndarray       # betas[t-1] = beta_t
    alphas: np.ndarray      # 1 - beta_t
    alpha_bar: np.ndarray   # prod_{s<=t} (1 - beta_s)
    mode: str = STANDARD

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def abar(self, t: int) -> float:
        self._check(t)
        return float(self.alpha_bar[t - 1])

    def _check(self, t) -> None:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise BadStepError(f"step {t} outside 1..{self.T}")


def build_schedule(T: int, mode: str = STANDARD) -> NoiseSchedule:
    """beta_t = 0.0001 + 0.0199 * t / T, cumulative products of (1 - beta)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if mode not in (STANDARD, PAPER_LITERAL):
        raise ValueError(f"unknown schedule mode {mode!r}")
    t = np.arange(1, T + 1, dtype=np.float64)
    betas = 1e-4 + 0.0199 * t / T
    alphas = 1.0 - betas
    return NoiseSchedule(T, betas, alphas, np.cumprod(alphas), mode)


def forward_diffuse(z0: np.ndarray, t, eps: np.ndarray,
                    sched: NoiseSchedule) -> np.ndarray:
    """Noised latent at step t; t may be scalar or per-sample for a batch."""
    sched._check(t)
    ab = sched.alpha_bar[np.asarray(t) - 1]
    ab = ab.reshape((-1,) + (1,) * (z0.ndim - 1)) if np.ndim(t) else float(ab)
    if sched.mode == PAPER_LITERAL:
        return ab * z0 + np.sqrt(1.0 - ab) * eps
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


# -- masks --------------------------------------------------------------------


def window_mask(t_len: int, window: int | None) -> np.ndarray:
    """Additive {0, -inf} mask allowing |i - j| <= window (None: allow all)."""
    if t_len < 1:
        raise ValueError("t_len must be >= 1")
    if window is None:
        return np.zeros((t_len, t_len))
    idx = np.arange(t_len)
    allowed = np.abs(idx[:, None] - idx[None, :]) <= window
    mask = np.where(allowed, 0.0, -np.inf)
    return mask


# -- denoiser -----------------------------------------------------------------


@dataclass
class DiffConfig:
    latent_dim: int = 64
    seq_len: int = 256
    embed_dim: int = 512
    n_layers: int = 6
    n_heads: int = 8
    ffn_dim: int = 2048
    fusion_hidden: int = 512
    window_local: int = 64
    window_mid: int = 128
    T: int = 1000
    dropout: float = 0.1
    schedule_mode: str = STANDARD
    sampler_mode: str = STANDARD
    dtype: str = "float32"


BRANCHES = ("local", "mid", "global")
N_MOD = 6  # xi1, psi1, omega1, xi2, psi2, omega2


class Denoiser:
    """Noise predictor: W_out o layer_L o ... o layer_1(PE(W_in z) + tau(t)).

    Each layer runs three attention branches (window 64, window 128,
    global) on the modulated input, fuses them with a sigmoid gate and a
    projection + MLP, and applies timestep-scaled residuals.
    """

    def __init__(self, config: DiffConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self._dropout_rng = np.random.default_rng(seed + 0x0D1FF)
        p = Params(rng, np.dtype(config.dtype))
        e = config.embed_dim

        p.linear("in", config.latent_dim, e)
        p.add("pe.eta", np.array([1.0]))
        p.linear("time.mlp1", e, e)
        # Zero-init the modulation head: layers start as exact identities.
        p.linear("time.mlp2", e, N_MOD * config.n_layers * e, zero=True)
        for i in range(config.n_layers):
            pre = f"mst{i}."
            for br in BRANCHES:
                for w in ("wq", "wk", "wv", "wo"):
                    p.linear(pre + br + "." + w, e, e)
            p.linear(pre + "gate", 3 * e, 3 * e)
            p.linear(pre + "fuse", 3 * e, e)
            p.linear(pre + "mlp1", e, config.fusion_hidden)
            p.linear(pre + "mlp2", config.fusion_hidden, e)
            p.linear(pre + "ffn1", e, config.ffn_dim)
            p.linear(pre + "ffn2", config.ffn_dim, e)
        p.linear("out", e, config.latent_dim)
        self.params = p

        self._pe = sinusoidal_table(config.seq_len, e, p.dtype)
        self._tau = sinusoidal_table(config.T + 1, e, p.dtype)
        self._masks = {
            "local": window_mask(config.seq_len, config.window_local),
            "mid": window_mask(config.seq_len, config.window_mid),
            "global": window_mask(config.seq_len, None),
        }

    def positional_encode(self, z: Tensor) -> Tensor:
        """z + eta * PE, the trainable-scalar sinusoidal encoding."""
        return add(z, mul(self.params["pe.eta"], Tensor(self._pe)))

    def time_modulation(self, t: np.ndarray) -> tuple[Tensor, list[list[Tensor]]]:
        """Raw timestep embedding plus the per-layer modulation vectors.

        Returns (tau, mods) where mods[layer] is [xi1, psi1, om1, xi2,
        psi2, om2], each (B, 1, embed) for broadcasting over positions.
        """
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        if np.any(t < 1) or np.any(t > self.config.T):
            raise BadStepError(f"timestep outside 1..{self.config.T}")
        p = self.params
        e = self.config.embed_dim
        tau = Tensor(self._tau[t])  # (B, e)
        h = linear(silu(linear(tau, p["time.mlp1.w"], p["time.mlp1.b"])),
                   p["time.mlp2.w"], p["time.mlp2.b"])
        B = t.shape[0]
        mods: list[list[Tensor]] = []
        for i in range(self.config.n_layers):
            row = []
            for k in range(N_MOD):
                off = (i * N_MOD + k) * e
                row.append(reshape(narrow(h, 1, off, e), (B, 1, e)))
            mods.append(row)
        return tau, mods

    def _mst_layer(self, i: int, x: Tensor, mods: list[Tensor],
                   rng: np.random.Generator | None) -> Tensor:
        p = self.params
        cfg = self.config
        pre = f"mst{i}."
        xi1, psi1, om1, xi2, psi2, om2 = mods
        xn = layer_norm_modulated(x, xi1, psi1)
        heads = []
        for br in BRANCHES:
            heads.append(self_attention(
                xn, self._masks[br], cfg.n_heads,
                p[pre + br + ".wq.w"], p[pre + br + ".wq.b"],
                p[pre + br + ".wk.w"], p[pre + br + ".wk.b"],
                p[pre + br + ".wv.w"], p[pre + br + ".wv.b"],
                p[pre + br + ".wo.w"], p[pre + br + ".wo.b"]))
        fused = fuse_multiscale(
            heads[0], heads[1], heads[2],
            p[pre + "gate.w"], p[pre + "gate.b"], p[pre + "fuse.w"], p[pre + "fuse.b"],
            p[pre + "mlp1.w"], p[pre + "mlp1.b"], p[pre + "mlp2.w"], p[pre + "mlp2.b"])
        x = add(x, mul(om1, dropout(fused, cfg.dropout, rng)))
        xn = layer_norm_modulated(x, xi2, psi2)
        h = feed_forward(xn, p[pre + "ffn1.w"], p[pre + "ffn1.b"],
                         p[pre + "ffn2.w"], p[pre + "ffn2.b"])
        return add(x, mul(om2, dropout(h, cfg.dropout, rng)))

    def predict(self, z_t: np.ndarray, t, train: bool = False) -> Tensor:
        """Predicted noise for a batch of latents at (per-sample) steps t."""
        p = self.params
        cfg = self.config
        rng = self._dropout_rng if train else None
        z = Tensor(np.ascontiguousarray(z_t, dtype=p.dtype))
        if z.data.ndim == 2:
            z = reshape(z, (1,) + z.shape)
        t = np.broadcast_to(np.asarray(t, dtype=np.int64).reshape(-1), (z.shape[0],))
        tau, mods = self.time_modulation(t)
        x = self.positional_encode(linear(z, p["in.w"], p["in.b"]))
        x = add(x, reshape(tau, (z.shape[0], 1, cfg.embed_dim)))
        for i in range(cfg.n_layers):
            x = self._mst_layer(i, x, mods[i], rng)
        return linear(x, p["out.w"], p["out.b"])

    def predict_np(self, z_t: np.ndarray, t) -> np.ndarray:
        with no_grad():
            return self.predict(z_t, t).data.astype(np.float64)


def fuse_multiscale(h_l: Tensor, h_m: Tensor, h_g: Tensor, w_gate: Tensor,
                    b_gate: Tensor, w_out: Tensor, b_out: Tensor,
                    w_m1: Tensor, b_m1: Tensor, w_m2: Tensor, b_m2: Tensor) -> Tensor:
    """Gated fusion of the three branch outputs.

    Concatenate on features, sigmoid-gate elementwise, project back to the
    embedding width, then a one-hidden-layer MLP.
    """
    if not (h_l.shape == h_m.shape == h_g.shape):
        raise ValueError("branch outputs must share a shape")
    cat = concat([h_l, h_m, h_g], axis=-1)
    gate = sigmoid(linear(cat, w_gate, b_gate))
    fused = linear(mul(gate, cat), w_out, b_out)
    return feed_forward(fused, w_m1, b_m1, w_m2, b_m2)


# -- training and sampling ------------------------------------------------------


def diffusion_loss(denoiser: Denoiser, z0: np.ndarray, rng: np.random.Generator,
                   sched: NoiseSchedule, train: bool = True) -> tuple[Tensor, np.ndarray]:
    """Noise-prediction MSE on a batch: t ~ U(1, T), eps ~ N(0, I)."""
    B = z0.shape[0]
    t = rng.integers(1, sched.T + 1, size=B)
    eps = rng.standard_normal(z0.shape)
    z_t = forward_diffuse(z0, t, eps, sched)
    pred = denoiser.predict(z_t, t, train=train)
    return mse(pred, eps), t


def sample_latents(predict_fn, n: int, sched: NoiseSchedule, shape=(256, 64),
                   seed: int = 0, mode: str | None = None) -> np.ndarray:
    """Ancestral sampling of n latent blocks from pure noise.

    predict_fn(z_t (n,*shape), t (n,)) must return predicted noise of the
    same shape. Each trajectory owns its own noise stream (seed + index),
    so results are independent of batch composition.
    """
    mode = mode or sched.mode
    if mode not in (STANDARD, PAPER_LITERAL):
        raise ValueError(f"unknown sampler mode {mode!r}")
    streams = [np.random.default_rng(seed + i) for i in range(n)]
    z = np.stack([s.standard_normal(shape) for s in streams])
    for t in range(sched.T, 0, -1):
        eps_hat = np.asarray(predict_fn(z, np.full(n, t)), dtype=np.float64)
        beta = sched.beta(t)
        ab = sched.abar(t)
        noise = np.stack([s.standard_normal(shape) for s in streams])
        if mode == PAPER_LITERAL:
            z = (z - beta / math.sqrt(1.0 - ab) * eps_hat) / ab + beta * noise
        else:
            ab_prev = sched.abar(t - 1) if t > 1 else 1.0
            mean = (z - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(1.0 - beta)
            if t > 1:
                var = beta * (1.0 - ab_prev) / (1.0 - ab)
                z = mean + math.sqrt(var) * noise
            else:
                z = mean
        if not np.all(np.isfinite(z)):
            raise SamplingDivergedError(f"non-finite latent after step {t} (mode={mode})")
    return z


# -- persistence -----------------------------------------------------------------


def save_denoiser(path: str, model: Denoiser, extra: dict | None = None) -> None:
    from .numcore import save_arrays

    meta = {"config": asdict(model.config), "kind": "denoiser"}
    meta.update(extra or {})
    arrays = {f"diff.{k}": v for k, v in model.params.state_dict().items()}
    save_arrays(path, arrays, meta)


def load_denoiser(path: str) -> tuple[Denoiser, dict]:
    from .numcore import load_arrays

    arrays, meta = load_arrays(path)
    cfg = DiffConfig(**meta["config"])
    model = Denoiser(cfg, seed=0)
    model.params.load_state({k[5:]: v for k, v in arrays.items() if k.startswith("diff.")})
    return model, meta

"""Run configuration and the two training loops (autoencoder, denoiser),
plus encode/sample/decode glue. Everything is seed-deterministic and
checkpoints carry optimizer moments and RNG states so a resumed run
reproduces the uninterrupted loss curve exactly."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import diffusion as df
from . import seqmodel as sm
from .autoencoder import AEConfig, Autoencoder, Reconstructor, ae_loss, prediction_to_sequence
from .numcore import OptimState, clip_gradients, load_arrays, lr_schedule, no_grad, optimizer_step, save_arrays


@dataclass
class TrainConfig:
    lr: float = 1e-3
    warmup: int = 2000
    weight_decay: float = 1e-4
    clip: float = 1.0
    batch: int = 32
    epochs: int = 0          # >0: steps derived from the dataset size
    steps: int = 0           # >0: explicit step budget (wins over epochs)
    beta1: float = 0.9
    beta2: float = 0.999
    decay_at: int = 0
    decay_factor: float = 1.0
    decoupled: bool = True   # AdamW; False is plain Adam
    eval_every: int = 0
    target_acc_c: float = 0.0
    target_acc_p: float = 0.0
    seed: int = 0


@dataclass
class RunConfig:
    ae: AEConfig = field(default_factory=AEConfig)
    ae_train: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr=1e-3, warmup=2000, weight_decay=1e-4, clip=1.0, batch=32, epochs=300))
    diff: df.DiffConfig = field(default_factory=df.DiffConfig)
    diff_train: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr=2e-4, warmup=0, weight_decay=0.0, decoupled=False, clip=1.0,
        batch=64, steps=200000, beta1=0.9, decay_at=100000, decay_factor=0.1))
    seed: int = 0
    resolution: int = 64
    n_points: int = 2000
    chamfer: str = "squared"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        base = cls()
        return cls(
            ae=AEConfig(**{**asdict(base.ae), **d.get("ae", {})}),
            ae_train=TrainConfig(**{**asdict(base.ae_train), **d.get("ae_train", {})}),
            diff=df.DiffConfig(**{**asdict(base.diff), **d.get("diff", {})}),
            diff_train=TrainConfig(**{**asdict(base.diff_train), **d.get("diff_train", {})}),
            **{k: d[k] for k in ("seed", "resolution", "n_points", "chamfer") if k in d},
        )


def desk_profile() -> RunConfig:
    """Laptop-scale profile: every dimension shrunk, aggressive early stop."""
    return RunConfig(
        ae=AEConfig(d_model=128, n_encoder_blocks=2, n_decoder_blocks=2,
                    ffn_dim=512, dropout=0.0),
        ae_train=TrainConfig(lr=1e-3, warmup=200, weight_decay=1e-4, clip=1.0,
                             batch=16, steps=5000, eval_every=100,
                             target_acc_c=0.995, target_acc_p=0.97),
        diff=df.DiffConfig(embed_dim=256, n_layers=4, ffn_dim=512,
                           fusion_hidden=256, T=100, dropout=0.0),
        diff_train=TrainConfig(lr=2e-4, warmup=0, weight_decay=0.0,
                               decoupled=False, clip=1.0, batch=4, steps=3000),
    )


def full_profile() -> RunConfig:
    return RunConfig()


PROFILES = {"desk": desk_profile, "full": full_profile}


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


class _Trainer:
    """Shared optimizer/checkpoint scaffolding for both stages."""

    def __init__(self, params, train_cfg: TrainConfig):
        self.names = params.names()
        self.params = params
        self.cfg = train_cfg
        self.state = OptimState(
            lr=train_cfg.lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2,
            weight_decay=train_cfg.weight_decay, decoupled=train_cfg.decoupled)
        self.state.ensure([params[n].data for n in self.names])
        self.rng = np.random.default_rng(train_cfg.seed)
        self.step = 0

    def apply(self, loss) -> float:
        loss.backward()
        grads = [self.params[n].grad if self.params[n].grad is not None
                 else np.zeros_like(self.params[n].data) for n in self.names]
        grads = clip_gradients(grads, self.cfg.clip)
        lr = lr_schedule(self.step, self.cfg.lr, self.cfg.warmup,
                         self.cfg.decay_at, self.cfg.decay_factor)
        optimizer_step([self.params[n].data for n in self.names], grads, self.state, lr=lr)
        self.params.zero_grad()
        self.step += 1
        return lr

    def opt_arrays(self) -> dict:
        out = {}
        for n, m, v in zip(self.names, self.state.m, self.state.v):
            out[f"opt.m.{n}"] = m
            out[f"opt.v.{n}"] = v
        return out

    def load_opt_arrays(self, arrays: dict) -> None:
        self.state.m = [np.array(arrays[f"opt.m.{n}"]) for n in self.names]
        self.state.v = [np.array(arrays[f"opt.v.{n}"]) for n in self.names]

    def snapshot_extra(self, model_rng: np.random.Generator) -> dict:
        return {
            "step": self.step,
            "opt_step": self.state.step,
            "rng": _rng_state(self.rng),
            "model_rng": _rng_state(model_rng),
        }

    def restore_extra(self, extra: dict, model_rng: np.random.Generator) -> None:
        self.step = extra["step"]
        self.state.step = extra["opt_step"]
        self.rng = _restore_rng(extra["rng"])
        model_rng.bit_generator.state = extra["model_rng"]


def _planned_steps(cfg: TrainConfig, n_samples: int) -> int:
    if cfg.steps > 0:
        return cfg.steps
    per_epoch = max(1, -(-n_samples // cfg.batch))
    return cfg.epochs * per_epoch


def train_accuracy(model: Autoencoder, types: np.ndarray, params: np.ndarray,
                   batch: int = 16) -> tuple[float, float]:
    """Greedy type / used-parameter accuracy against the given arrays."""
    eos = sm.TYPE_INDEX[sm.CommandType.EOS]
    hits_t = tot_t = hits_p = tot_p = 0
    with no_grad():
        for lo in range(0, types.shape[0], batch):
            tl, pl = model.forward(types[lo:lo + batch], params[lo:lo + batch])
            t_hat = np.argmax(tl.data, axis=-1)
            p_hat = np.argmax(pl.data, axis=-1)
            t_gt = types[lo:lo + batch]
            p_gt = params[lo:lo + batch]
            first_eos = np.argmax(t_gt == eos, axis=1)
            pos = np.arange(t_gt.shape[1])
            mask = pos[None, :] <= first_eos[:, None]
            match = (t_hat == t_gt) & mask
            hits_t += int(match.sum())
            tot_t += int(mask.sum())
            used = (p_gt >= 0) & match[:, :, None]
            hits_p += int(((p_hat == p_gt) & used).sum())
            tot_p += int(used.sum())
    return hits_t / max(tot_t, 1), hits_p / max(tot_p, 1)


def train_autoencoder(seqs: list[sm.CadSequence], run: RunConfig, out_dir: str,
                      resume_from: str | None = None, log=None) -> Autoencoder:
    """Train the autoencoder; writes checkpoint + TSV loss log into out_dir.

    Early-stops once the train-set accuracy targets are met (when set).
    """
    model = Autoencoder(run.ae, seed=run.seed)
    trainer = _Trainer(model.params, run.ae_train)
    log_path = os.path.join(out_dir, "train_ae.tsv")
    os.makedirs(out_dir, exist_ok=True)
    if resume_from:
        arrays, extra = load_arrays(resume_from)
        model.params.load_state(
            {k[3:]: v for k, v in arrays.items() if k.startswith("ae.")})
        trainer.load_opt_arrays(arrays)
        trainer.restore_extra(extra["trainer"], model._dropout_rng)

    types, params = model.arrays_from_sequences(seqs)
    total = _planned_steps(run.ae_train, len(seqs))
    cfg = run.ae_train

    def emit(line: str) -> None:
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        if log:
            log(line)

    while trainer.step < total:
        idx = trainer.rng.integers(0, len(seqs), size=cfg.batch)
        tl, pl = model.forward(types[idx], params[idx], train=True)
        loss = ae_loss(tl, pl, types[idx], params[idx], beta=run.ae.loss_beta)
        lv = loss.item()
        lr = trainer.apply(loss)
        emit(f"{trainer.step}\t{lv:.8g}\t{lr:.8g}")
        if cfg.eval_every and trainer.step % cfg.eval_every == 0:
            acc_c, acc_p = train_accuracy(model, types, params, batch=cfg.batch)
            emit(f"# eval\t{trainer.step}\tacc_c={acc_c:.6f}\tacc_p={acc_p:.6f}")
            if cfg.target_acc_c and acc_c >= cfg.target_acc_c \
                    and acc_p >= cfg.target_acc_p:
                break
    save_ae_checkpoint(out_dir, model, trainer, run)
    return model


def save_ae_checkpoint(out_dir: str, model: Autoencoder, trainer: _Trainer,
                       run: RunConfig) -> None:
    arrays = {f"ae.{k}": v for k, v in model.params.state_dict().items()}
    arrays.update(trainer.opt_arrays())
    save_arrays(out_dir, arrays, {
        "kind": "autoencoder", "config": asdict(model.config),
        "run": asdict(run), "trainer": trainer.snapshot_extra(model._dropout_rng),
    })


def load_ae_checkpoint(path: str) -> tuple[Autoencoder, dict]:
    arrays, extra = load_arrays(path)
    model = Autoencoder(AEConfig(**extra["config"]), seed=0)
    model.params.load_state({k[3:]: v for k, v in arrays.items() if k.startswith("ae.")})
    return model, extra


def encode_dataset(model: Autoencoder, seqs: list[sm.CadSequence], path: str) -> np.ndarray:
    """Latent blocks for a dataset, persisted in the manifest+blob format."""
    z = model.encode_batch(seqs).astype(np.float32)
    save_arrays(path, {"latents": z}, {"kind": "latents", "count": len(seqs)})
    return z


def load_latents(path: str) -> np.ndarray:
    arrays, extra = load_arrays(path)
    if "latents" not in arrays:
        raise KeyError("not a latent file (no 'latents' array)")
    return arrays["latents"]


def train_denoiser(latents: np.ndarray, run: RunConfig, out_dir: str,
                   resume_from: str | None = None, log=None) -> df.Denoiser:
    """Train the noise predictor on normalized latents.

    Latents are standardized by global scalar mean/std (stored in the
    checkpoint and undone at decode time) so unit-variance forward
    diffusion assumptions hold regardless of the encoder's scale.
    """
    model = df.Denoiser(run.diff, seed=run.seed)
    trainer = _Trainer(model.params, run.diff_train)
    sched = df.build_schedule(run.diff.T, run.diff.schedule_mode)
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "train_diff.tsv")

    mu = float(latents.mean())
    sigma = float(latents.std())
    if sigma < 1e-8:
        sigma = 1.0
    z0_all = ((latents - mu) / sigma).astype(np.float64)

    if resume_from:
        arrays, extra = load_arrays(resume_from)
        model.params.load_state(
            {k[5:]: v for k, v in arrays.items() if k.startswith("diff.")})
        trainer.load_opt_arrays(arrays)
        trainer.restore_extra(extra["trainer"], model._dropout_rng)
        mu, sigma = extra["norm"]["mu"], extra["norm"]["sigma"]
        z0_all = ((latents - mu) / sigma).astype(np.float64)

    cfg = run.diff_train
    total = _planned_steps(cfg, latents.shape[0])

    def emit(line: str) -> None:
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        if log:
            log(line)

    while trainer.step < total:
        idx = trainer.rng.integers(0, z0_all.shape[0], size=cfg.batch)
        loss, _ = df.diffusion_loss(model, z0_all[idx], trainer.rng, sched, train=True)
        lv = loss.item()
        lr = trainer.apply(loss)
        emit(f"{trainer.step}\t{lv:.8g}\t{lr:.8g}")
    save_diff_checkpoint(out_dir, model, trainer, run, mu, sigma)
    return model


def save_diff_checkpoint(out_dir: str, model: df.Denoiser, trainer: _Trainer,
                         run: RunConfig, mu: float, sigma: float) -> None:
    arrays = {f"diff.{k}": v for k, v in model.params.state_dict().items()}
    arrays.update(trainer.opt_arrays())
    save_arrays(out_dir, arrays, {
        "kind": "denoiser", "config": asdict(model.config), "run": asdict(run),
        "norm": {"mu": mu, "sigma": sigma},
        "trainer": trainer.snapshot_extra(model._dropout_rng),
    })


def load_diff_checkpoint(path: str) -> tuple[df.Denoiser, dict]:
    arrays, extra = load_arrays(path)
    model = df.Denoiser(df.DiffConfig(**extra["config"]), seed=0)
    model.params.load_state(
        {k[5:]: v for k, v in arrays.items() if k.startswith("diff.")})
    return model, extra


def sample_and_save(diff_ckpt: str, n: int, seed: int, path: str,
                    mode: str | None = None, steps: int = 0) -> np.ndarray:
    """Sample latents from a trained denoiser and persist them (denormalized)."""
    model, extra = load_diff_checkpoint(diff_ckpt)
    T = steps or model.config.T
    sched = df.build_schedule(T, model.config.schedule_mode)
    shape = (model.config.seq_len, model.config.latent_dim)
    z = df.sample_latents(model.predict_np, n, sched, shape=shape, seed=seed,
                          mode=mode or model.config.sampler_mode)
    norm = extra.get("norm", {"mu": 0.0, "sigma": 1.0})
    z = z * norm["sigma"] + norm["mu"]
    save_arrays(path, {"latents": z.astype(np.float32)},
                {"kind": "latents", "count": n, "seed": seed})
    return z


def decode_latents_to_sequences(model: Autoencoder, latents: np.ndarray,
                                prefix: str = "gen") -> tuple[list[sm.CadSequence], int]:
    """Greedy-decode latents; returns sequences (valid or not) and invalid count."""
    t_hat, p_hat = model.decode_latents(latents)
    out = []
    invalid = 0
    for k in range(latents.shape[0]):
        seq = prediction_to_sequence(t_hat[k], p_hat[k], f"{prefix}-{k}")
        if not sm.validate_sequence(seq).ok:
            invalid += 1
        out.append(seq)
    return out, invalid

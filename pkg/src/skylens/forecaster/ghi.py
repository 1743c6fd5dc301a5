"""Masked-pretrained transformer encoder for GHI forecasting.

Inputs per anchor ``T``: a space-time slice window (``tau`` frames) and the
GHI history ``G[T-tau+1 .. T]`` normalised by the clear-sky peak ``G0``.
Tokens are ``[K || I]``: ``K`` from a 5-layer conv encoder ending in a
2-channel latent (one token per remaining time column), ``I`` from
fixed-size GHI patches. Pretraining hides whole patches and reconstructs
them; finetuning swaps the reconstruction head for a forecasting head and
trains only that head.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .nn import Adam, Conv2d, EncoderLayer, Linear, Module, load_weights, save_weights
from .occlusion import TrainLog


class NotPretrained(RuntimeError):
    pass


@dataclass(frozen=True)
class GhiConfig:
    history: int = 60
    horizon: int = 60
    image_rows: int = 97          # spatial extent of the slice window (2L+1)
    conv: tuple = (8, 16, 16, 16, 2)
    patch: int = 5
    width: int = 64
    depth: int = 2
    heads: int = 4
    dropout: float = 0.1
    mask_ratio: float = 0.25
    lr_pretrain: float = 1e-3
    lr_finetune: float = 1e-3
    batch: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.history % self.patch:
            raise ValueError(f"history {self.history} not divisible by patch {self.patch}")
        if not (0.0 <= self.mask_ratio < 1.0):
            raise ValueError("mask_ratio must lie in [0, 1)")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        if len(self.conv) != 5 or self.conv[-1] != 2:
            raise ValueError("image encoder needs 5 conv widths ending in 2 channels")

    @property
    def n_patches(self) -> int:
        return self.history // self.patch

    @property
    def n_masked(self) -> int:
        return int(math.ceil(self.mask_ratio * self.n_patches - 1e-12))

    @property
    def latent_shape(self):
        h, w = self.image_rows, self.history
        for _ in range(4):
            h, w = h // 2, w // 2
        return self.conv[-1], h, w


def mask_positions(cfg: GhiConfig, batch, rng):
    """Boolean ``(batch, n_patches)``; exactly ``ceil(ratio * n)`` True per row."""
    m = np.zeros((batch, cfg.n_patches), bool)
    if cfg.n_masked == 0:
        return m
    for i in range(batch):
        m[i, rng.choice(cfg.n_patches, cfg.n_masked, replace=False)] = True
    return m


class GhiTransformer(Module):
    def __init__(self, cfg: GhiConfig = GhiConfig()):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.rng = np.random.default_rng(cfg.seed + 1)
        widths = (3,) + tuple(cfg.conv)
        self.convs = [self.child(f"conv{i}", Conv2d(widths[i], widths[i + 1], rng))
                      for i in range(5)]
        c, h, w = cfg.latent_shape
        self.n_img_tokens = w
        self.img_embed = self.child("img_embed", Linear(c * h, cfg.width, rng))
        self.mask_embedding = self.param("mask_embedding", rng.normal(0.0, 0.02, cfg.patch))
        self.patch_embed = self.child("patch_embed", Linear(cfg.patch, cfg.width, rng))
        n_tok = w + cfg.n_patches
        self.pos = self.param("pos", rng.normal(0.0, 0.02, (n_tok, cfg.width)))
        self.layers = [self.child(f"layer{i}", EncoderLayer(cfg.width, cfg.heads, self.rng,
                                                            cfg.dropout))
                       for i in range(cfg.depth)]
        self.recon1 = self.child("recon1", Linear(cfg.width, cfg.width, rng))
        self.recon2 = self.child("recon2", Linear(cfg.width, cfg.patch, rng))
        self.head = None
        self.pretrained = False
        # fixed (non-trainable) standardisation of the head input
        self.feat_mean = None
        self.feat_std = None

    # ---- encoder
    def encode_inputs(self, images, history, mask=None):
        """Token sequence ``(B, n_img + n_patches, d)`` (positional encoding added)."""
        cfg = self.cfg
        x = ad.as_tensor(images)
        for i, conv in enumerate(self.convs):
            x = ad.relu(conv(x))
            if i < 4:
                x = ad.maxpool2(x)
        b, c, h, w = x.shape
        k = ad.reshape(ad.transpose(x, (0, 3, 1, 2)), (b, w, c * h))
        k_tok = self.img_embed(k)
        hist = np.asarray(history, dtype=np.float64)
        if hist.shape[1] != cfg.history:
            raise ValueError(f"history length {hist.shape[1]} != {cfg.history}")
        patches = ad.Tensor(hist.reshape(b, cfg.n_patches, cfg.patch))
        if mask is not None and np.any(mask):
            sel = np.broadcast_to(np.asarray(mask, bool)[:, :, None], patches.shape)
            mvec = ad.reshape(self.mask_embedding, (1, 1, cfg.patch))
            patches = ad.where(sel, mvec * np.ones(patches.shape), patches)
        i_tok = self.patch_embed(patches)
        tokens = ad.concat([k_tok, i_tok], axis=1)
        return tokens + self.pos

    def encode(self, images, history, mask=None):
        x = self.encode_inputs(images, history, mask)
        for layer in self.layers:
            x = layer(x)
        return x

    # ---- heads
    def reconstruct(self, z):
        n_img = self.n_img_tokens
        zi = ad.getitem(z, (slice(None), slice(n_img, None)))
        h = ad.dropout(self.recon1(zi), self.cfg.dropout, self.rng, self.training)
        return self.recon2(h)          # (B, n_patches, patch)

    def attach_forecast_head(self):
        if not self.pretrained:
            raise NotPretrained("finetuning requires a pretrained encoder")
        rng = np.random.default_rng(self.cfg.seed + 5)
        n_tok = self.pos.shape[0]
        self.head = Linear(n_tok * self.cfg.width, self.cfg.horizon, rng)
        self.head.weight.data[:] = 0.0    # starts as persistence
        return self.head

    def features(self, images, history):
        """Flattened encoder output, standardised with the finetuning statistics."""
        z = self.encode(images, history)
        flat = z.data.reshape(len(z.data), -1)
        if self.feat_mean is not None:
            flat = (flat - self.feat_mean) / self.feat_std
        return flat

    def forecast_norm(self, images, history):
        """Normalised forecast: the last observed value plus the head's increment."""
        flat = ad.dropout(ad.Tensor(self.features(images, history)), self.cfg.dropout, self.rng,
                          self.training)
        last = np.asarray(history, dtype=np.float64)[:, -1:]
        return self.head(flat) + last

    def encoder_parameters(self):
        return {k: v for k, v in self.named_parameters().items()
                if not (k.startswith("recon") or k.startswith("head"))}

    def named_parameters(self, prefix=""):
        out = super().named_parameters(prefix)
        if self.head is not None:
            out.update(self.head.named_parameters(prefix + "head."))
        return out

    def predict(self, images, history, g0=1000.0, batch=64):
        """Denormalised GHI forecasts ``(n, N)``, clamped to be non-negative."""
        if self.head is None:
            raise NotPretrained("no forecasting head; run finetune_forecast first")
        was = self.training
        self.eval()
        out = []
        for i in range(0, len(history), batch):
            out.append(self.forecast_norm(images[i:i + batch], history[i:i + batch]).data)
        self.train(was)
        return np.maximum(np.concatenate(out) * g0, 0.0)


def pretrain_reconstruction(model: GhiTransformer, images, history, epochs=10,
                            log: TrainLog | None = None) -> TrainLog:
    """Masked-patch reconstruction with MSE on the masked patches only."""
    cfg = model.cfg
    n = len(history)
    if n == 0:
        raise ValueError("empty dataset")
    params = [p for k, p in model.named_parameters().items() if not k.startswith("head")]
    opt = Adam(params, lr=cfg.lr_pretrain)
    rng = np.random.default_rng(cfg.seed + 2)
    log = log or TrainLog()
    model.train()
    hist = np.asarray(history, dtype=np.float64)
    target = hist.reshape(n, cfg.n_patches, cfg.patch)
    for ep in range(epochs):
        order = rng.permutation(n)
        tot, cnt = 0.0, 0
        for i in range(0, n, cfg.batch):
            idx = order[i:i + cfg.batch]
            mask = mask_positions(cfg, len(idx), rng)
            opt.zero_grad()
            rec = model.reconstruct(model.encode(images[idx], hist[idx], mask))
            m = np.broadcast_to(mask[:, :, None], rec.shape) if mask.any() else None
            loss = ad.mse(rec, target[idx], m)
            if not np.isfinite(loss.data):
                raise FloatingPointError(
                    f"non-finite reconstruction loss at epoch {ep}; try lr < {cfg.lr_pretrain}")
            loss.backward()
            opt.step()
            tot += float(loss.data) * len(idx)
            cnt += len(idx)
        log.epochs.append(ep)
        log.losses.append(tot / cnt)
    model.pretrained = True
    model.eval()
    return log


def finetune_forecast(model: GhiTransformer, images, history, targets, epochs=10,
                      log: TrainLog | None = None) -> TrainLog:
    """Train only a fresh forecasting head (dropout + affine) with MSE.

    The head regresses the increment over the last observed value, so an
    untrained head reproduces persistence. Its input is standardised with
    statistics of the (frozen) training features. The learning rate decays
    linearly to zero over the run.
    """
    cfg = model.cfg
    frozen = {k: v.data.copy() for k, v in model.encoder_parameters().items()}
    head = model.attach_forecast_head()
    opt = Adam(head.parameters(), lr=cfg.lr_finetune)
    rng = np.random.default_rng(cfg.seed + 3)
    log = log or TrainLog()
    n = len(history)
    targets = np.asarray(targets, dtype=np.float64)
    # the encoder is frozen, so its (dropout-free) output can be computed once
    model.eval()
    model.feat_mean = model.feat_std = None
    feats = np.concatenate([model.features(images[i:i + 64], history[i:i + 64])
                            for i in range(0, n, 64)])
    model.feat_mean = feats.mean(axis=0)
    model.feat_std = feats.std(axis=0) + 1e-6
    feats = (feats - model.feat_mean) / model.feat_std
    resid = targets - np.asarray(history, dtype=np.float64)[:, -1:]
    steps = epochs * int(math.ceil(n / cfg.batch))
    step = 0
    for ep in range(epochs):
        order = rng.permutation(n)
        tot = 0.0
        for i in range(0, n, cfg.batch):
            idx = order[i:i + cfg.batch]
            opt.lr = cfg.lr_finetune * (1.0 - step / steps)   # linear decay to 0
            step += 1
            opt.zero_grad()
            x = ad.dropout(ad.Tensor(feats[idx]), cfg.dropout, model.rng, True)
            loss = ad.mse(head(x), resid[idx])
            loss.backward()
            opt.step()
            tot += float(loss.data) * len(idx)
        log.epochs.append(ep)
        log.losses.append(tot / n)
    for k, v in model.encoder_parameters().items():
        if not np.array_equal(v.data, frozen[k]):
            raise RuntimeError(f"frozen parameter {k} changed during finetuning")
    model.eval()
    return log


def save_ghi(model: GhiTransformer, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_path = out_dir / "config.json"
    cfg_path.write_text(json.dumps(asdict(model.cfg), sort_keys=True) + "\n")
    blob, idx = out_dir / "weights.f64", out_dir / "weights.csv"
    state = model.state()
    if model.feat_mean is not None:
        state["feat.mean"], state["feat.std"] = model.feat_mean, model.feat_std
    save_weights(state, blob, idx)
    return [cfg_path, blob, idx]


def load_ghi(model_dir) -> GhiTransformer:
    """A finetuned model as written by :func:`save_ghi`."""
    model_dir = Path(model_dir)
    d = json.loads((model_dir / "config.json").read_text())
    cfg = GhiConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})
    model = GhiTransformer(cfg)
    model.pretrained = True
    model.attach_forecast_head()
    state = load_weights(model_dir / "weights.f64", model_dir / "weights.csv")
    model.feat_mean = state.pop("feat.mean", None)
    model.feat_std = state.pop("feat.std", None)
    model.load_state(state)
    model.eval()
    return model

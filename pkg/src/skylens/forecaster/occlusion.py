"""CNN-MLP sun-occlusion forecaster over sheared space-time windows."""

from __future__ import annotations

import warnings
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import io as _io
from ..harness.metrics import roc_auc
from . import autodiff as ad
from .nn import Adam, Conv2d, Linear, Module, load_weights, save_weights
from ..spacetime import ShearedWindow, ratio_trace, horizon_scores, red_blue_ratio

N_CHANNELS = 3


@dataclass(frozen=True)
class OcclusionConfig:
    rows: int = 16            # most recent past slices fed to the conv trunk
    horizon: int = 60
    conv: tuple = (8, 16)
    hidden: int = 16
    dropout: float = 0.3
    lr: float = 1e-3
    weight_decay: float = 1e-3
    batch: int = 32
    epochs: int = 20
    seed: int = 0
    members: int = 3          # independently seeded models averaged at prediction
    val_fraction: float = 0.25  # training days held out to pick the shrinkage
    alpha_grid: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    alpha_window: int = 5       # alpha[h] maximises mean validation AUC over h +- window

    @property
    def width(self) -> int:
        return self.rows + self.horizon


def window_features(window: ShearedWindow, rows: int):
    """Image ``(3, rows, rows + N)`` and side vector ``(2N + 1,)`` for one anchor.

    Channels: colour ratio, log brightness, validity flag; the image covers
    the last ``rows`` past slices and columns ``T - rows + 1 .. T + N``.
    The side vector holds the back-projected trace at each horizon (absent
    columns repeat the last defined value), the fraction of valid rows per
    horizon column, and tan(theta) / 10.
    """
    tau, n = window.tau_max, window.horizon
    if rows > tau + 1:
        raise ValueError("rows exceeds the window's past extent")
    sl_t = slice(tau + 1 - rows, tau + 1)
    sl_c = slice(tau + 1 - rows, tau + n + 1)
    vals = window.values[sl_t, sl_c]
    ok = window.valid[sl_t, sl_c]
    ratio = np.where(ok, red_blue_ratio(vals), 0.0)
    bright = np.where(ok, np.log1p(vals.sum(axis=-1)), 0.0)
    img = np.stack([ratio, bright, ok.astype(np.float64)])
    tr = ratio_trace(window)
    sc = horizon_scores(tr, window.anchor, n)
    sc = np.where(np.isfinite(sc), sc, 0.0)
    cnt = tr.counts[tau + 1:] / float(tau + 1)
    side = np.concatenate([sc, cnt, [np.tan(np.radians(window.theta_deg)) / 10.0]])
    return img, side


@dataclass
class Standardizer:
    img_mean: np.ndarray
    img_std: np.ndarray
    side_mean: np.ndarray
    side_std: np.ndarray

    @classmethod
    def fit(cls, imgs, sides):
        im = imgs.mean(axis=(0, 2, 3))
        isd = imgs.std(axis=(0, 2, 3)) + 1e-6
        return cls(im, isd, sides.mean(axis=0), sides.std(axis=0) + 1e-6)

    def apply(self, imgs, sides):
        return ((imgs - self.img_mean[None, :, None, None]) / self.img_std[None, :, None, None],
                (sides - self.side_mean) / self.side_std)


class OcclusionModel(Module):
    """Two conv/relu/pool stages, then an MLP on [conv features || side vector].

    The logits split into a base term, a negatively scaled copy of the
    back-projected trace per horizon (so on its own it ranks anchors exactly
    as back-projection does), and the network's correction.
    """

    def __init__(self, cfg: OcclusionConfig = OcclusionConfig()):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.rng = np.random.default_rng(cfg.seed + 1)
        c1, c2 = cfg.conv
        self.conv1 = self.child("conv1", Conv2d(N_CHANNELS, c1, rng))
        self.conv2 = self.child("conv2", Conv2d(c1, c2, rng))
        h, w = cfg.rows // 4, cfg.width // 4
        n_side = 2 * cfg.horizon + 1
        self.fc1 = self.child("fc1", Linear(c2 * h * w + n_side, cfg.hidden, rng))
        self.fc2 = self.child("fc2", Linear(cfg.hidden, cfg.horizon, rng))
        # skip weight is -softplus(raw) < 0; raw = log(e - 1) gives -1
        self.skip_raw = self.param("skip_raw", np.full(cfg.horizon, np.log(np.e - 1.0)))
        self.norm: Standardizer | None = None

    def logit_parts(self, img, side):
        """``(base, correction)``; the logits are their sum."""
        x = ad.maxpool2(ad.relu(self.conv1(img)))
        x = ad.maxpool2(ad.relu(self.conv2(x)))
        b = x.shape[0]
        x = ad.reshape(x, (b, -1))
        x = ad.concat([x, ad.as_tensor(side)], axis=1)
        x = ad.dropout(ad.relu(self.fc1(x)), self.cfg.dropout, self.rng, self.training)
        trace = ad.Tensor(np.asarray(side)[:, : self.cfg.horizon])
        base = self.fc2.bias - trace * ad.softplus(self.skip_raw)
        return base, ad.matmul(x, self.fc2.weight)

    def logits(self, img, side):
        base, corr = self.logit_parts(img, side)
        return base + corr

    def predict_parts(self, imgs, sides, batch=256):
        """Numpy ``(base, correction)`` logits for raw (unstandardised) inputs."""
        if self.norm is not None:
            imgs, sides = self.norm.apply(imgs, sides)
        was = self.training
        self.eval()
        bs, cs = [], []
        for i in range(0, len(imgs), batch):
            b, c = self.logit_parts(ad.Tensor(imgs[i:i + batch]), sides[i:i + batch])
            bs.append(np.broadcast_to(b.data, c.shape))
            cs.append(c.data)
        self.train(was)
        if not bs:
            z = np.zeros((0, self.cfg.horizon))
            return z, z
        return np.concatenate(bs), np.concatenate(cs)

    def predict_proba(self, imgs, sides, batch=256):
        """Occlusion probabilities, shape ``(n, N)``, each in [0, 1]."""
        b, c = self.predict_parts(imgs, sides, batch)
        return ad._sigmoid(b + c)


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    losses: list = field(default_factory=list)

    def rows(self):
        return [[e, repr(float(l))] for e, l in zip(self.epochs, self.losses)]


def train_occlusion(model: OcclusionModel, imgs, sides, labels, epochs=None, standardize=True,
                    log: TrainLog | None = None) -> TrainLog:
    """Mini-batch Adam on mean binary cross-entropy; deterministic in ``cfg.seed``."""
    cfg = model.cfg
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape[1:] != (cfg.horizon,):
        raise ValueError(f"labels must be (n, {cfg.horizon}), got {labels.shape}")
    if labels.min() == labels.max():
        warnings.warn("single-class training labels; the model will learn the prior only")
    if standardize:
        model.norm = Standardizer.fit(imgs, sides)
        imgs, sides = model.norm.apply(imgs, sides)
    opt = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 2)
    log = log or TrainLog()
    model.train()
    n = len(imgs)
    for ep in range(cfg.epochs if epochs is None else epochs):
        order = rng.permutation(n)
        tot = 0.0
        for i in range(0, n, cfg.batch):
            idx = order[i:i + cfg.batch]
            opt.zero_grad()
            loss = ad.bce_with_logits(model.logits(ad.Tensor(imgs[idx]), sides[idx]), labels[idx])
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite loss at epoch {ep}; lower the learning rate")
            loss.backward()
            opt.step()
            tot += float(loss.data) * len(idx)
        log.epochs.append(len(log.epochs))
        log.losses.append(tot / n)
    model.eval()
    return log


class OcclusionEnsemble:
    """Average of ``cfg.members`` models that differ only in their seed.

    Each horizon's network correction is scaled by ``alpha[h]``. With day
    groups and ``cfg.val_fraction > 0``, :meth:`fit` picks ``alpha[h]`` from
    ``cfg.alpha_grid`` by AUC on held-out training days (ties go to the
    smaller value), then refits on all training days. ``alpha = 0``
    reproduces the back-projection ranking.
    """

    def __init__(self, cfg: OcclusionConfig = OcclusionConfig()):
        if cfg.members < 1:
            raise ValueError("members must be >= 1")
        self.cfg = cfg
        self.models = [OcclusionModel(replace(cfg, seed=cfg.seed + 1000 * k))
                       for k in range(cfg.members)]
        self.alpha = np.ones(cfg.horizon)

    def _parts(self, models, imgs, sides):
        parts = [m.predict_parts(imgs, sides) for m in models]
        return np.array([p[0] for p in parts]), np.array([p[1] for p in parts])

    @staticmethod
    def _mix(base, corr, alpha):
        return ad._sigmoid(base + alpha * corr).mean(axis=0)

    def select_alpha(self, imgs, sides, labels, groups) -> np.ndarray:
        cfg = self.cfg
        days = np.unique(groups)
        n_val = int(round(cfg.val_fraction * len(days)))
        alpha = np.ones(cfg.horizon)
        if n_val < 1 or n_val >= len(days):
            return alpha
        rng = np.random.default_rng(cfg.seed + 7)
        val_days = rng.choice(days, n_val, replace=False)
        val = np.isin(groups, val_days)
        inner = [OcclusionModel(replace(cfg, seed=cfg.seed + 1000 * k + 500))
                 for k in range(cfg.members)]
        for m in inner:
            train_occlusion(m, imgs[~val], sides[~val], labels[~val])
        base, corr = self._parts(inner, imgs[val], sides[val])
        y = labels[val].astype(bool)
        grid = sorted(cfg.alpha_grid)
        table = np.full((cfg.horizon, len(grid)), np.nan)
        for h in range(cfg.horizon):
            if y[:, h].all() or not y[:, h].any():
                continue
            table[h] = [roc_auc(-self._mix(base[:, :, h], corr[:, :, h], a), y[:, h]).auc
                        for a in grid]
        w = cfg.alpha_window
        for h in range(cfg.horizon):
            blk = table[max(h - w, 0):h + w + 1]
            blk = blk[np.isfinite(blk).all(axis=1)]
            if len(blk):
                alpha[h] = grid[int(np.argmax(blk.mean(axis=0)))]
        return alpha

    def fit(self, imgs, sides, labels, groups=None) -> list:
        labels = np.asarray(labels, dtype=np.float64)
        if groups is not None and self.cfg.val_fraction > 0:
            self.alpha = self.select_alpha(imgs, sides, labels, np.asarray(groups))
        return [train_occlusion(m, imgs, sides, labels) for m in self.models]

    def predict_proba(self, imgs, sides) -> np.ndarray:
        base, corr = self._parts(self.models, imgs, sides)
        return self._mix(base, corr, self.alpha)


def _config_from_dict(cls, d):
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def save_ensemble(ens: OcclusionEnsemble, out_dir) -> list:
    """One weight blob + index per member (standardiser included); returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "config.json"]
    paths[0].write_text(json.dumps(asdict(ens.cfg), sort_keys=True) + "\n")
    for k, m in enumerate(ens.models):
        state = m.state()
        if m.norm is not None:
            for name, arr in asdict(m.norm).items():
                state[f"norm.{name}"] = arr
        blob, idx = out_dir / f"member{k}.f64", out_dir / f"member{k}.csv"
        save_weights(state, blob, idx)
        paths += [blob, idx]
    ap = out_dir / "alpha.csv"
    _io.write_csv(ap, ["horizon", "alpha"], [[h + 1, _io.fmt(a)] for h, a in enumerate(ens.alpha)])
    return paths + [ap]


def load_ensemble(model_dir) -> OcclusionEnsemble:
    model_dir = Path(model_dir)
    cfg = _config_from_dict(OcclusionConfig, json.loads((model_dir / "config.json").read_text()))
    ens = OcclusionEnsemble(cfg)
    for k, m in enumerate(ens.models):
        state = load_weights(model_dir / f"member{k}.f64", model_dir / f"member{k}.csv")
        norm = {n[5:]: state.pop(n) for n in list(state) if n.startswith("norm.")}
        m.load_state(state)
        m.norm = Standardizer(**norm) if norm else None
        m.eval()
    _, rows = _io.read_csv(model_dir / "alpha.csv")
    ens.alpha = np.array([float(r[1]) for r in rows])
    return ens

"""Experiment orchestration: occlusion (AUC) and GHI (nRMSE) horizon tables."""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import mirror as _mirror

from ..forecaster import ghi as _ghi
from ..forecaster.baselines import persistence
from ..forecaster.occlusion import OcclusionConfig, OcclusionEnsemble, window_features
from ..skysim.dataset import DayRanges, random_day_configs
from ..spacetime import (THETA_GRID, InsufficientData, calibrate_threshold, horizon_scores,
                         optimal_theta, ratio_trace, shear)
from .metrics import nrmse, roc_auc
from .simdata import SLICE_HALF_LEN
from .sources import SyntheticSource
from .tables import HorizonTable


def split_days(days, train_fraction=0.75, seed=0):
    """Day-level random partition; ``round(fraction * n)`` days go to training."""
    days = list(days)
    if not (0.0 < train_fraction < 1.0):
        raise ValueError("train_fraction must lie in (0, 1)")
    if len(days) < 2:
        raise ValueError("need at least 2 days")
    n_train = min(max(int(round(train_fraction * len(days))), 1), len(days) - 1)
    perm = np.random.default_rng(seed).permutation(len(days))
    train = [days[i] for i in sorted(perm[:n_train])]
    test = [days[i] for i in sorted(perm[n_train:])]
    return train, test


@dataclass(frozen=True)
class SimExperimentConfig:
    seed: int = 7
    n_days: int = 28
    resolution: int = 256
    train_fraction: float = 0.75
    stride: int = 10
    tau_max: int = 200
    horizon: int = 60
    half_len: int = SLICE_HALF_LEN
    band: int = 1
    theta_grid: tuple = THETA_GRID
    mirrors: tuple = ("designed", "hemisphere")
    methods: tuple = ("backprojection", "cnn-mlp")
    occlusion: OcclusionConfig = OcclusionConfig()
    ranges: DayRanges = DayRanges()
    shuffle_labels: bool = False

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class AnchorSet:
    """Everything computed per anchor for one mirror over a set of days."""

    day: list = field(default_factory=list)
    anchor: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    bp: list = field(default_factory=list)
    imgs: list = field(default_factory=list)
    sides: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    skipped: int = 0

    def arrays(self):
        return (np.array(self.bp), np.array(self.imgs), np.array(self.sides),
                np.array(self.labels, dtype=bool))


def anchors_for(n_frames, tau_max, horizon, stride):
    return list(range(tau_max, n_frames - horizon, stride))


def collect_anchors(simday, cfg: SimExperimentConfig, out: AnchorSet):
    st = simday.spacetime
    for T in anchors_for(st.n_frames, cfg.tau_max, cfg.horizon, cfg.stride):
        try:
            theta, _ = optimal_theta(st, T, cfg.theta_grid, cfg.tau_max, cfg.horizon)
        except InsufficientData:
            out.skipped += 1
            continue
        win = shear(st, theta, T, cfg.tau_max, cfg.horizon)
        sc = horizon_scores(ratio_trace(win), T, cfg.horizon)
        if not np.all(np.isfinite(sc)):
            out.skipped += 1
            continue
        img, side = window_features(win, cfg.occlusion.rows)
        out.day.append(simday.index)
        out.anchor.append(T)
        out.theta.append(theta)
        out.bp.append(sc)
        out.imgs.append(img)
        out.sides.append(side)
        out.labels.append(simday.occluded[T + 1:T + cfg.horizon + 1])
    return out


def confident_horizon(aucs, level=0.9) -> int:
    """Number of leading horizons whose AUC stays >= level (0 if the first fails)."""
    k = 0
    for a in aucs:
        if not (np.isfinite(a) and a >= level):
            break
        k += 1
    return k


def _auc_row(scores, labels):
    out, cnt = [], []
    for h in range(labels.shape[1]):
        y = labels[:, h]
        cnt.append(int(len(y)))
        if y.all() or not y.any():
            out.append(float("nan"))
        else:
            out.append(roc_auc(scores[:, h], y).auc)
    return np.array(out), np.array(cnt)


def gather_anchors(source, days, mirror, cfg: SimExperimentConfig, progress=None) -> AnchorSet:
    out = AnchorSet()
    for d in days:
        collect_anchors(source.load(d, mirror, cfg.half_len, cfg.band), cfg, out)
        if progress:
            progress(f"{mirror} day {d}")
    return out


@dataclass
class OcclusionFit:
    threshold: float
    model: OcclusionEnsemble | None
    losses: list


def fit_occlusion(train: AnchorSet, cfg: SimExperimentConfig, methods=None) -> OcclusionFit:
    """Back-projection threshold and CNN-MLP ensemble, fit on training anchors only."""
    methods = cfg.methods if methods is None else methods
    bp, img, side, y = train.arrays()
    if len(y) == 0:
        raise InsufficientData("no usable training anchors")
    thr = calibrate_threshold(bp.ravel(), y.ravel())
    model, losses = None, []
    if "cnn-mlp" in methods:
        model = OcclusionEnsemble(cfg.occlusion)
        losses = [lg.losses for lg in model.fit(img, side, y, groups=np.array(train.day))]
    return OcclusionFit(thr, model, losses)


def evaluate_occlusion(test: AnchorSet, fit: OcclusionFit, mirror, table: HorizonTable,
                       labels=None) -> dict:
    """Adds AUC (and back-projection accuracy) rows; returns confident horizons."""
    bp, img, side, y = test.arrays()
    y = y if labels is None else labels
    hs = [(k + 1) * 30 for k in range(y.shape[1])]
    info = {}
    auc, cnt = _auc_row(bp, y)
    acc = ((bp < fit.threshold) == y).mean(axis=0)
    for h, a, c, ac in zip(hs, auc, cnt, acc):
        table.add(h, "backprojection", mirror, "auc", a, c)
        table.add(h, "backprojection", mirror, "accuracy", ac, c)
    info["confident_backprojection"] = confident_horizon(auc)
    if fit.model is not None:
        auc, cnt = _auc_row(1.0 - fit.model.predict_proba(img, side), y)
        for h, a, c in zip(hs, auc, cnt):
            table.add(h, "cnn-mlp", mirror, "auc", a, c)
        info["confident_cnn-mlp"] = confident_horizon(auc)
    return info


def run_sim_experiment(cfg: SimExperimentConfig = SimExperimentConfig(),
                       optical: _mirror.OpticalConfig = _mirror.OpticalConfig(), progress=None,
                       source=None):
    """Back-projection and CNN-MLP occlusion forecasts for every mirror.

    ``source`` defaults to lazily simulated days drawn from ``cfg``. Returns
    ``(table, details)``; ``details`` holds per-mirror thresholds, train-day
    ids and confident horizons.
    """
    if source is None:
        source = SyntheticSource(cfg.seed, cfg.n_days, cfg.ranges, cfg.resolution, optical)
    train_days, test_days = split_days(source.days, cfg.train_fraction, cfg.seed)
    if min(len(train_days), len(test_days)) < 4:
        warnings.warn(f"only {len(train_days)}/{len(test_days)} train/test days; "
                      "at least 4 per split are needed for stable AUCs")
    table = HorizonTable()
    details = {"train_days": train_days, "test_days": test_days,
               "config_digest": cfg.digest(), "mirrors": {}}
    shuffle_rng = np.random.default_rng(cfg.seed + 99)
    for kind in cfg.mirrors:
        tr = gather_anchors(source, train_days, kind, cfg, progress)
        te = gather_anchors(source, test_days, kind, cfg, progress)
        if cfg.shuffle_labels:
            tr.labels = [tr.labels[i] for i in shuffle_rng.permutation(len(tr.labels))]
            te.labels = [te.labels[i] for i in shuffle_rng.permutation(len(te.labels))]
        fit = fit_occlusion(tr, cfg)
        info = {"n_train": len(tr.labels), "n_test": len(te.labels),
                "skipped": tr.skipped + te.skipped, "threshold": fit.threshold}
        info.update(evaluate_occlusion(te, fit, kind, table))
        if fit.losses:
            info["train_loss"] = float(np.mean([l[-1] for l in fit.losses]))
        if "backprojection" not in cfg.methods:
            table.rows = [r for r in table.rows if r[1] != "backprojection"]
        details["mirrors"][kind] = info
    return table, details


@dataclass(frozen=True)
class GhiExperimentConfig:
    seed: int = 7
    n_days: int = 28
    resolution: int = 256
    train_fraction: float = 0.75
    stride: int = 10
    mirror: str = "designed"
    half_len: int = 48
    pretrain_epochs: int = 8
    finetune_epochs: int = 30
    model: _ghi.GhiConfig = _ghi.GhiConfig()
    ranges: DayRanges = DayRanges()
    g0: float = 1000.0

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def ghi_samples(simday, cfg: _ghi.GhiConfig, stride=10, g0=1000.0, half_len=None):
    """Slice windows, normalised GHI histories and targets for every usable anchor.

    Windows containing any invalid slice sample are skipped.
    """
    st = simday.spacetime
    L = st.half_len
    hl = (cfg.image_rows - 1) // 2 if half_len is None else half_len
    if 2 * hl + 1 != cfg.image_rows:
        raise ValueError("image_rows must equal 2 * half_len + 1")
    imgs, hist, targ, anchors = [], [], [], []
    g = simday.ghi / g0
    for T in range(cfg.history - 1, st.n_frames - cfg.horizon, stride):
        cols = slice(T - cfg.history + 1, T + 1)
        rows = slice(L - hl, L + hl + 1)
        if not st.valid[rows, cols].all():
            continue
        win = st.data[rows, cols]                       # (rows, history, 3)
        imgs.append(np.log1p(win).transpose(2, 0, 1))
        hist.append(g[cols])
        targ.append(g[T + 1:T + cfg.horizon + 1])
        anchors.append(T)
    shape = (0, 3, cfg.image_rows, cfg.history)
    return (np.array(imgs) if imgs else np.zeros(shape), np.array(hist), np.array(targ),
            np.array(anchors, dtype=int))


def gather_ghi(source, days, cfg: GhiExperimentConfig, progress=None):
    parts = []
    for d in days:
        sd = source.load(d, cfg.mirror, max(cfg.half_len, (cfg.model.image_rows - 1) // 2))
        parts.append(ghi_samples(sd, cfg.model, cfg.stride, cfg.g0, cfg.half_len))
        if progress:
            progress(f"ghi day {d}")
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def fit_ghi(images, history, targets, cfg: GhiExperimentConfig):
    model = _ghi.GhiTransformer(cfg.model)
    plog = _ghi.pretrain_reconstruction(model, images, history, cfg.pretrain_epochs)
    flog = _ghi.finetune_forecast(model, images, history, targets, cfg.finetune_epochs)
    return model, plog, flog


def run_ghi_experiment(cfg: GhiExperimentConfig = GhiExperimentConfig(),
                       optical: _mirror.OpticalConfig = _mirror.OpticalConfig(),
                       methods=("persistence", "transformer"), progress=None, source=None):
    """nRMSE per horizon for persistence and the finetuned transformer on held-out days."""
    if source is None:
        source = SyntheticSource(cfg.seed, cfg.n_days, cfg.ranges, cfg.resolution, optical)
    train_days, test_days = split_days(source.days, cfg.train_fraction, cfg.seed)
    img_tr, h_tr, y_tr = gather_ghi(source, train_days, cfg, progress)
    img_te, h_te, y_te = gather_ghi(source, test_days, cfg, progress)
    if len(h_tr) == 0 or len(h_te) == 0:
        raise InsufficientData("no complete GHI windows in one of the splits")
    table = HorizonTable()
    hs = [(k + 1) * 30 for k in range(cfg.model.horizon)]
    actual = y_te * cfg.g0
    details = {"train_days": train_days, "test_days": test_days, "n_train": int(len(h_tr)),
               "n_test": int(len(h_te)), "config_digest": cfg.digest()}
    if "persistence" in methods:
        pred = np.stack([persistence(h[-1] * cfg.g0, cfg.model.horizon) for h in h_te])
        for k, h in enumerate(hs):
            table.add(h, "persistence", cfg.mirror, "nrmse", nrmse(pred[:, k], actual[:, k]),
                      len(actual))
    if "transformer" in methods:
        model, plog, flog = fit_ghi(img_tr, h_tr, y_tr, cfg)
        pred = model.predict(img_te, h_te, cfg.g0)
        for k, h in enumerate(hs):
            table.add(h, "transformer", cfg.mirror, "nrmse", nrmse(pred[:, k], actual[:, k]),
                      len(actual))
        details["pretrain_loss"] = plog.losses
        details["finetune_loss"] = flog.losses
    return table, details

"""Command-line entry point: ``skylens <subcommand> ...``.

Every subcommand accepts ``--seed`` and writes a ``RunManifest`` next to its
outputs. Failures print a single ``skylens <cmd>: error: ...`` line to stderr
and exit with status 1; usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import warnings
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import io as _io
from . import mirror as _mirror
from .harness import experiment as _exp
from .harness.runmanifest import RunManifest
from .harness.sources import DiskSource, SyntheticSource, load_simday
from .harness.tables import HorizonTable, write_svg

# ---------------------------------------------------------------- config


def _coerce(default, text):
    if isinstance(default, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        kind = type(default[0]) if default else str
        return tuple(kind(t) for t in items)
    return type(default)(text)


def _override(obj, section, name):
    known = {f.name for f in fields(obj)}
    kw = {}
    for key, text in section.items():
        if key not in known:
            raise ValueError(f"unknown key {key!r} in [{name}]")
        kw[key] = _coerce(getattr(obj, key), text)
    return replace(obj, **kw)


def load_configs(path, seed):
    """Experiment configs with overrides from an INI file.

    Sections: ``[experiment]`` and ``[occlusion]`` for the occlusion study,
    ``[ghi_experiment]`` and ``[ghi]`` for the irradiance study, ``[scene]``
    for the day-parameter ranges. ``seed`` always wins over the file.
    """
    sim, ghi = _exp.SimExperimentConfig(), _exp.GhiExperimentConfig()
    if path is not None:
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise FileNotFoundError(f"config not found: {path}")
        for name in cp.sections():
            if name not in ("experiment", "occlusion", "ghi_experiment", "ghi", "scene"):
                raise ValueError(f"unknown config section [{name}]")
        sec = lambda n: dict(cp[n]) if cp.has_section(n) else {}
        ranges = _override(sim.ranges, sec("scene"), "scene")
        sim = _override(sim, sec("experiment"), "experiment")
        sim = replace(sim, occlusion=_override(sim.occlusion, sec("occlusion"), "occlusion"),
                      ranges=ranges)
        ghi = _override(ghi, sec("ghi_experiment"), "ghi_experiment")
        ghi = replace(ghi, model=_override(ghi.model, sec("ghi"), "ghi"), ranges=ranges)
    return replace(sim, seed=seed), replace(ghi, seed=seed)


def _snapshot(obj):
    return json.loads(json.dumps(asdict(obj), sort_keys=True, default=str))


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _source(args, sim_cfg):
    if getattr(args, "manifest", None):
        missing = [p for p in args.manifest if not Path(p).exists()]
        if missing:
            raise FileNotFoundError(f"manifest not found: {missing[0]}")
        return DiskSource.from_paths(args.manifest)
    if getattr(args, "synthetic", None):
        return SyntheticSource(sim_cfg.seed, args.synthetic, sim_cfg.ranges, sim_cfg.resolution)
    return DiskSource(args.data if args.data is not None else _io.data_dir())


# ---------------------------------------------------------------- commands


def cmd_design_mirror(args):
    cfg = _mirror.OpticalConfig.from_full_fovs(args.target_fov, args.camera_fov, args.height)
    if args.kind == "designed":
        prof = _mirror.solve_profile(cfg, args.step)
    else:
        prof = _mirror.matched_hemisphere(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fit = _mirror.fit_conic_and_export(prof, out)
    mapping = _mirror.forward_trace_mapping(prof, cfg)
    summary = {"kind": args.kind, "conic": fit.kind, "eccentricity": fit.eccentricity,
               "conic_rms_m": fit.rms_residual, "rim_radius_m": prof.rim_radius,
               "samples": len(prof),
               "max_linearity_residual": mapping.linearity_residual(cfg.tan_target)}
    side = out.with_suffix(".summary.json")
    _dump_json(side, summary)
    print(f"{args.kind}: {fit.kind} e={fit.eccentricity:.4f} rms={fit.rms_residual:.2e} m "
          f"rim={prof.rim_radius:.5f} m -> {out}")
    man = RunManifest("design-mirror", {**vars_of(args), "optical": _snapshot(cfg)}, args.seed)
    man.add_artifact(out)
    man.add_artifact(side)
    man.write(out.with_suffix(".run.json"))


def cmd_render_dataset(args):
    from .skysim.dataset import DayRanges, random_day_configs, simulate_day

    out = Path(args.out) if args.out is not None else _io.data_dir()
    mirrors = ("designed", "hemisphere") if args.mirror == "both" else (args.mirror,)
    days = random_day_configs(args.seed, args.days, DayRanges())
    man = RunManifest("render-dataset", vars_of(args), args.seed)
    for d in days:
        res = simulate_day(d, out, mirrors, resolution=args.resolution, seed=args.seed,
                           max_frames=args.max_frames, previews=args.previews)
        for kind in res:
            stem = out / f"day{d.index:02d}_{kind}"
            man.add_artifact(stem.with_suffix(".csv"))
            man.add_artifact(stem.with_suffix(".json"))
            man.add_artifact(stem)
        print(f"day {d.index:02d}: {len(res[mirrors[0]])} frames x {len(mirrors)} mirrors")
    man.write(out)


def cmd_preprocess(args):
    from .preprocess import detect_sun, estimate_flow, estimate_wind, fit_sun_track, rim_mask
    from .skysim.dataset import load_manifest
    from .skysim.hdr import bracket_exposures, shortest_exposure

    man = load_manifest(args.manifest)
    out = Path(args.out) if args.out else Path(args.manifest).with_suffix(".meta")
    out.mkdir(parents=True, exist_ok=True)
    stops = tuple(float(s) for s in args.stops.split(","))
    dets, fused = [], {}
    n = len(man)
    pair_ids = sorted({int(i) for i in np.linspace(0, n - 2, min(args.flow_pairs, n - 1))})
    need = set(pair_ids) | {i + 1 for i in pair_ids}
    shape = None
    for i in range(n):
        stack = bracket_exposures(man.frame(i), stops)
        shape = stack.fused.shape[:2]
        sp = detect_sun(shortest_exposure(stack))
        if sp is not None:
            dets.append((man.records[i].timestamp, sp[0], sp[1]))
        if i in need:
            fused[i] = stack.fused
    _io.write_csv(out / "detections.csv", ["timestamp_s", "sun_x", "sun_y"],
                  [[_io.fmt(t), _io.fmt(x), _io.fmt(y)] for t, x, y in dets])
    track = fit_sun_track(dets, args.degree, seed=args.seed, image_shape=shape)
    track.write_csv(out / "sun_track.csv")
    flows = []
    for i in pair_ids:
        a, b = fused[i], fused[i + 1]
        static = rim_mask(shape) | (a.sum(axis=-1) <= 0)
        flows.append(estimate_flow(a, b, static))
    wind = estimate_wind(flows, rim_mask(shape), median_window=len(flows))
    wind.write_csv(out / "wind.csv")
    print(f"{len(dets)}/{n} sun detections, inliers {track.inlier_fraction:.2f}, "
          f"wind {wind.direction:.1f} deg at {wind.speed:.2f} px/frame -> {out}")
    rm = RunManifest("preprocess", vars_of(args), args.seed)
    rm.add_input(args.manifest)
    for name in ("detections.csv", "sun_track.csv", "wind.csv"):
        rm.add_artifact(out / name)
    rm.write(out)


def _theta_grid(text):
    parts = [float(p) for p in text.split(":")]
    if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
        raise ValueError(f"--theta-sweep expects start:stop:step, got {text!r}")
    lo, hi, step = parts
    return tuple(float(v) for v in np.round(np.arange(lo, hi + step / 2, step), 9))


def _read_threshold(model_dir, mirror):
    p = Path(model_dir) / f"occlusion_{mirror}" / "model.json"
    if not p.exists():
        raise FileNotFoundError(f"no occlusion model for mirror {mirror!r}: {p}")
    return float(json.loads(p.read_text())["threshold"])


def cmd_slice(args):
    from .spacetime import InsufficientData, backproject_predict

    grid = _theta_grid(args.theta_sweep)
    meta = Path(args.meta) if args.meta else None
    if meta is None and Path(args.manifest).with_suffix(".meta").is_dir():
        meta = Path(args.manifest).with_suffix(".meta")
    sd = load_simday(args.manifest, args.half_len, args.band, meta)
    thr = _read_threshold(args.model, sd.mirror) if args.model else args.threshold
    out = Path(args.out) if args.out else Path(args.manifest).with_suffix(".slices")
    (out / "backprojection").mkdir(parents=True, exist_ok=True)
    st = sd.spacetime
    st.write(out / "spacetime")
    rows = []
    arts = [out / "spacetime.pfm", out / "spacetime.csv", out / "spacetime.json"]
    for T in _exp.anchors_for(st.n_frames, args.tau_max, args.horizon, args.stride):
        try:
            bp = backproject_predict(st, T, args.horizon, args.tau_max, thr, grid)
        except InsufficientData:
            rows.append([T, "", ""])
            continue
        p = out / "backprojection" / f"anchor_{T:04d}.csv"
        bp.write_csv(p, st.t0)
        arts.append(p)
        rows.append([T, _io.fmt(bp.theta_deg), int(bp.occluded.any())])
    _io.write_csv(out / "anchors.csv", ["anchor", "theta_deg", "any_occluded"], rows)
    arts.append(out / "anchors.csv")
    print(f"{sum(1 for r in rows if r[1] != '')}/{len(rows)} anchors sliced -> {out}")
    rm = RunManifest("slice", {**vars_of(args), "theta_grid": list(grid), "threshold": thr},
                     args.seed)
    rm.add_input(args.manifest)
    for a in arts:
        rm.add_artifact(a)
    rm.write(out)


def cmd_train(args):
    from .forecaster.ghi import save_ghi
    from .forecaster.occlusion import save_ensemble

    sim_cfg, ghi_cfg = load_configs(args.config, args.seed)
    source = _source(args, sim_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rm = RunManifest("train", {**vars_of(args), "experiment": _snapshot(sim_cfg),
                               "ghi_experiment": _snapshot(ghi_cfg)}, args.seed)
    for p in source.inputs():
        rm.add_input(p)
    arts = []
    if args.task == "occlusion":
        train_days, test_days = _exp.split_days(source.days, sim_cfg.train_fraction, args.seed)
        mirrors = sim_cfg.mirrors if args.mirror == "both" else (args.mirror,)
        for kind in mirrors:
            tr = _exp.gather_anchors(source, train_days, kind, sim_cfg)
            fit = _exp.fit_occlusion(tr, sim_cfg, methods=("backprojection", "cnn-mlp"))
            d = out / f"occlusion_{kind}"
            arts += save_ensemble(fit.model, d)
            _dump_json(d / "model.json", {"mirror": kind, "threshold": fit.threshold,
                                          "train_days": train_days, "n_train": len(tr.labels),
                                          "experiment": _snapshot(sim_cfg)})
            log = [[m, e, _io.fmt(l)] for m, ls in enumerate(fit.losses) for e, l in enumerate(ls)]
            _io.write_csv(d / "train_log.csv", ["member", "epoch", "loss"], log)
            arts += [d / "model.json", d / "train_log.csv"]
            print(f"occlusion/{kind}: {len(tr.labels)} anchors, threshold {fit.threshold:.4f}")
    else:
        train_days, test_days = _exp.split_days(source.days, ghi_cfg.train_fraction, args.seed)
        cfg = ghi_cfg if args.mirror == "both" else replace(ghi_cfg, mirror=args.mirror)
        img, hist, targ = _exp.gather_ghi(source, train_days, cfg)
        if len(hist) == 0:
            raise ValueError("no complete GHI windows on the training days")
        model, plog, flog = _exp.fit_ghi(img, hist, targ, cfg)
        d = out / "ghi"
        arts += save_ghi(model, d)
        _dump_json(d / "model.json", {"mirror": cfg.mirror, "g0": cfg.g0, "half_len": cfg.half_len,
                                      "train_days": train_days, "n_train": int(len(hist)),
                                      "experiment": _snapshot(cfg)})
        _io.write_csv(d / "pretrain_log.csv", ["epoch", "loss"], plog.rows())
        _io.write_csv(d / "finetune_log.csv", ["epoch", "loss"], flog.rows())
        arts += [d / "model.json", d / "pretrain_log.csv", d / "finetune_log.csv"]
        print(f"ghi/{cfg.mirror}: {len(hist)} windows, final loss {flog.losses[-1]:.4f}")
    split = out / f"split_{args.task}.json"
    _dump_json(split, {"train_days": train_days, "test_days": test_days})
    arts.append(split)
    for a in arts:
        rm.add_artifact(a)
    rm.write(out / f"run_manifest_{args.task}.json")


def cmd_evaluate(args):
    sim_cfg, ghi_cfg = load_configs(args.config, args.seed)
    if args.mirror != "both":
        sim_cfg = replace(sim_cfg, mirrors=(args.mirror,))
        ghi_cfg = replace(ghi_cfg, mirror=args.mirror)
    source = _source(args, sim_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    progress = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    table, details = HorizonTable(), {}
    if args.task in ("occlusion", "all"):
        t, det = _exp.run_sim_experiment(sim_cfg, progress=progress, source=source)
        table.rows += t.rows
        details["occlusion"] = det
        write_svg(t, "auc", out / "auc.svg", "occlusion AUC by horizon")
    if args.task in ("ghi", "all"):
        t, det = _exp.run_ghi_experiment(ghi_cfg, progress=progress, source=source)
        table.rows += t.rows
        details["ghi"] = det
        write_svg(t, "nrmse", out / "nrmse.svg", "GHI nRMSE by horizon")
    table.write_csv(out / "horizon_table.csv")
    _dump_json(out / "details.json", details)
    rm = RunManifest("evaluate", {**vars_of(args), "experiment": _snapshot(sim_cfg),
                                  "ghi_experiment": _snapshot(ghi_cfg)}, args.seed)
    for p in source.inputs():
        rm.add_input(p)
    for name in ("horizon_table.csv", "details.json", "auc.svg", "nrmse.svg"):
        if (out / name).exists():
            rm.add_artifact(out / name)
    rm.write(out)
    for key, det in details.items():
        if key == "occlusion":
            for kind, info in det["mirrors"].items():
                conf = {k[len("confident_"):]: v for k, v in info.items()
                        if k.startswith("confident_")}
                print(f"occlusion/{kind}: confident horizons (frames) {conf}")
    print(f"{len(table.rows)} table rows -> {out / 'horizon_table.csv'}")


def cmd_forecast(args):
    from .forecaster.ghi import load_ghi
    from .forecaster.baselines import persistence
    from .forecaster.occlusion import load_ensemble, window_features
    from .skysim.dataset import load_manifest
    from .spacetime import horizon_scores, optimal_theta, ratio_trace, shear

    model_dir = Path(args.model)
    if not model_dir.is_dir():
        raise FileNotFoundError(f"model directory not found: {model_dir}")
    occ_dir = None
    ghi_dir = model_dir / "ghi" if (model_dir / "ghi" / "model.json").exists() else None
    meta = Path(args.meta) if args.meta else None
    if meta is None and Path(args.manifest).with_suffix(".meta").is_dir():
        meta = Path(args.manifest).with_suffix(".meta")
    probe = load_manifest(args.manifest)
    if (model_dir / f"occlusion_{probe.mirror}" / "model.json").exists():
        occ_dir = model_dir / f"occlusion_{probe.mirror}"
    if ghi_dir is not None:
        if json.loads((ghi_dir / "model.json").read_text())["mirror"] != probe.mirror:
            ghi_dir = None
    if occ_dir is None and ghi_dir is None:
        raise FileNotFoundError(f"no model for mirror {probe.mirror!r} under {model_dir}")
    cols = {}
    n_frames = len(probe)
    anchor = args.anchor if args.anchor is not None else n_frames - 1
    if not (0 <= anchor < n_frames):
        raise ValueError(f"anchor {anchor} outside 0..{n_frames - 1}")
    horizon = None
    if occ_dir is not None:
        info = json.loads((occ_dir / "model.json").read_text())
        ex = info["experiment"]
        horizon, tau = int(ex["horizon"]), int(ex["tau_max"])
        sd = load_simday(args.manifest, int(ex["half_len"]), int(ex["band"]), meta)
        theta, _ = optimal_theta(sd.spacetime, anchor, tuple(ex["theta_grid"]), tau, horizon)
        win = shear(sd.spacetime, theta, anchor, tau, horizon)
        sc = horizon_scores(ratio_trace(win), anchor, horizon)
        ens = load_ensemble(occ_dir)
        img, side = window_features(win, ens.cfg.rows)
        cols["trace"] = sc
        cols["occluded_backprojection"] = np.where(np.isfinite(sc), sc < info["threshold"], False)
        cols["p_occluded"] = ens.predict_proba(img[None], side[None])[0]
    if ghi_dir is not None:
        info = json.loads((ghi_dir / "model.json").read_text())
        model = load_ghi(ghi_dir)
        cfg = model.cfg
        hl = int(info["half_len"])
        sd = load_simday(args.manifest, hl, 1, meta)
        st = sd.spacetime
        if anchor < cfg.history - 1:
            raise ValueError(f"anchor {anchor} needs {cfg.history} frames of history")
        cs = slice(anchor - cfg.history + 1, anchor + 1)
        win = np.where(st.valid[:, cs, None], st.data[:, cs], 0.0)
        img = np.log1p(win).transpose(2, 0, 1)[None]
        g0 = float(info["g0"])
        hist = (sd.ghi[cs] / g0)[None]
        cols["ghi_persistence"] = persistence(sd.ghi[anchor], cfg.horizon)
        cols["ghi_transformer"] = model.predict(img, hist, g0)[0]
        horizon = max(horizon or 0, cfg.horizon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["horizon_s"] + list(cols)
    rows = []
    for k in range(horizon):
        row = [_io.fmt((k + 1) * 30.0)]
        for name in cols:
            v = cols[name]
            if k >= len(v):
                row.append("")
            elif name.startswith("occluded"):
                row.append(int(v[k]))
            else:
                row.append(_io.fmt(v[k]))
        rows.append(row)
    _io.write_csv(out / "forecast.csv", header, rows)
    print(f"anchor {anchor}: {', '.join(cols)} -> {out / 'forecast.csv'}")
    rm = RunManifest("forecast", {**vars_of(args), "anchor": anchor}, args.seed)
    rm.add_input(args.manifest)
    for p in sorted(model_dir.rglob("*")):
        if p.is_file() and p.name != "run_manifest.json":
            rm.add_input(p)
    rm.add_artifact(out / "forecast.csv")
    rm.write(out)


# ---------------------------------------------------------------- parser


def vars_of(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skylens", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        sp.set_defaults(func=func)
        return sp

    sp = add("design-mirror", cmd_design_mirror, "solve a mirror profile and export it as CSV")
    sp.add_argument("--target-fov", type=float, default=170.0, help="full sky field, deg")
    sp.add_argument("--camera-fov", type=float, default=3.58, help="full camera field, deg")
    sp.add_argument("--height", type=float, default=1.0, help="camera height, m")
    sp.add_argument("--kind", choices=("designed", "hemisphere"), default="designed")
    sp.add_argument("--step", type=float, default=1e-4, help="integration step, m")
    sp.add_argument("--out", required=True)

    sp = add("render-dataset", cmd_render_dataset, "render seeded days to PFM frames")
    sp.add_argument("--days", type=int, default=28)
    sp.add_argument("--mirror", choices=("both", "designed", "hemisphere"), default="both")
    sp.add_argument("--resolution", type=int, default=256)
    sp.add_argument("--max-frames", type=int, default=None, help="truncate days (smoke runs)")
    sp.add_argument("--previews", action="store_true", help="also write 8-bit PPM previews")
    sp.add_argument("--out", default=None, help="default: $SKYLENS_DATA_DIR or ./data")

    sp = add("preprocess", cmd_preprocess, "sun track and wind estimate for one manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", default=None, help="default: <manifest>.meta/")
    sp.add_argument("--stops", default="-8,-4,0", help="bracket EVs, comma separated")
    sp.add_argument("--flow-pairs", type=int, default=21, help="frame pairs used for wind")
    sp.add_argument("--degree", type=int, default=2, help="sun-track polynomial degree")

    sp = add("slice", cmd_slice, "space-time image and back-projected forecasts")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--meta", default=None, help="preprocess output (default: <manifest>.meta/)")
    sp.add_argument("--theta-sweep", default="60:85:1", help="start:stop:step in degrees")
    sp.add_argument("--half-len", type=int, default=160)
    sp.add_argument("--band", type=int, default=1)
    sp.add_argument("--tau-max", type=int, default=200)
    sp.add_argument("--horizon", type=int, default=60)
    sp.add_argument("--stride", type=int, default=10)
    sp.add_argument("--threshold", type=float, default=0.0)
    sp.add_argument("--model", default=None, help="train output to take the threshold from")
    sp.add_argument("--out", default=None, help="default: <manifest>.slices/")

    for name, func, help_ in (("train", cmd_train, "fit a forecaster on the training days"),
                              ("evaluate", cmd_evaluate, "horizon tables on held-out days")):
        sp = add(name, func, help_)
        if name == "train":
            sp.add_argument("--task", choices=("occlusion", "ghi"), required=True)
        else:
            sp.add_argument("--task", choices=("occlusion", "ghi", "all"), default="all")
            sp.add_argument("-v", "--verbose", action="store_true")
        sp.add_argument("--config", default=None, help="INI overrides (see README)")
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--data", default=None, help="directory of dayNN_<mirror>.csv manifests")
        src.add_argument("--manifest", action="append", default=None,
                         help="explicit manifest (repeatable)")
        src.add_argument("--synthetic", type=int, default=None, metavar="N_DAYS",
                         help="simulate N days in memory instead of reading frames")
        sp.add_argument("--mirror", choices=("both", "designed", "hemisphere"), default="both")
        sp.add_argument("--out", required=True)

    sp = add("forecast", cmd_forecast, "occlusion and GHI forecasts at one anchor frame")
    sp.add_argument("--model", required=True, help="train output directory")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--meta", default=None)
    sp.add_argument("--anchor", type=int, default=None, help="frame index (default: last)")
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            args.func(args)
    except KeyboardInterrupt:
        print(f"skylens {args.command}: interrupted", file=sys.stderr)
        return 130
    except Exception as e:  # noqa: BLE001 - one-line diagnostic is the contract
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"skylens {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

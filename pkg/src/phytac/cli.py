"""Command-line entry point: ``phytac <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 missing artifact,
4 numerical failure, 1 any other pipeline error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from . import dataset, diffusion, experiment, geometry, metrics
from .config import load_config
from .errors import ConfigError, MissingArtifactError, PhytacError

log = logging.getLogger("phytac")


def _globals(p, suppress=True):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="YAML or JSON run configuration")
    p.add_argument("--seed", type=int, default=d, help="global seed (also the dataset seed)")
    p.add_argument("--out", default=d, help="output file or directory")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phytac", description="Physics-conditioned tactile grasping pipeline")
    _globals(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        _globals(p)
        return p

    cmd("gen-data", "synthesize a dataset directory")
    p = cmd("train-codec", "train the imprint codec")
    p.add_argument("--data", required=True)
    p = cmd("train-diffusion", "train the latent denoiser")
    p.add_argument("--data", required=True)
    p.add_argument("--codec", required=True)
    p = cmd("sample", "predict the goal imprint for one dataset record")
    p.add_argument("--data", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--diffusion", required=True)
    p.add_argument("--record", type=int, required=True)
    p = cmd("rank-poses", "rank grasp candidates of a scene file")
    p.add_argument("--scene", required=True)
    for k in ("alpha", "beta", "gamma", "delta"):
        p.add_argument(f"--{k}", type=float)
    p.add_argument("--top-n", type=int)
    p = cmd("run-grasp", "run closed-loop grasp episodes")
    p.add_argument("--data", required=True)
    p.add_argument("--codec")
    p.add_argument("--diffusion")
    p.add_argument("--episodes", type=int, default=10, help="episodes per texture class")
    p.add_argument("--goal", choices=["ldm", "oracle"])
    p.add_argument("--policy", choices=["phytac", "fixed-force", "open-loop"], default="phytac")
    p = cmd("eval", "image metrics of sampled goals on held-out records")
    p.add_argument("--codec", required=True)
    p.add_argument("--diffusion", required=True)
    p.add_argument("--records", type=int)
    p = cmd("report", "run the whole pipeline and write the report")
    p.add_argument("--data")
    p.add_argument("--codec")
    p.add_argument("--diffusion")
    return ap


def _config(args):
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        cfg.seed = args.seed
        cfg.data.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    return cfg


def _out(args, cfg, default_name):
    return Path(args.out) if getattr(args, "out", None) else Path(cfg.out) / default_name


def _cmd_gen_data(args, cfg):
    out = _out(args, cfg, "data")
    m = experiment.gen_data(cfg, out)
    print(f"wrote {m['record_count']} records to {out}")


def _cmd_train_codec(args, cfg):
    out = _out(args, cfg, "codec.phyt")
    _, hist = experiment.train_codec_stage(cfg, args.data, out, log.info)
    print(f"codec saved to {out}; final loss {hist.loss[-1]:.5f} (L1 {hist.l1[-1]:.5f})")


def _cmd_train_diffusion(args, cfg):
    out = _out(args, cfg, "denoiser.phyt")
    _, hist = experiment.train_diffusion_stage(cfg, args.data, args.codec, out, log.info)
    sm = hist.smoothed()
    print(f"denoiser saved to {out}; smoothed loss {sm[0]:.4f} -> {sm[-1]:.4f}")


def _cmd_sample(args, cfg):
    cp, dp = experiment.load_models(args.codec, args.diffusion)
    ds = dataset.Dataset(experiment._require(Path(args.data) / "manifest.json", "gen-data", "dataset").parent)
    if not 0 <= args.record < len(ds):
        raise ConfigError(f"--record must lie in [0, {len(ds)})")
    r = ds[args.record]
    _, x_hat = diffusion.sample_goal(dp, cp, r.imprint_current, r.patch.depth_image(), r.mass_kg,
                                     r.texture_class, cfg.diffusion.ddim_steps,
                                     experiment._stream(cfg, experiment.STREAM_SAMPLE).spawn(args.record))
    out = _out(args, cfg, f"sample_{args.record}.csv")
    rows, cols = x_hat.shape
    experiment.write_csv(out, ["row", "col", "x_c", "x_s", "x_hat_g"],
                         [(i, j, r.imprint_current[i, j], r.imprint_optimal[i, j], x_hat[i, j])
                          for i in range(rows) for j in range(cols)])
    m = metrics.image_metrics(x_hat, r.imprint_optimal)
    mi = metrics.image_metrics(r.imprint_current, r.imprint_optimal)
    print(f"record {args.record}: goal vs x_s  MAE {m.mae:.4f} SSIM {m.ssim:.4f}; "
          f"input vs x_s  MAE {mi.mae:.4f} SSIM {mi.ssim:.4f}; wrote {out}")


def _cmd_rank_poses(args, cfg):
    g = cfg.geometry
    w = {k: getattr(args, k) if getattr(args, k) is not None else getattr(g, k)
         for k in ("alpha", "beta", "gamma", "delta")}
    top_n = args.top_n if args.top_n is not None else g.top_n
    if top_n < 1:
        raise ConfigError("--top-n must be >= 1")
    path = Path(args.scene)
    if not path.exists():
        raise MissingArtifactError(f"scene file not found: {path}")
    scene = geometry.read_scene(path)
    patches = scene.patches(g.window_w, g.window_h, (g.grid_rows, g.grid_cols), g.contact_depth)
    raw = [geometry.measure_patch(p, g.k_neighbors) for p in patches]
    try:
        ranked = geometry.rank_candidates(scene.candidates, raw, **w)[:top_n]
    except ValueError as exc:
        raise ConfigError(f"ranking weights: {exc}") from exc
    rows = [(k + 1, r.index, r.candidate.score_s, r.metrics.s_rough, r.metrics.c_n, r.metrics.u_c,
             r.f_cost, r.w_p) for k, r in enumerate(ranked)]
    header = ["rank", "candidate", "score_s", "s_rough_norm", "c_n_norm", "u_c_norm", "f_cost", "w_p"]
    out = getattr(args, "out", None)
    if out:
        experiment.write_csv(out, header, rows)
    else:
        print(",".join(header))
        for r in rows:
            print(",".join(experiment._fmt(v) for v in r))


def _cmd_run_grasp(args, cfg):
    if args.goal:
        cfg.control.goal = args.goal
    out = _out(args, cfg, "grasp")
    setups = experiment.episode_setups(cfg, args.episodes)
    cp = dp = prior = None
    if args.policy == "phytac":
        if not args.codec:
            raise MissingArtifactError("policy 'phytac' needs --codec; run `phytac train-codec` first")
        cp, dp = experiment.load_models(args.codec, args.diffusion if cfg.control.goal == "ldm" else None)
        _, arrays = experiment.load_arrays(args.data)
        prior = experiment.control_prior(cfg, cp, arrays)
    results = experiment.run_episodes(cfg, setups, args.policy, cp, dp, prior)
    experiment.write_episode_outputs(out, results, [args.policy])
    for r in experiment.summary_rows(results, [args.policy]):
        if r[1] == "all":
            print(f"{r[0]}: {r[2]} episodes, SuG {r[3]:.3f} StG {r[4]:.3f} FOSG {r[5]:.3f}; wrote {out}")


def _cmd_eval(args, cfg):
    cp, dp = experiment.load_models(args.codec, args.diffusion)
    n = args.records if args.records is not None else cfg.experiment.metric_records
    rows, _, _ = experiment.image_metric_table(cfg, cp, dp, experiment.heldout_records(cfg, n))
    out = _out(args, cfg, "image_metrics.csv")
    experiment.write_csv(out, experiment.METRIC_HEADER, rows)
    for src, v in experiment.metric_means(rows).items():
        print(f"{src:<8} MAE {v[0]:.4f} RMSE {v[1]:.4f} PSNR {v[2]:.2f} SSIM {v[3]:.4f} LPIPS n/a")


def _cmd_report(args, cfg):
    out = Path(cfg.out)
    res = experiment.run_experiment(cfg, out, args.data, args.codec, args.diffusion, log.info)
    print(res["text"].read_text(), end="")


COMMANDS = {"gen-data": _cmd_gen_data, "train-codec": _cmd_train_codec, "train-diffusion": _cmd_train_diffusion,
            "sample": _cmd_sample, "rank-poses": _cmd_rank_poses, "run-grasp": _cmd_run_grasp,
            "eval": _cmd_eval, "report": _cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except PhytacError as exc:
        print(f"phytac {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"phytac {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())

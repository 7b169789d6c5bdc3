"""Pipeline stages and the grasp experiment.

Every stage reads and writes files so the CLI can run them one at a time;
``run_experiment`` chains them and writes the report CSVs. All numbers in
CSV output are formatted at fixed precision, so equal config and seed give
byte-identical files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import codec as codec_mod
from . import control, dataset, diffusion, metrics, plant
from .config import TEXTURE_CLASSES, RunConfig, dump_config
from .errors import MissingArtifactError
from .numerics import Rng

HELDOUT_SALT = 0x5EED0001
EPISODE_SALT = 0x5EED0002
STREAM_CODEC, STREAM_DIFFUSION, STREAM_SAMPLE, STREAM_EPISODE = 1, 2, 3, 4


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6f}"


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _stream(cfg: RunConfig, key: int) -> Rng:
    return Rng(cfg.seed).spawn(key)


def _require(path, stage: str, what: str):
    if path is None or not Path(path).exists():
        raise MissingArtifactError(f"{what} not found at {path}; run `phytac {stage}` first")
    return Path(path)


# -- data ---------------------------------------------------------------------------

def gen_data(cfg: RunConfig, out_dir) -> dict:
    return dataset.generate_dataset(cfg, out_dir, cfg.data.seed)


def load_arrays(data_dir):
    d = _require(Path(data_dir) / "manifest.json" if data_dir else None, "gen-data", "dataset manifest")
    ds = dataset.Dataset(d.parent)
    return ds.manifest, dataset.gather(iter(ds))


def codec_images(arrays) -> np.ndarray:
    """Training images for the codec: every current imprint plus each distinct
    optimal imprint and depth image."""
    return np.concatenate([arrays.x_c, np.unique(arrays.x_s, axis=0), np.unique(arrays.depth, axis=0)])


def heldout_setups(cfg: RunConfig, n_grasps: int):
    return dataset.generate_grasps(cfg, cfg.data.seed ^ HELDOUT_SALT, n_grasps, 1)


def heldout_records(cfg: RunConfig, n: int):
    per = max(cfg.data.frames_per_grasp, 1)
    setups = heldout_setups(cfg, -(-n // per))
    return [r for s in setups for r in dataset.sweep_records(s, cfg)][:n]


def episode_setups(cfg: RunConfig, per_class: int):
    """Fresh objects, ``per_class`` of each texture class, interleaved."""
    textures = [TEXTURE_CLASSES[i % len(TEXTURE_CLASSES)] for i in range(per_class * len(TEXTURE_CLASSES))]
    return dataset.generate_grasps(cfg, cfg.data.seed ^ EPISODE_SALT, len(textures), 1, textures)


# -- training -----------------------------------------------------------------------

def train_codec_stage(cfg: RunConfig, data_dir, out_path, log=None):
    _, arrays = load_arrays(data_dir)
    grid = (cfg.geometry.grid_rows, cfg.geometry.grid_cols)
    params, hist = codec_mod.train_codec(codec_images(arrays), cfg.codec, _stream(cfg, STREAM_CODEC), grid, log)
    params.save(out_path)
    write_csv(Path(out_path).with_suffix(".history.csv"), ["epoch", "loss", "l1", "kl"],
              [(i + 1, a, b, c) for i, (a, b, c) in enumerate(zip(hist.loss, hist.l1, hist.kl))])
    return params, hist


def train_diffusion_stage(cfg: RunConfig, data_dir, codec_path, out_path, log=None):
    _, arrays = load_arrays(data_dir)
    cp = codec_mod.CodecParams.load(_require(codec_path, "train-codec", "codec parameters"))
    latents = diffusion.encode_arrays(cp, arrays)
    params, hist = diffusion.train_denoiser(latents, cfg.diffusion, _stream(cfg, STREAM_DIFFUSION), log)
    params.save(out_path)
    sm = hist.smoothed()
    write_csv(Path(out_path).with_suffix(".history.csv"), ["step", "loss"],
              [(i + 1, v) for i, v in enumerate(hist.loss)])
    if log:
        log(f"denoiser smoothed loss {sm[0]:.4f} -> {sm[-1]:.4f}")
    return params, hist


def load_models(codec_path, denoiser_path=None):
    cp = codec_mod.CodecParams.load(_require(codec_path, "train-codec", "codec parameters"))
    dp = None
    if denoiser_path is not None:
        dp = diffusion.DenoiserParams.load(_require(denoiser_path, "train-diffusion", "denoiser parameters"))
    return cp, dp


# -- control prior ------------------------------------------------------------------

@dataclass
class ControlPrior:
    scale: np.ndarray
    estimate: control.DynamicsEstimate
    transitions: int = 0


def control_prior(cfg: RunConfig, cp, arrays) -> ControlPrior:
    """Error scale from dataset latents and an offline RLS warm start."""
    zc = codec_mod.encode_mean(cp, arrays.x_c)
    zs = codec_mod.encode_mean(cp, arrays.x_s)
    scale = control.fit_scale(np.concatenate([zc, zs]))
    est = control.initial_estimate(cp.latent_dim, _stream(cfg, STREAM_EPISODE).spawn(0),
                                   cfg.control.forgetting, cfg.control.rls_init_cov)
    errors = (zc - zs) / scale
    pairs = control.transition_pairs(arrays.group, arrays.frame)
    control.warm_start(est, errors, arrays.command_u, pairs)
    return ControlPrior(scale, est, len(pairs))


# -- episodes -----------------------------------------------------------------------

def probe_imprint(setup, cfg: RunConfig):
    """Imprint one maximal closing step past first contact (the LDM's current input)."""
    u = max(0.0, setup.patch.contact_aperture - cfg.control.max_step_mm)
    return plant.render_imprint(setup.patch, u, cfg.plant, setup.material, noise_sigma=0.0)


def goal_latent(setup, cfg: RunConfig, cp, dp, mode: str, rng: Rng):
    if mode == "oracle":
        return codec_mod.encode_mean(cp, setup.imprint_optimal)
    if dp is None:
        raise MissingArtifactError("goal 'ldm' needs denoiser parameters; run `phytac train-diffusion` first")
    z_g, _ = diffusion.sample_goal(dp, cp, probe_imprint(setup, cfg), setup.patch.depth_image(),
                                   setup.obj.mass_kg, setup.obj.texture_class, cfg.diffusion.ddim_steps, rng)
    return z_g


@dataclass
class EpisodeResult:
    index: int
    policy: str
    setup: object
    trace: control.ServoTrace


def fixed_force_preset(cfg: RunConfig, setups) -> float:
    """Preset force: the configured factor times the largest F* in the episode set."""
    return cfg.control.fixed_force_factor * max(s.optimal_force for s in setups)


def run_episodes(cfg: RunConfig, setups, policy: str, cp=None, dp=None, prior: ControlPrior | None = None,
                 goal: str | None = None) -> list:
    goal = goal or cfg.control.goal
    preset = fixed_force_preset(cfg, setups) if setups else 0.0
    root = _stream(cfg, STREAM_EPISODE)
    noise = cfg.plant.sensor_noise_sigma > 0
    out = []
    for i, s in enumerate(setups):
        ep = control.episode_from_setup(s, cfg.control)
        erng = root.spawn(1000 + i)
        prng = erng.spawn(1) if noise else None
        if policy == "phytac":
            if cp is None or prior is None:
                raise MissingArtifactError("policy 'phytac' needs codec parameters; run `phytac train-codec` first")
            z_g = goal_latent(s, cfg, cp, dp, goal, erng.spawn(0))
            tr = control.run_servo(ep, cp, z_g, prior.scale, cfg, prng, prior.estimate)
        elif policy == "fixed-force":
            tr = control.run_fixed_force(ep, preset, cfg, prng)
        elif policy == "open-loop":
            tr = control.run_open_loop(ep, cfg, prng)
        else:
            raise ValueError(f"unknown policy {policy!r}")
        out.append(EpisodeResult(i, policy, s, tr))
    return out


def episode_rows(results):
    for r in results:
        t, s, o = r.trace, r.setup, r.trace.outcome
        yield (r.policy, r.index, s.obj.texture_class, s.obj.id, s.optimal_force,
               t.forces[-1] if t.forces else 0.0, t.hold_frame, len(t.forces), o.sug, o.stg, o.fosg,
               t.failed_safety, t.clamps, t.dare_failures, t.rls_resets)


EPISODE_HEADER = ["policy", "episode", "texture_class", "object_id", "optimal_force", "final_force",
                  "hold_frame", "frames", "sug", "stg", "fosg", "failed_safety",
                  "clamps", "dare_failures", "rls_resets"]
TRACE_HEADER = ["policy", "episode", "frame", "aperture", "force", "d_c", "hold"]
SUMMARY_HEADER = ["policy", "texture_class", "episodes", "sug_rate", "stg_rate", "fosg_rate"]


def trace_rows(results):
    for r in results:
        t = r.trace
        for k in range(len(t.forces)):
            yield (r.policy, r.index, k, t.apertures[k], t.forces[k], t.d_c[k], t.holding[k])


def summary_rows(results, policies):
    for p in policies:
        for cls in list(TEXTURE_CLASSES) + ["all"]:
            sel = [r for r in results if r.policy == p and (cls == "all" or r.setup.obj.texture_class == cls)]
            if not sel:
                continue
            n = len(sel)
            yield (p, cls, n, sum(r.trace.outcome.sug for r in sel) / n,
                   sum(r.trace.outcome.stg for r in sel) / n, sum(r.trace.outcome.fosg for r in sel) / n)


def write_episode_outputs(out_dir, results, policies):
    out = Path(out_dir)
    write_csv(out / "episodes.csv", EPISODE_HEADER, episode_rows(results))
    write_csv(out / "traces.csv", TRACE_HEADER, trace_rows(results))
    write_csv(out / "summary.csv", SUMMARY_HEADER, summary_rows(results, policies))


# -- image metrics ------------------------------------------------------------------

METRIC_HEADER = ["record", "object_id", "frame", "source", "mae", "rmse", "psnr_db", "ssim", "lpips"]


def image_metric_table(cfg: RunConfig, cp, dp, records):
    """Per held-out record: metrics of the sampled goal and of the raw input against x_s."""
    root = _stream(cfg, STREAM_SAMPLE)
    rows, goal_ssim, input_ssim = [], [], []
    for i, r in enumerate(records):
        _, x_hat = diffusion.sample_goal(dp, cp, r.imprint_current, r.patch.depth_image(), r.mass_kg,
                                         r.texture_class, cfg.diffusion.ddim_steps, root.spawn(i))
        mg = metrics.image_metrics(x_hat, r.imprint_optimal)
        mi = metrics.image_metrics(r.imprint_current, r.imprint_optimal)
        goal_ssim.append(mg.ssim)
        input_ssim.append(mi.ssim)
        rows.append([i, r.object_id, r.frame_index, "phy-ldm"] + mg.csv_row())
        rows.append([i, r.object_id, r.frame_index, "input"] + mi.csv_row())
    return rows, float(np.mean(goal_ssim)) if goal_ssim else float("nan"), \
        float(np.mean(input_ssim)) if input_ssim else float("nan")


def metric_means(rows):
    out = {}
    for src in ("phy-ldm", "input"):
        sel = np.array([[float(v) for v in r[4:8]] for r in rows if r[3] == src])
        if len(sel):
            out[src] = sel.mean(axis=0)
    return out


# -- full run -----------------------------------------------------------------------

def run_experiment(cfg: RunConfig, out_dir, data_dir=None, codec_path=None, denoiser_path=None, log=None) -> dict:
    """Data, codec, denoiser (each built unless supplied), then episodes and metrics."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    if data_dir is None:
        data_dir = out / "data"
        gen_data(cfg, data_dir)
    if codec_path is None:
        codec_path = out / "codec.phyt"
        train_codec_stage(cfg, data_dir, codec_path, log)
    if denoiser_path is None:
        denoiser_path = out / "denoiser.phyt"
        train_diffusion_stage(cfg, data_dir, codec_path, denoiser_path, log)
    cp, dp = load_models(codec_path, denoiser_path)
    _, arrays = load_arrays(data_dir)
    prior = control_prior(cfg, cp, arrays)

    setups = episode_setups(cfg, cfg.experiment.episodes)
    results = []
    for policy in cfg.experiment.policies:
        results += run_episodes(cfg, setups, policy, cp, dp, prior)
        if log:
            log(f"{policy}: {len(setups)} episodes")
    write_episode_outputs(out, results, cfg.experiment.policies)

    records = heldout_records(cfg, cfg.experiment.metric_records)
    rows, goal_ssim, input_ssim = image_metric_table(cfg, cp, dp, records)
    write_csv(out / "image_metrics.csv", METRIC_HEADER, rows)

    lines = [f"phytac report (seed {cfg.seed}, goal {cfg.control.goal})", ""]
    a_rho = float(np.abs(np.linalg.eigvals(prior.estimate.A)).max())
    lines.append(f"offline identification: {prior.transitions} dataset transitions, "
                 f"spectral radius of A {a_rho:.3f}, |B| {float(np.linalg.norm(prior.estimate.B)):.3f}")
    lines.append("online identification: per-episode RLS resets and gain failures in episodes.csv")
    lines.append("")
    lines.append("grasp outcomes (rate over episodes)")
    for r in summary_rows(results, cfg.experiment.policies):
        lines.append(f"  {r[0]:<12} {r[1]:<13} n={r[2]:<3d} SuG {r[3]:.3f}  StG {r[4]:.3f}  FOSG {r[5]:.3f}")
    lines.append("")
    lines.append(f"image metrics on {len(records)} held-out records (mean)")
    for src, v in metric_means(rows).items():
        lines.append(f"  {src:<8} MAE {v[0]:.4f}  RMSE {v[1]:.4f}  PSNR {v[2]:.2f} dB  SSIM {v[3]:.4f}  LPIPS n/a")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return {"summary": out / "summary.csv", "episodes": out / "episodes.csv", "traces": out / "traces.csv",
            "image_metrics": out / "image_metrics.csv", "text": out / "summary.txt",
            "goal_ssim": goal_ssim, "input_ssim": input_ssim}

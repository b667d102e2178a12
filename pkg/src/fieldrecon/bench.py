"""Reconstruction metrics, observation noise, benchmark orchestration and reports."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import assim
from .datagen import load_dataset
from .fields import NormStats, ObservationMask, ObservationSet, evenly_spaced_positions, random_positions
from .train import unravel

METRICS_VERSION = "per-sample-v1"
METRIC_DEFINITIONS = {
    "version": METRICS_VERSION,
    "rmse": "sqrt(mean((p - t)^2)) over unobserved cells of the selected channels, per sample, averaged over samples",
    "nrmse": "per-sample rmse / sqrt(mean(t^2)) over the same cells, averaged over samples",
    "crmse": "|mean(p) - mean(t)| over unobserved cells per channel and sample, root-mean-square over both",
}


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 3 else x


def metrics(pred: np.ndarray, truth: np.ndarray, mask, channels: Sequence[int] | None = None
            ) -> tuple[float, float, float]:
    """(rmse, nrmse, crmse) over unobserved cells.

    ``pred``/``truth`` are (C, H, W) or (S, C, H, W); ``mask`` is the
    observed-cell flag array (H, W) or (S, H, W), True on observed cells.
    """
    p, t = _as_batch(pred), _as_batch(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    m = np.asarray(mask.flags if isinstance(mask, ObservationMask) else mask, dtype=bool)
    m = np.broadcast_to(m if m.ndim == 3 else m[None], (len(p),) + p.shape[-2:])
    if channels is not None:
        p, t = p[:, list(channels)], t[:, list(channels)]
    free = ~m
    if not free.any(axis=(1, 2)).all():
        raise ValueError("empty unobserved region")
    rmse, nrmse, cdiff = [], [], []
    for s in range(len(p)):
        ps, ts = p[s][:, free[s]], t[s][:, free[s]]
        r = np.sqrt(np.mean((ps - ts) ** 2))
        norm = np.sqrt(np.mean(ts ** 2))
        if norm == 0:
            raise ValueError("undefined normalization: truth is zero on the unobserved cells")
        rmse.append(r)
        nrmse.append(r / norm)
        cdiff.append(ps.mean(axis=1) - ts.mean(axis=1))
    crmse = np.sqrt(np.mean(np.square(cdiff)))
    return float(np.mean(rmse)), float(np.mean(nrmse)), float(crmse)


def add_obs_noise(obs: ObservationSet, level: float, channel_std: np.ndarray,
                  rng: np.random.Generator) -> ObservationSet:
    """values + level * channel_std * N(0, 1), per channel."""
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    if level == 0:
        return obs
    std = np.asarray(channel_std, dtype=np.float64).reshape(-1, 1)
    return obs.with_values(obs.values + level * std * rng.standard_normal(obs.values.shape))


# benchmark orchestration

@dataclass
class MethodSpec:
    name: str
    kind: str  # truth | train-mean | diffusion | vtunet
    ckpt: str | None = None
    sampler_mode: str | None = None  # guided | cfg | cross-attention; inferred from the checkpoint


@dataclass
class ExperimentConfig:
    data: str
    methods: list[MethodSpec]
    ratios: list[float] = field(default_factory=lambda: [0.01])
    noise_levels: list[float] = field(default_factory=lambda: [0.0])
    sensors: str = "random"  # random | even
    metric_channels: list[int] | None = None
    n_eval: int = 16
    seed: int = 0
    steps: int = 20
    scheme: str = "heun-pc"
    ensemble: int = 25

    def __post_init__(self):
        self.methods = [m if isinstance(m, MethodSpec) else MethodSpec(**m) for m in self.methods]
        for r in self.ratios:
            if not 0 < r < 1:
                raise ValueError(f"observation ratio {r} outside (0, 1)")
        for lv in self.noise_levels:
            if lv < 0:
                raise ValueError("noise levels must be nonnegative")
        if self.sensors not in ("random", "even"):
            raise ValueError("sensors must be 'random' or 'even'")

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        cfg = json.loads(Path(path).read_text())
        base = Path(path).parent
        cfg["data"] = str((base / cfg["data"]))
        for m in cfg.get("methods", []):
            if m.get("ckpt"):
                m["ckpt"] = str(base / m["ckpt"])
        return cls(**cfg)


@dataclass
class MetricsReport:
    rows: list[dict[str, Any]]
    meta: dict[str, Any] = field(default_factory=dict)
    examples: dict[str, np.ndarray] = field(default_factory=dict)


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def eval_snapshots(fields: np.ndarray, train_sims: int, n_eval: int, seed: int) -> np.ndarray:
    """Evaluation snapshots from the held-out trailing simulations."""
    held = unravel(np.asarray(fields[train_sims:], dtype=np.float64))
    if len(held) == 0:
        raise ValueError("dataset has no held-out simulations")
    if n_eval >= len(held):
        return held
    idx = np.sort(_rng(seed, 7).choice(len(held), size=n_eval, replace=False))
    return held[idx]


def sensor_positions(sensors: str, grid: tuple[int, int], ratio: float, rng: np.random.Generator) -> np.ndarray:
    if sensors == "even":
        return evenly_spaced_positions(grid, ratio)
    return random_positions(rng, grid, max(1, int(round(ratio * grid[0] * grid[1]))))


def _load_model(path: str):
    from .net import checkpoint
    return checkpoint.load(path)


def _predictor(spec: MethodSpec, cfg: ExperimentConfig, stats: NormStats, train_mean: np.ndarray,
               grid, channels: int) -> Callable[[list[ObservationSet], np.ndarray], np.ndarray]:
    from . import sampler

    if spec.kind == "truth":
        return lambda obs, truth: truth.copy()
    if spec.kind == "train-mean":
        return lambda obs, truth: np.broadcast_to(train_mean, truth.shape).copy()
    if spec.ckpt is None:
        raise ValueError(f"method {spec.name!r} needs a checkpoint")
    if not Path(spec.ckpt).exists():
        raise FileNotFoundError(f"missing checkpoint for {spec.name!r}: {spec.ckpt}")
    model, mstats, _ = _load_model(spec.ckpt)
    if model.cfg.channels != channels or model.cfg.resolution != grid[0]:
        raise ValueError(f"checkpoint {spec.ckpt} does not match data ({channels} channels, {grid})")
    if spec.kind == "vtunet":
        def run(obs, truth):
            nobs = [o.with_values(mstats.normalize(o.values, channel_axis_tail=1)) for o in obs]
            pred = mstats.denormalize(sampler.vtunet_predict(model, nobs, grid))
            for i, o in enumerate(obs):
                pred[i][:, o.positions[:, 0], o.positions[:, 1]] = o.values
            return pred
        return run
    if spec.kind == "diffusion":
        mode = spec.sampler_mode or {"unconditional": "guided"}.get(model.mode, model.mode)
        scfg = sampler.SamplerConfig(n_steps=cfg.steps, scheme=cfg.scheme, mode=mode,
                                     ensemble=cfg.ensemble, seed=cfg.seed)
        return lambda obs, truth: np.stack(
            [e.mean for e in sampler.sample_batch(obs, grid, scfg, model, mstats)])
    raise ValueError(f"unknown method kind {spec.kind!r}")


def run_benchmark(cfg: ExperimentConfig) -> MetricsReport:
    fields, stats, meta = load_dataset(cfg.data)
    train_sims = meta["train_sims"]
    truth = eval_snapshots(fields, train_sims, cfg.n_eval, cfg.seed)
    train_mean = unravel(np.asarray(fields[:train_sims], dtype=np.float64)).mean(axis=0)
    n, c, h, w = truth.shape
    grid = (h, w)
    channels = cfg.metric_channels
    if channels is None and meta.get("problem") == "darcy":
        channels = [0]  # permeability channel only
    predictors = {m.name: _predictor(m, cfg, stats, train_mean, grid, c) for m in cfg.methods}
    rows, examples = [], {"truth": truth[0]}
    for ri, ratio in enumerate(cfg.ratios):
        positions = [sensor_positions(cfg.sensors, grid, ratio, _rng(cfg.seed, ri, i)) for i in range(n)]
        masks = np.zeros((n, h, w), dtype=bool)
        for i, p in enumerate(positions):
            masks[i, p[:, 0], p[:, 1]] = True
        examples[f"positions/r{ri}"] = positions[0].astype(np.float64)
        for ni, level in enumerate(cfg.noise_levels):
            obs = [add_obs_noise(ObservationSet(p, truth[i][:, p[:, 0], p[:, 1]], grid), level, stats.std,
                                 _rng(cfg.seed, ri, ni, i, 1)) for i, p in enumerate(positions)]
            for spec in cfg.methods:
                t0 = time.perf_counter()
                pred = predictors[spec.name](obs, truth)
                seconds = time.perf_counter() - t0
                rmse, nrmse, crmse = metrics(pred, truth, masks, channels)
                rows.append(dict(problem=meta.get("problem", ""), ratio=ratio, noise=level, method=spec.name,
                                 rmse=rmse, nrmse=nrmse, crmse=crmse, seconds=seconds, n_eval=n))
                examples[f"pred/r{ri}/n{ni}/{spec.name}"] = pred[0]
    report_meta = {"metrics": METRIC_DEFINITIONS, "metric_channels": channels, "sensors": cfg.sensors,
                   "seed": cfg.seed, "steps": cfg.steps, "scheme": cfg.scheme, "ensemble": cfg.ensemble,
                   "data": Path(cfg.data).name, "methods": [asdict(m) for m in cfg.methods]}
    return MetricsReport(rows, report_meta, examples)


# reports

FIELDS = ["problem", "ratio", "noise", "method", "rmse", "nrmse", "crmse", "seconds", "n_eval"]


def emit_report(report: MetricsReport, out_dir: str | Path) -> tuple[Path, Path]:
    if not report.rows:
        raise ValueError("empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "report.csv", out / "report.json"
    with open(csv_path, "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=FIELDS)
        wr.writeheader()
        for row in report.rows:
            wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    json_path.write_text(json.dumps({"meta": report.meta, "rows": report.rows}, indent=2))
    return csv_path, json_path


def read_report_csv(path: str | Path) -> list[dict[str, Any]]:
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            for k in ("ratio", "noise", "rmse", "nrmse", "crmse", "seconds"):
                row[k] = float(row[k])
            row["n_eval"] = int(row["n_eval"])
            rows.append(row)
    return rows


def emit_plots(report: MetricsReport, out_dir: str | Path) -> list[Path]:
    """nRMSE-vs-noise bar charts per ratio and field heatmaps with sensor crosses."""
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    if not report.rows:
        raise ValueError("empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plt.rcParams["svg.hashsalt"] = "fieldrecon"  # deterministic element ids
    paths = []
    methods = list(dict.fromkeys(r["method"] for r in report.rows))
    ratios = list(dict.fromkeys(r["ratio"] for r in report.rows))
    noises = list(dict.fromkeys(r["noise"] for r in report.rows))
    for ri, ratio in enumerate(ratios):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        width = 0.8 / max(1, len(methods))
        for k, m in enumerate(methods):
            vals = [next((r["nrmse"] for r in report.rows
                          if r["method"] == m and r["ratio"] == ratio and r["noise"] == lv), np.nan)
                    for lv in noises]
            ax.bar(np.arange(len(noises)) + k * width, vals, width, label=m)
        ax.set_xticks(np.arange(len(noises)) + 0.4 - width / 2, [f"{lv:g}" for lv in noises])
        ax.set_xlabel("observation noise level")
        ax.set_ylabel("nRMSE")
        ax.set_title(f"observed ratio {ratio:g}")
        ax.legend(fontsize="small")
        p = out / f"nrmse_r{ri}.svg"
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(p)
    truth = report.examples.get("truth")
    if truth is not None:
        for ri in range(len(ratios)):
            preds = {k.split("/", 3)[3]: v for k, v in report.examples.items()
                     if k.startswith(f"pred/r{ri}/n0/")}
            pos = report.examples.get(f"positions/r{ri}")
            panels = [("truth", truth)] + list(preds.items())
            fig, axes = plt.subplots(1, len(panels), figsize=(2.6 * len(panels), 2.6), squeeze=False)
            lo, hi = float(truth[0].min()), float(truth[0].max())
            for ax, (name, f) in zip(axes[0], panels):
                ax.imshow(f[0], vmin=lo, vmax=hi, cmap="viridis", origin="lower")
                if pos is not None:
                    ax.plot(pos[:, 1], pos[:, 0], "x", color="red", markersize=4)
                ax.set_title(name, fontsize="small")
                ax.set_axis_off()
            p = out / f"fields_r{ri}.svg"
            fig.savefig(p, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(p)
    return paths


# assimilation benchmark with an oracle-perturbed ensemble

@dataclass
class DAConfig:
    channel: int = 1
    q: int = 50
    n_instances: int = 20
    n_members: int = 10
    n_obs: int = 20
    rank: int = 5  # dimension of each instance's background-error subspace
    spread: float = 0.5  # error scale in units of the PCA standard deviations
    r_sigma: float = 0.05  # observation noise, fraction of the channel std
    seed: int = 0


def synthetic_ensemble(truth: np.ndarray, basis: assim.PcaBasis, n_members: int, spread: float,
                       rank: int, rng: np.random.Generator) -> np.ndarray:
    """Members x_b + d_k around a background x_b = truth + e.

    e and every d_k are drawn from one instance-specific Gaussian law whose
    covariance is a random rank-``rank`` subspace of the PCA space, scaled by
    the PCA standard deviations (a stand-in for a conditioned posterior).
    """
    g = rng.standard_normal((basis.q, rank)) / np.sqrt(rank)
    a = basis.components @ (spread * np.sqrt(basis.eigenvalues)[:, None] * g)

    def draw(k):
        return (a @ rng.standard_normal((rank, k))).T

    xb = truth + draw(1)[0]
    d = draw(n_members)
    d -= d.mean(axis=0)  # ensemble mean equals the background
    return xb + d


def da_benchmark(fields: np.ndarray, train_sims: int, cfg: DAConfig) -> dict[str, np.ndarray]:
    """Im per instance for ensemble and identity background covariances."""
    fields = np.asarray(fields, dtype=np.float64)
    train = unravel(fields[:train_sims])[:, cfg.channel].reshape(-1, fields.shape[-2] * fields.shape[-1])
    basis = assim.pca_fit(train.T, cfg.q)
    held = unravel(fields[train_sims:])[:, cfg.channel]
    rng = _rng(cfg.seed, 11)
    picks = rng.choice(len(held), size=cfg.n_instances, replace=len(held) < cfg.n_instances)
    r_sigma = cfg.r_sigma * float(train.std())
    out = {"ensemble": [], "identity": []}
    for k, i in enumerate(picks):
        r = _rng(cfg.seed, 12, k)
        xt = held[i].ravel()
        members = synthetic_ensemble(xt, basis, cfg.n_members, cfg.spread, cfg.rank, r)
        idx = np.sort(r.choice(basis.dim, size=cfg.n_obs, replace=False))
        y = xt[idx] + r_sigma * r.standard_normal(cfg.n_obs)
        for cov in out:
            out[cov].append(assim.assimilate(members, y, idx, basis, cov, r_sigma, xt).Im)
    return {k: np.array(v) for k, v in out.items()}

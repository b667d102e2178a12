"""Command-line entry point: generate, train, observe, reconstruct, assimilate, evaluate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import container

log = logging.getLogger("fieldrecon")


def cmd_generate(args) -> None:
    from .datagen import generate_dataset, make_config

    cfg = make_config(args.problem, grid=args.grid, seed=args.seed, n_steps=args.n_steps,
                      n_modes=args.modes, drag=args.drag, dt=args.dt)
    generate_dataset(args.problem, args.n_sims, cfg, args.out)
    log.info("wrote %s", args.out)


def cmd_train(args) -> None:
    from .datagen import load_dataset
    from .net import ModelConfig, build_model, checkpoint
    from .train import TrainConfig, normalized_training_set, train_loop

    fields, stats, meta = load_dataset(args.data)
    snapshots = normalized_training_set(fields, stats, meta["train_sims"])
    mcfg = ModelConfig(mode=args.mode, channels=snapshots.shape[1], resolution=snapshots.shape[-1],
                       first_width=args.first_width, width=args.width, emb_dim=args.emb_dim,
                       token_dim=args.token_dim)
    model = build_model(mcfg, seed=args.seed)
    tcfg = TrainConfig(steps=args.steps, batch=args.batch, lr=args.lr, weight_decay=args.weight_decay,
                       ema=args.ema, seed=args.seed, log_every=args.log_every)
    res = train_loop(model, snapshots, tcfg)
    checkpoint.save(args.out, model, res.ema.shadow, stats, args.steps,
                    {"problem": meta.get("problem"), "final_loss": res.losses[-1] if res.losses else None})
    log.info("wrote %s", args.out)


def cmd_observe(args) -> None:
    from .bench import add_obs_noise, sensor_positions
    from .datagen import load_dataset
    from .fields import ObservationSet

    fields, stats, meta = load_dataset(args.data)
    truth = np.asarray(fields[args.sim, args.time], dtype=np.float64)
    grid = truth.shape[-2:]
    rng = np.random.default_rng(args.seed)
    pos = sensor_positions(args.sensors, grid, args.ratio, rng)
    obs = ObservationSet(pos, truth[:, pos[:, 0], pos[:, 1]], grid)
    obs = add_obs_noise(obs, args.noise, stats.std, rng)
    container.write(args.out, {"positions": pos.astype(np.float64), "values": obs.values, "truth": truth},
                    {"grid": list(grid), "sim": args.sim, "time": args.time, "noise": args.noise})
    log.info("wrote %s (%d sensors)", args.out, len(pos))


def _read_obs(path):
    from .fields import ObservationSet

    arrays, meta = container.read_with_meta(path)
    grid = tuple(meta.get("grid") or arrays.get("truth", np.zeros((1, 0, 0))).shape[-2:])
    obs = ObservationSet(arrays["positions"].astype(np.int64), arrays["values"].astype(np.float64), grid)
    return obs, grid, arrays.get("truth")


def cmd_reconstruct(args) -> None:
    from . import sampler
    from .net import checkpoint

    model, stats, meta = checkpoint.load(args.ckpt)
    obs, grid, _ = _read_obs(args.obs)
    if model.mode == "vtunet":
        nobs = obs.with_values(stats.normalize(obs.values, channel_axis_tail=1))
        pred = stats.denormalize(sampler.vtunet_predict(model, [nobs], grid))[0]
        pred[:, obs.positions[:, 0], obs.positions[:, 1]] = obs.values
        ens = sampler.Ensemble.from_members(pred[None])
    else:
        mode = {"unconditional": "guided"}.get(model.mode, model.mode)
        cfg = sampler.SamplerConfig(n_steps=args.steps, scheme=args.scheme, mode=mode,
                                    gamma=args.gamma, ensemble=args.ensemble, seed=args.seed)
        ens = sampler.ensemble_sample(obs, grid, cfg, model, stats)
    container.write(args.out, {"members": ens.members, "mean": ens.mean, "variance": ens.variance},
                    {"ckpt": Path(args.ckpt).name, "mode": model.mode, "scheme": args.scheme,
                     "steps": args.steps, "seed": args.seed})
    log.info("wrote %s", args.out)


def _load_basis(path, q, channels, centered=True):
    from . import assim
    from .datagen import load_dataset
    from .train import unravel

    arrays, meta = container.read_with_meta(path)
    if "components" in arrays:
        basis = assim.PcaBasis(arrays["components"].astype(np.float64), arrays["eigenvalues"].astype(np.float64),
                               arrays["mean"].astype(np.float64))
        return basis.truncate(min(q, basis.q))
    fields, _, meta = load_dataset(path)
    train = unravel(np.asarray(fields[:meta["train_sims"]], dtype=np.float64))[:, channels]
    return assim.pca_fit(train.reshape(len(train), -1).T, q, centered)


def cmd_assimilate(args) -> None:
    from . import assim

    ens = container.read(args.ensemble)
    members = np.asarray(ens["members"], dtype=np.float64)
    if members.ndim == 4:
        members = members[None]  # (snapshots, n, C, H, W)
    obs_arrays, obs_meta = container.read_with_meta(args.obs)
    channels = args.channel if args.channel else list(range(members.shape[2]))
    basis = _load_basis(args.basis, args.q, channels, not args.uncentered)
    pos = obs_arrays["positions"].astype(np.int64)
    values = np.asarray(obs_arrays["values"], dtype=np.float64)
    truth = obs_arrays.get("truth")
    if values.ndim == 2:
        values = values[None]
        truth = None if truth is None else truth[None]
    if len(values) != len(members):
        raise SystemExit(f"{len(members)} ensembles but {len(values)} observation snapshots")
    h, w = members.shape[-2:]
    flat = np.concatenate([c * h * w + pos[:, 0] * w + pos[:, 1] for c in range(len(channels))])
    xb_all, xa_all, ims = [], [], []
    for k in range(len(members)):
        m = members[k][:, channels].reshape(members.shape[1], -1)
        y = values[k][channels].ravel()
        xt = None if truth is None else np.asarray(truth[k], dtype=np.float64)[channels].ravel()
        res = assim.assimilate(m, y, flat, basis, args.cov, args.r_sigma, xt)
        xb_all.append(res.x_b.reshape(len(channels), h, w))
        xa_all.append(res.x_a.reshape(len(channels), h, w))
        ims.append(res.Im)
    container.write(args.out, {"x_b": np.stack(xb_all), "x_a": np.stack(xa_all)},
                    {"cov": args.cov, "q": basis.q, "r_sigma": args.r_sigma, "channels": channels})
    sidecar = Path(str(args.out) + ".json")
    sidecar.write_text(json.dumps({"cov": args.cov, "q": basis.q, "Im": ims}, indent=2))
    log.info("wrote %s and %s", args.out, sidecar)


def cmd_evaluate(args) -> None:
    from .bench import ExperimentConfig, emit_plots, emit_report, run_benchmark

    cfg = ExperimentConfig.from_json(args.config)
    report = run_benchmark(cfg)
    out = Path(args.out)
    emit_report(report, out)
    emit_plots(report, out / "plots")
    container.write(out / "predictions.frd", report.examples, {"rows": len(report.rows)})
    log.info("wrote report to %s", out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fieldrecon", description="sparse-sensor field reconstruction workbench")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a PDE dataset")
    g.add_argument("--problem", required=True, choices=["darcy", "shallow-water", "diff-react"])
    g.add_argument("--sims", "--n-sims", dest="n_sims", type=int, required=True)
    g.add_argument("--grid", type=int)
    g.add_argument("--steps", "--n-steps", dest="n_steps", type=int, help="time steps (time-dependent problems)")
    g.add_argument("--modes", type=int, help="KLE modes (darcy)")
    g.add_argument("--drag", type=float, help="linear drag coefficient (shallow-water)")
    g.add_argument("--dt", type=float, help="snapshot time step (time-dependent problems)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a denoiser or the VT-UNet baseline")
    t.add_argument("--data", required=True)
    t.add_argument("--mode", required=True, choices=["cross-attention", "cfg", "unconditional", "vtunet"])
    t.add_argument("--steps", type=int, default=1000)
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--weight-decay", type=float, default=0.01)
    t.add_argument("--ema", type=float, default=0.999)
    t.add_argument("--first-width", type=int, default=32)
    t.add_argument("--width", type=int, default=64)
    t.add_argument("--emb-dim", type=int, default=128)
    t.add_argument("--token-dim", type=int, default=128)
    t.add_argument("--log-every", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    o = sub.add_parser("observe", help="sample sensor observations from a dataset snapshot")
    o.add_argument("--data", required=True)
    o.add_argument("--sim", type=int, default=-1)
    o.add_argument("--time", type=int, default=0)
    o.add_argument("--ratio", type=float, default=0.01)
    o.add_argument("--sensors", choices=["random", "even"], default="random")
    o.add_argument("--noise", type=float, default=0.0)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_observe)

    r = sub.add_parser("reconstruct", help="sample an ensemble of reconstructions")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--obs", required=True)
    r.add_argument("--scheme", choices=["euler", "heun-pc", "multistep2"], default="heun-pc")
    r.add_argument("--steps", type=int, default=20)
    r.add_argument("--ensemble", type=int, default=25)
    r.add_argument("--gamma", type=float, default=1.0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    a = sub.add_parser("assimilate", help="reduced-order BLUE correction of an ensemble mean")
    a.add_argument("--ensemble", required=True)
    a.add_argument("--obs", required=True)
    a.add_argument("--basis", required=True, help="dataset (PCA fitted on its training split) or saved basis")
    a.add_argument("--cov", choices=["ensemble", "identity"], default="ensemble")
    a.add_argument("--q", type=int, default=50)
    a.add_argument("--r-sigma", type=float, default=0.01)
    a.add_argument("--channel", type=int, action="append", help="channel(s) to assimilate (default all)")
    a.add_argument("--uncentered", action="store_true")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_assimilate)

    e = sub.add_parser("evaluate", help="run a benchmark from a JSON config")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, KeyError, FileNotFoundError, container.ContainerError) as exc:
        print(f"fieldrecon {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Config files are JSON documents whose keys mirror :class:`ExperimentConfig`
(a bare scene recipe is also accepted wherever only a world is needed).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .core import SceneModel, look_at
from .fisher import (ParameterMask, accumulate_training_fisher, score_candidates,
                     score_table_csv)
from .imageio import write_depth_grid, write_ppm
from .mask import mask_environment
from .pipeline import (ExperimentConfig, bootstrap, current_risk_profile, emit_report, make_world,
                       read_aggregate_w2, run_experiment, wasserstein2)
from .risk import DistanceDistribution
from .world import (GroundTruthWorld, SceneRecipe, build_world, capture_rgbd,
                    ground_truth_point_cloud, sample_candidate_poses)


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path) as fh:
        doc = json.load(fh)
    if "recipe" not in doc and "room" in doc:
        return ExperimentConfig(recipe=SceneRecipe.from_dict(doc))
    return ExperimentConfig.from_dict(doc)


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    ov = {}
    for flag, key in (("seed", "seed"), ("eps", "eps"), ("beta1", "beta1"), ("beta2", "beta2"),
                      ("gamma", "gamma"), ("lam", "lam"), ("risk_driver", "risk_driver"),
                      ("width", "width"), ("height", "height")):
        v = getattr(args, flag, None)
        if v is not None:
            ov[key] = v
    if getattr(args, "raem", None) is not None:
        ov["raem"] = args.raem == "on"
    return replace(cfg, **ov) if ov else cfg


def _write(path: str, text: str):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_world_build(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    world = build_world(cfg.recipe, cfg.seed)
    cloud = ground_truth_point_cloud(world, cfg.recipe.gt_density, cfg.recipe.sigma_hat,
                                     seed=cfg.seed)
    out = _out_dir(args)
    _write(os.path.join(out, "world.json"), json.dumps(world.to_dict(), indent=1))
    _write(os.path.join(out, "recipe.json"), cfg.recipe.dumps())
    _write(os.path.join(out, "gt_cloud.xyz"), cloud.to_xyz())
    print(f"{len(world.primitives)} primitives, {len(cloud)} ground-truth points -> {out}")
    return 0


def _load_world(args, cfg: ExperimentConfig) -> GroundTruthWorld:
    if args.world:
        with open(args.world) as fh:
            return GroundTruthWorld.from_dict(json.load(fh))
    return build_world(cfg.recipe, cfg.seed)


def cmd_capture(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    world = _load_world(args, cfg)
    eye = args.eye if args.eye is not None else cfg.recipe.initial_eye
    target = args.target if args.target is not None else cfg.recipe.initial_target
    obs = capture_rgbd(world, look_at(eye, target), cfg.camera, cfg.settings.far)
    out = _out_dir(args)
    write_ppm(os.path.join(out, "rgb.ppm"), obs.rgb)
    write_depth_grid(os.path.join(out, "depth.txt"), obs.depth)
    print(f"captured {obs.shape[1]}x{obs.shape[0]}, {int(obs.valid.sum())} valid depths -> {out}")
    return 0


def _load_scene(path: str) -> SceneModel:
    with open(path) as fh:
        return SceneModel.loads(fh.read())


def cmd_risk(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    scene = _load_scene(args.scene)
    path = cfg.recipe.path
    profile = current_risk_profile(scene, path, cfg)
    masked = mask_environment(scene, path, profile)
    out = _out_dir(args)
    _write(os.path.join(out, "risk.csv"), profile.to_csv())
    _write(os.path.join(out, "masked.txt"), "".join(f"{i}\n" for i in masked.indices))
    print(f"min alpha {np.min(profile.alpha):.6g}, {len(masked)} masked Gaussians -> {out}")
    return 0


def cmd_nbv_score(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    world, _ = make_world(cfg)
    camera = cfg.camera
    if args.scene:
        scene = _load_scene(args.scene)
        train_poses = [look_at(cfg.recipe.initial_eye, cfg.recipe.initial_target)]
    else:
        state = bootstrap(cfg, world)
        scene = state.scene
        train_poses = [pose for _, pose in state.observations]
    path = cfg.recipe.path
    stage = cfg.stages[args.stage - 1] if args.stage <= len(cfg.stages) else cfg.stages[-1]
    center = scene.mu.mean(axis=0) if len(scene) else path.waypoints.mean(axis=0)
    cands = sample_candidate_poses(args.stage, path, center, args.count or stage.candidates,
                                   stage.radius, seed=[cfg.seed, args.stage, 0], world=world)
    fisher = accumulate_training_fisher(scene, [(p, camera) for p in train_poses], cfg.lam,
                                        cfg.settings)
    profile = current_risk_profile(scene, path, cfg)
    masked = mask_environment(scene, path, profile)
    pmask = ParameterMask.from_masked_scene(masked)
    scores = score_candidates(cands, camera, scene, fisher, (None, pmask), cfg.settings)
    out = _out_dir(args)
    _write(os.path.join(out, "nbv_scores.csv"), score_table_csv(cands, scores[:, 0], scores[:, 1]))
    # same rule as the experiment loop: an empty mask falls back to the unmasked scores
    col = 1 if cfg.raem and stage.masked and len(masked) else 0
    best = int(np.flatnonzero(scores[:, col] == scores[:, col].max())[0])
    print(f"best candidate {best} eig {scores[best, col]:.6g} -> {out}")
    return 0


def cmd_experiment_run(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    report = run_experiment(cfg)
    out = _out_dir(args)
    emit_report(report, out)
    _write(os.path.join(out, "config.json"), json.dumps(cfg.to_dict(), indent=1))
    status = "valid" if report.valid else f"INVALID ({report.error})"
    print(f"mean W2 {report.w2_mean:.6g}, max W2 {report.w2_max:.6g}, {status} -> {out}")
    return 0 if report.valid else 1


def cmd_eval_w2(args) -> int:
    if args.metrics:
        with open(args.metrics) as fh:
            mean, worst = read_aggregate_w2(fh.read())
        print(f"mean {mean!r} max {worst!r}")
        return 0
    if args.a is None or args.b is None:
        raise SystemExit("eval w2 needs --a and --b, or --metrics")
    print(repr(wasserstein2(DistanceDistribution(*args.a), DistanceDistribution(*args.b))))
    return 0


def _common(p: argparse.ArgumentParser, out: bool = True):
    p.add_argument("--config", help="JSON config (ExperimentConfig keys or a scene recipe)")
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--raem", choices=("on", "off"))
    p.add_argument("--risk-driver", choices=("avar", "mean"))
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    if out:
        p.add_argument("--out", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskview", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    world = sub.add_parser("world").add_subparsers(dest="action", required=True)
    p = world.add_parser("build", help="build a world and its ground-truth cloud")
    _common(p)
    p.set_defaults(func=cmd_world_build)

    p = sub.add_parser("capture", help="ray-cast an RGB-D view")
    _common(p)
    p.add_argument("--world", help="world.json from 'world build'")
    p.add_argument("--eye", type=float, nargs=3)
    p.add_argument("--target", type=float, nargs=3)
    p.set_defaults(func=cmd_capture)

    p = sub.add_parser("risk", help="risk profile and masked set of a scene")
    _common(p)
    p.add_argument("--scene", required=True, help="scene JSON")
    p.set_defaults(func=cmd_risk)

    nbv = sub.add_parser("nbv").add_subparsers(dest="action", required=True)
    p = nbv.add_parser("score", help="score candidate views by expected information gain")
    _common(p)
    p.add_argument("--scene", help="scene JSON; default bootstraps from the initial view")
    p.add_argument("--stage", type=int, choices=(1, 2), default=2)
    p.add_argument("--count", type=int)
    p.set_defaults(func=cmd_nbv_score)

    exp = sub.add_parser("experiment").add_subparsers(dest="action", required=True)
    p = exp.add_parser("run", help="run the staged acquisition experiment")
    _common(p)
    p.set_defaults(func=cmd_experiment_run)

    ev = sub.add_parser("eval").add_subparsers(dest="action", required=True)
    p = ev.add_parser("w2", help="Wasserstein-2 distance between normals")
    p.add_argument("--a", type=float, nargs=2, metavar=("MEAN", "STD"))
    p.add_argument("--b", type=float, nargs=2, metavar=("MEAN", "STD"))
    p.add_argument("--metrics", help="metrics.csv to read the aggregate from")
    p.set_defaults(func=cmd_eval_w2)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Scene training, staged view acquisition and risk-fidelity evaluation."""

from __future__ import annotations

import copy
import csv
import io
import logging
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import Camera, Path, Pose, RgbdImage, SceneModel, look_at
from .fisher import (CandidateSet, FisherDiagonal, ParameterMask, accumulate_training_fisher,
                     argmax_lowest, score_candidates)
from .imageio import write_depth_grid, write_ppm
from .mask import AVAR, MaskParams, RiskProfile, mask_environment, risk_profile
from .risk import DistanceDistribution, check_eps, scene_avar
from .splat import (DEFAULT_SETTINGS, RenderSettings, loss_and_gradient, reconstruction_loss,
                    render)
from .world import (GroundTruthCloud, GroundTruthWorld, SceneRecipe, build_world, capture_rgbd,
                    closest_gt_distribution, ground_truth_point_cloud, sample_candidate_poses,
                    standard_room)

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


class EmptySceneError(ValueError):
    pass


@dataclass
class TrainConfig:
    iterations_per_view: int = 60
    lr_position: float = 1e-3
    lr_log_sigma: float = 1e-3
    lr_logit_opacity: float = 5e-3
    lr_color: float = 2.5e-3
    momentum: float = 0.9
    second_moment: float = 0.999
    gamma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.iterations_per_view < 1:
            raise ValueError("need at least one iteration per view")
        if min(self.lr_position, self.lr_log_sigma, self.lr_logit_opacity, self.lr_color) <= 0:
            raise ValueError("step sizes must be positive")

    def step_sizes(self) -> np.ndarray:
        return np.array([self.lr_position] * 3 + [self.lr_log_sigma, self.lr_logit_opacity]
                        + [self.lr_color] * 3)


@dataclass
class StageConfig:
    stage: int
    views: int = 5
    candidates: int = 250
    radius: float = 2.0
    masked: bool = False


def default_stages() -> list[StageConfig]:
    return [StageConfig(1, 5, 250, 2.0, masked=False), StageConfig(2, 5, 250, 2.0, masked=True)]


@dataclass
class ExperimentConfig:
    recipe: SceneRecipe = field(default_factory=standard_room)
    world_seed: int | None = None
    width: int = 256
    height: int = 256
    fov_deg: float = 90.0
    stages: list = field(default_factory=default_stages)
    eps: float = 0.1
    beta1: float = 0.2
    beta2: float = 1.0
    r_max: float | None = None
    lam: float = 0.1
    gamma: float = 0.5
    raem: bool = True
    risk_driver: str = AVAR
    uniform_radius: float | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    stride: int = 8
    init_opacity: float = 0.7
    densify_threshold: float = 0.5
    depth_fisher: bool = False
    seed: int = 0

    def __post_init__(self):
        check_eps(self.eps)
        if self.risk_driver not in ("avar", "mean"):
            raise ValueError(f"unknown risk driver {self.risk_driver!r}")

    @property
    def camera(self) -> Camera:
        return Camera.from_fov(self.width, self.height, self.fov_deg)

    @property
    def mask_params(self) -> MaskParams:
        return MaskParams(self.beta1, self.beta2, self.eps, self.r_max)

    @property
    def view_budget(self) -> int:
        return 1 + sum(s.views for s in self.stages)

    @property
    def settings(self) -> RenderSettings:
        return DEFAULT_SETTINGS

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recipe"] = self.recipe.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "recipe" in d:
            d["recipe"] = SceneRecipe.from_dict(d["recipe"])
        if "stages" in d:
            d["stages"] = [StageConfig(**s) for s in d["stages"]]
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class Selection:
    stage: int
    round: int
    candidate: int
    eig: float
    masked: bool
    position: np.ndarray
    masked_gaussians: int = 0


@dataclass
class ExperimentReport:
    perceived: list
    ground_truth: list
    w2: np.ndarray
    selections: list
    risk_history: list
    uncertainty: list
    views: list = field(default_factory=list)
    iterations: int = 0
    valid: bool = True
    error: str = ""
    w2_history: list = field(default_factory=list)

    @property
    def w2_mean(self) -> float:
        return float(np.mean(self.w2)) if len(self.w2) else math.nan

    @property
    def w2_max(self) -> float:
        return float(np.max(self.w2)) if len(self.w2) else math.nan


# --------------------------------------------------------------------------
# scene construction and training
# --------------------------------------------------------------------------

def unproject_init(obs: RgbdImage, pose: Pose, camera: Camera, stride: int = 8,
                   init_opacity: float = 0.7, pixel_mask: np.ndarray | None = None) -> SceneModel:
    """One Gaussian per stride-sampled pixel with a valid depth.

    ``sigma = depth / fx * stride / 2`` so neighbouring footprints touch.
    ``pixel_mask`` further restricts which pixels may spawn Gaussians.
    """
    rows = np.arange(stride // 2, camera.height, stride)
    cols = np.arange(stride // 2, camera.width, stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    keep = obs.valid[rr, cc]
    if pixel_mask is not None:
        keep &= pixel_mask[rr, cc]
    rr, cc = rr[keep], cc[keep]
    if len(rr) == 0:
        return SceneModel()
    z = obs.depth[rr, cc]
    cam = np.column_stack([(cc + 0.5 - camera.cx) / camera.fx * z,
                           (rr + 0.5 - camera.cy) / camera.fy * z, z])
    mu = cam @ pose.rotation.T + pose.translation
    sigma = z / camera.fx * stride / 2
    color = np.clip(obs.rgb[rr, cc], 0.0, 1.0)
    return SceneModel.from_arrays(mu, sigma, init_opacity, color)


class _Adam:
    def __init__(self, lr: np.ndarray, b1: float, b2: float, eps: float = 1e-15):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _view_schedule(n_views: int, iterations: int, rng: np.random.Generator) -> list[int]:
    # alternate the newest view with a uniformly drawn one from the whole set
    newest = n_views - 1
    return [newest if i % 2 == 0 else int(rng.integers(n_views)) for i in range(iterations)]


def train_scene(scene: SceneModel, observations: Sequence[tuple[RgbdImage, Pose]],
                camera: Camera, config: TrainConfig = TrainConfig(),
                settings: RenderSettings = DEFAULT_SETTINGS) -> SceneModel:
    """Run ``iterations_per_view`` Adam steps on the L1 color + depth loss.

    The last observation is treated as the newly added one and is used on
    every other step; the remaining steps draw a view uniformly at random.
    """
    if not observations:
        raise ValueError("training needs at least one observation")
    if len(scene) == 0:
        return scene
    rng = np.random.default_rng([config.seed, len(observations)])
    lr = np.tile(config.step_sizes(), len(scene))
    opt = _Adam(lr, config.momentum, config.second_moment)
    w = scene.to_vector()
    initial: dict[int, float] = {}
    for v in _view_schedule(len(observations), config.iterations_per_view, rng):
        obs, pose = observations[v]
        loss, grad = loss_and_gradient(SceneModel.from_vector(w), pose, camera, obs,
                                       config.gamma, settings)
        if v not in initial:
            initial[v] = loss
        elif loss > 10 * initial[v] + 1e-12:
            raise DivergenceError(f"loss {loss:.4g} exceeds 10x its initial {initial[v]:.4g}")
        w = opt.step(w, grad)
        table = w.reshape(-1, 8)
        np.clip(table[:, 5:8], 0.0, 1.0, out=table[:, 5:8])
    return SceneModel.from_vector(w)


def observation_set_loss(scene: SceneModel, observations, camera: Camera, gamma: float = 0.5,
                         settings: RenderSettings = DEFAULT_SETTINGS) -> float:
    return float(np.mean([reconstruction_loss(render(scene, pose, camera, settings).image, obs, gamma)
                          for obs, pose in observations]))


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def closest_perceived_distribution(scene: SceneModel, p, eps: float) -> DistanceDistribution:
    if len(scene) == 0:
        raise EmptySceneError("perceived scene is empty")
    risks = scene_avar(p, scene, eps)
    i = int(np.argmin(risks))
    return DistanceDistribution(float(np.linalg.norm(scene.mu[i] - np.asarray(p, dtype=float))),
                                float(scene.sigma[i]))


def wasserstein2(a: DistanceDistribution, b: DistanceDistribution) -> float:
    return math.hypot(a.mean - b.mean, a.std - b.std)


# --------------------------------------------------------------------------
# experiment loop
# --------------------------------------------------------------------------

@dataclass
class _State:
    scene: SceneModel
    observations: list
    selections: list = field(default_factory=list)
    risk_history: list = field(default_factory=list)
    uncertainty: list = field(default_factory=list)
    w2_history: list = field(default_factory=list)
    iterations: int = 0


def _round_rng_seed(seed: int, stage: int, rnd: int) -> list[int]:
    return [seed, stage, rnd]


def _train(state: _State, config: ExperimentConfig, camera: Camera):
    tc = replace(config.train, seed=config.seed, gamma=config.gamma)
    state.scene = train_scene(state.scene, state.observations, camera, tc, config.settings)
    state.iterations += tc.iterations_per_view


def _add_view(state: _State, world: GroundTruthWorld, pose: Pose, config: ExperimentConfig,
              camera: Camera):
    obs = capture_rgbd(world, pose, camera, config.settings.far)
    if len(state.scene):
        covered = render(state.scene, pose, camera, config.settings).per_pixel_weight_sum
        fresh = covered < config.densify_threshold
    else:
        fresh = None
    new = unproject_init(obs, pose, camera, config.stride, config.init_opacity, fresh)
    state.scene = state.scene.concat(new)
    state.observations.append((obs, pose))
    _train(state, config, camera)


def bootstrap(config: ExperimentConfig, world: GroundTruthWorld) -> _State:
    camera = config.camera
    state = _State(SceneModel(), [])
    pose0 = look_at(config.recipe.initial_eye, config.recipe.initial_target)
    _add_view(state, world, pose0, config, camera)
    return state


def current_risk_profile(scene: SceneModel, path: Path, config: ExperimentConfig) -> RiskProfile:
    """Dynamic risk profile, or the fixed-radius one when ``uniform_radius`` is set."""
    if config.uniform_radius is not None:
        return RiskProfile.uniform(len(path), config.uniform_radius)
    return risk_profile(path, scene, config.mask_params, config.risk_driver)


def _acquire(state: _State, world: GroundTruthWorld, config: ExperimentConfig,
             stage: StageConfig, rnd: int):
    camera = config.camera
    path = config.recipe.path
    center = state.scene.mu.mean(axis=0) if len(state.scene) else path.waypoints.mean(axis=0)
    cands = sample_candidate_poses(stage.stage, path, center, stage.candidates, stage.radius,
                                   seed=_round_rng_seed(config.seed, stage.stage, rnd),
                                   world=world)
    train_views = [(pose, camera) for _, pose in state.observations]
    fisher = accumulate_training_fisher(state.scene, train_views, config.lam, config.settings,
                                        config.gamma if config.depth_fisher else 0.0)
    profile = current_risk_profile(state.scene, path, config)
    masked = mask_environment(state.scene, path, profile)
    # an empty mask scores every candidate zero; fall back to the unmasked objective
    use_mask = stage.masked and config.raem and len(masked) > 0
    pmask = ParameterMask.from_masked_scene(masked)
    state.risk_history.append((stage.stage, rnd, profile))
    inv = 1.0 / fisher.entries
    state.uncertainty.append((stage.stage, rnd, len(masked),
                              float(inv[pmask.selected].mean()) if len(masked) else math.nan,
                              float(inv.mean())))
    scores = score_candidates(cands, camera, state.scene, fisher,
                              (pmask if use_mask else None,), config.settings,
                              config.gamma if config.depth_fisher else 0.0)[:, 0]
    best = argmax_lowest(scores)
    pose = cands.poses[best]
    state.selections.append(Selection(stage.stage, rnd, best, float(scores[best]), use_mask,
                                      pose.translation.copy(), len(masked)))
    log.info("stage %d round %d: candidate %d eig %.4g (masked=%s, |M|=%d)",
             stage.stage, rnd, best, scores[best], use_mask, len(masked))
    _add_view(state, world, pose, config, camera)


def _compare(scene: SceneModel, config: ExperimentConfig, cloud: GroundTruthCloud):
    perceived, truth, w2 = [], [], []
    if len(scene):
        for p in config.recipe.path.waypoints:
            a = closest_perceived_distribution(scene, p, config.eps)
            b = closest_gt_distribution(cloud, p, config.eps)
            perceived.append(a)
            truth.append(b)
            w2.append(wasserstein2(a, b))
    return perceived, truth, np.array(w2)


def _record(state: _State, config: ExperimentConfig, cloud: GroundTruthCloud, stage: int, rnd: int):
    state.w2_history.append((stage, rnd, _compare(state.scene, config, cloud)[2]))


def _evaluate(state: _State, config: ExperimentConfig, cloud: GroundTruthCloud,
              valid: bool = True, error: str = "") -> ExperimentReport:
    perceived, truth, w2 = _compare(state.scene, config, cloud)
    return ExperimentReport(perceived, truth, w2, list(state.selections),
                            list(state.risk_history), list(state.uncertainty),
                            [obs for obs, _ in state.observations], state.iterations, valid, error,
                            list(state.w2_history))


def make_world(config: ExperimentConfig) -> tuple[GroundTruthWorld, GroundTruthCloud]:
    seed = config.seed if config.world_seed is None else config.world_seed
    world = build_world(config.recipe, seed)
    cloud = ground_truth_point_cloud(world, config.recipe.gt_density, config.recipe.sigma_hat,
                                     seed=seed)
    return world, cloud


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    world, cloud = make_world(config)
    state = _State(SceneModel(), [])
    try:
        state = bootstrap(config, world)
        _record(state, config, cloud, 0, 0)
        for stage in config.stages:
            for rnd in range(stage.views):
                _acquire(state, world, config, stage, rnd)
                _record(state, config, cloud, stage.stage, rnd)
    except Exception as exc:  # partial report, flagged invalid
        log.exception("experiment aborted")
        return _evaluate(state, config, cloud, valid=False, error=f"{type(exc).__name__}: {exc}")
    return _evaluate(state, config, cloud)


def run_variants(config: ExperimentConfig, variants: dict[str, dict]) -> dict[str, ExperimentReport]:
    """Run several configurations that differ only in masked-stage behaviour.

    Stages before the first masked stage are shared, so each variant's
    report equals ``run_experiment(replace(config, **overrides))``.
    Overrides may touch only ``raem``, ``risk_driver``, ``uniform_radius``,
    ``beta1``, ``beta2`` and ``r_max``.
    """
    allowed = {"raem", "risk_driver", "uniform_radius", "beta1", "beta2", "r_max"}
    for name, ov in variants.items():
        if set(ov) - allowed:
            raise ValueError(f"variant {name!r} changes shared settings {sorted(set(ov) - allowed)}")
    world, cloud = make_world(config)
    first_masked = next((i for i, s in enumerate(config.stages) if s.masked), len(config.stages))
    shared = bootstrap(config, world)
    _record(shared, config, cloud, 0, 0)
    for stage in config.stages[:first_masked]:
        for rnd in range(stage.views):
            _acquire(shared, world, config, stage, rnd)
            _record(shared, config, cloud, stage.stage, rnd)
    reports = {}
    for name, ov in variants.items():
        cfg = replace(config, **ov)
        state = copy.copy(shared)
        state.observations = list(shared.observations)
        state.selections = list(shared.selections)
        state.risk_history = list(shared.risk_history)
        state.uncertainty = list(shared.uncertainty)
        state.w2_history = list(shared.w2_history)
        for stage in cfg.stages[first_masked:]:
            for rnd in range(stage.views):
                _acquire(state, world, cfg, stage, rnd)
                _record(state, cfg, cloud, stage.stage, rnd)
        reports[name] = _evaluate(state, cfg, cloud)
    return reports


# --------------------------------------------------------------------------
# reporting
# --------------------------------------------------------------------------

METRICS_HEADER = ["record", "stage", "round", "k", "perceived_mean", "perceived_std", "gt_mean",
                  "gt_std", "w2", "w2_max", "alpha", "r_mask", "candidate", "eig"]


def _f(x) -> str:
    return repr(float(x))


def metrics_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    blank = [""] * len(METRICS_HEADER)

    def row(**kv):
        r = list(blank)
        for k, v in kv.items():
            r[METRICS_HEADER.index(k)] = v
        w.writerow(r)

    for k, (a, b, d) in enumerate(zip(report.perceived, report.ground_truth, report.w2)):
        row(record="waypoint", k=k, perceived_mean=_f(a.mean), perceived_std=_f(a.std),
            gt_mean=_f(b.mean), gt_std=_f(b.std), w2=_f(d))
    row(record="aggregate", w2=_f(report.w2_mean), w2_max=_f(report.w2_max))
    for stage, rnd, w2 in report.w2_history:
        if len(w2):
            row(record="round", stage=stage, round=rnd, w2=_f(np.mean(w2)), w2_max=_f(np.max(w2)))
    for stage, rnd, prof in report.risk_history:
        for k, (al, r) in enumerate(zip(prof.alpha, prof.radius)):
            row(record="risk", stage=stage, round=rnd, k=k, alpha=_f(al), r_mask=_f(r))
    for s in report.selections:
        row(record="selection", stage=s.stage, round=s.round, candidate=s.candidate, eig=_f(s.eig))
    return buf.getvalue()


def read_aggregate_w2(text: str) -> tuple[float, float]:
    for r in csv.DictReader(io.StringIO(text)):
        if r["record"] == "aggregate":
            return float(r["w2"]), float(r["w2_max"])
    raise ValueError("no aggregate row")


def uncertainty_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["stage", "round", "masked_gaussians", "mean_inv_fisher_masked",
                "mean_inv_fisher_all"])
    for stage, rnd, n, m, a in report.uncertainty:
        w.writerow([stage, rnd, n, _f(m), _f(a)])
    return buf.getvalue()


def emit_report(report: ExperimentReport, out_dir) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def put(name: str, text: str):
        p = os.path.join(out_dir, name)
        with open(p, "w", newline="") as fh:
            fh.write(text)
        written.append(p)

    put("metrics.csv", metrics_csv(report))
    put("uncertainty.csv", uncertainty_csv(report))
    put("status.json", json.dumps({"valid": report.valid, "error": report.error,
                                   "views": len(report.views), "iterations": report.iterations},
                                  indent=2) + "\n")
    for i, img in enumerate(report.views):
        base = os.path.join(out_dir, f"view_{i:02d}")
        write_ppm(base + ".ppm", img.rgb)
        write_depth_grid(base + "_depth.txt", img.depth)
        written += [base + ".ppm", base + "_depth.txt"]
    return written

"""Batch entry points: assets, dataset generation, augmentation, evaluation,
inspection and the planning benchmark.

Every command reads an optional JSON config (``--config``); ``--seed``,
``--workers`` and ``--out`` override the matching keys. Exit codes: 0 success,
1 invalid input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assets import AssetError, CabinetParams, generate_cabinet, load_default_chain, parse_object, scene_object, serialize_object
from .demogen import (
    DatasetError,
    Demonstration,
    GenParams,
    SubgoalEE,
    generate_for_object,
    read_object_dataset,
    render_object_cloud,
    scene_cameras,
    trial_seed,
)
from .planning import BITStarParams, PlanningError, RRTStarParams, one_obstacle_query, path_valid, plan_bit_star, plan_rrt_star
from .pointcloud import (
    EDGE_SHIFT_PROB,
    EDGE_SHIFT_SIGMA,
    FILTER_NEIGHBOR_RANGE,
    FILTER_STD_RATIO_RANGE,
    HOLE_APPLY_PROB,
    HOLE_THRESHOLD_RANGE,
    FilterParams,
    PointCloudFormatError,
    augment_edge_artifacts,
    augment_filter_params,
    augment_random_holes,
    encode_apc,
)
from .policy import DEFAULT_HORIZON, OracleHighLevel, normalized_opening_performance, replay_demonstration, rollout, waypoint_low_level

RUN_SCHEMA = "artopen.run/1"
DEFAULT_KINDS = ("revolute_left", "revolute_right", "prismatic")
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    workers: int = 1
    out: Path = Path("out")
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be a u64")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def get(self, key: str, default=None):
        return self.options.get(key, default)

    def count(self, key: str, default: int) -> int:
        v = self.options.get(key, default)
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise ConfigError(f"{key} must be a non-negative integer")
        return v

    def path(self, key: str) -> Path:
        v = self.options.get(key)
        if v is None:
            raise ConfigError(f"config key {key!r} is required")
        return Path(v)


def load_config(command: str, args: argparse.Namespace) -> RunConfig:
    opts: dict = {}
    if args.config is not None:
        try:
            opts = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"{args.config}: {e}") from e
        if not isinstance(opts, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
    for key in ("seed", "workers", "out"):
        v = getattr(args, key)
        if v is not None:
            opts[key] = v
    for key in ("dataset", "policy", "repeats"):
        v = getattr(args, key, None)
        if v is not None:
            opts[key] = v
    seed, workers, out = opts.pop("seed", 0), opts.pop("workers", 1), opts.pop("out", "out")
    if not isinstance(seed, int) or not isinstance(workers, int):
        raise ConfigError("seed and workers must be integers")
    return RunConfig(command, seed, workers, Path(out), opts)


def _dump(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _summary(cfg: RunConfig, results) -> dict:
    return {"schema": RUN_SCHEMA, "command": cfg.command, "seed": cfg.seed, "config": cfg.options, "results": results}


def _plot(path: Path, title: str, draw) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    draw(ax)
    ax.set_title(title)
    fig.tight_layout()
    # fixed metadata keeps the file bytes stable across runs
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


# -- gen-assets ---------------------------------------------------------------------


def cmd_gen_assets(cfg: RunConfig) -> dict:
    """Config: ``objects``: list of cabinet parameter dicts (default: one per kind)."""
    specs = cfg.get("objects", [{"kind": k} for k in DEFAULT_KINDS])
    if not isinstance(specs, list):
        raise ConfigError("objects must be a list")
    d = cfg.out / "assets"
    d.mkdir(parents=True, exist_ok=True)
    files = []
    for i, spec in enumerate(specs):
        spec = dict(spec)
        name = spec.pop("name", None)
        try:
            params = CabinetParams.from_dict(spec)
        except TypeError as e:
            raise ConfigError(f"objects[{i}]: {e}") from e
        obj = generate_cabinet(params, seed=trial_seed(cfg.seed, i, 0) % 2**32, name=name or f"cabinet_{i}_{params.kind}")
        path = d / f"{obj.name}.json"
        path.write_text(serialize_object(obj))
        files.append(str(path.relative_to(cfg.out)))
    res = _summary(cfg, {"assets": files})
    _dump(cfg.out / "summary.json", res)
    return res


# -- generate -----------------------------------------------------------------------


def _load_assets(cfg: RunConfig) -> list:
    paths = cfg.get("assets")
    if paths is None and cfg.get("assets_dir") is not None:
        root = Path(cfg.get("assets_dir"))
        if not root.is_dir():
            raise ConfigError(f"{root}: asset directory not found")
        paths = sorted(str(p) for p in root.glob("*.json"))
    if not paths:
        raise ConfigError("config needs 'assets' (list of object files) or 'assets_dir'")
    objs = []
    for p in paths:
        try:
            objs.append(parse_object(Path(p).read_text()))
        except OSError as e:
            raise ConfigError(f"{p}: {e}") from e
        except AssetError as e:
            raise AssetError(f"{p}: {e}") from e
    return objs


def cmd_generate(cfg: RunConfig) -> dict:
    """Config: ``assets`` or ``assets_dir``, ``n_configs`` (5), ``params`` (GenParams fields)."""
    objs = _load_assets(cfg)
    n = cfg.count("n_configs", 5)
    try:
        params = GenParams.from_dict(cfg.get("params", {}))
    except TypeError as e:
        raise ConfigError(f"params: {e}") from e
    chain = load_default_chain()
    results = []
    for obj in objs:
        t0 = time.perf_counter()
        res = generate_for_object(obj, n, cfg.seed, cfg.workers, params, chain, cfg.out)
        s = res.summary()
        results.append(
            {
                "object_id": s["object_id"],
                "trials": sum(c["trials"] for c in s["configs"]),
                "successes": sum(c["status_counts"]["success"] for c in s["configs"]),
                "n_winners": s["n_winners"],
                "best_normalized_opening": s["best_normalized_opening"],
                "configs": s["configs"],
            }
        )
        print(f"{obj.name}: {s['n_winners']}/{n} winners, best {s['best_normalized_opening']}, {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    doc = _summary(cfg, results)
    _dump(cfg.out / "summary.json", doc)
    _plot(
        cfg.out / "winners.png",
        "winners per object",
        lambda ax: ax.bar([r["object_id"] for r in results], [r["n_winners"] for r in results]),
    )
    return doc


# -- augment ------------------------------------------------------------------------


def _dataset_dirs(root: Path) -> list[Path]:
    if not root.is_dir():
        raise ConfigError(f"{root}: dataset directory not found")
    return sorted(p.parent for p in root.glob("*/meta.json"))


def _augment_frame(obj, demo: Demonstration, t: int, opts: dict, seed: int) -> tuple[object, list]:
    """Re-render step t, corrupt each depth map and rebuild the cloud. Returns
    the cloud and the zeroed-pixel fraction per camera."""
    sobj = scene_object(obj, demo.scene)
    step = demo.steps[t]
    zeroed = []

    def augment(k, depth):
        s = trial_seed(seed, t, k)
        d = augment_edge_artifacts(depth, s, opts["edge_sigma"], opts["edge_prob"])
        d = augment_random_holes(d, s + 1, opts["hole_threshold_range"], opts["hole_prob"])
        valid = depth.values > 0
        zeroed.append(float(np.mean(valid & (d.values == 0))))
        return d

    std_ratio, neighbors = augment_filter_params(trial_seed(seed, t, 2**16), opts["filter_std_range"], opts["filter_neighbor_range"])
    filters = FilterParams(radius_min_neighbors=neighbors, stat_std_ratio=std_ratio)
    cams = scene_cameras(sobj, demo.scene, GenParams.from_dict(opts["gen"]).rig)
    n_points = GenParams.from_dict(opts["gen"]).n_points
    cloud = render_object_cloud(sobj, step.theta, demo.scene, cams, n_points, step.cloud_seed, augment, filters)
    return cloud, zeroed


def _augment_task(task):
    obj, demo, t, opts, seed = task
    return _augment_frame(obj, demo, t, opts, seed)


def cmd_augment(cfg: RunConfig) -> dict:
    """Config: ``dataset``, ``edge_prob``, ``edge_sigma``, ``hole_prob``,
    ``hole_threshold_range``, ``filter_std_range``, ``filter_neighbor_range``,
    ``params`` (the GenParams used at generation, for the camera rig)."""
    src = cfg.path("dataset")
    opts = {
        "edge_prob": float(cfg.get("edge_prob", EDGE_SHIFT_PROB)),
        "edge_sigma": float(cfg.get("edge_sigma", EDGE_SHIFT_SIGMA)),
        "hole_prob": float(cfg.get("hole_prob", HOLE_APPLY_PROB)),
        "hole_threshold_range": tuple(cfg.get("hole_threshold_range", HOLE_THRESHOLD_RANGE)),
        "filter_std_range": tuple(cfg.get("filter_std_range", FILTER_STD_RATIO_RANGE)),
        "filter_neighbor_range": tuple(cfg.get("filter_neighbor_range", FILTER_NEIGHBOR_RANGE)),
        "gen": cfg.get("params", {}),
    }
    for key in ("edge_prob", "hole_prob"):
        if not 0.0 <= opts[key] <= 1.0:
            raise ConfigError(f"{key} must be in [0, 1]")
    results = []
    for d in _dataset_dirs(src):
        meta, demos = read_object_dataset(d)
        obj = parse_object(meta["object"])
        dst = cfg.out / d.name
        if dst.resolve() == d.resolve():
            raise ConfigError("--out must differ from the dataset directory")
        shutil.copytree(d, dst, dirs_exist_ok=True)
        tasks = []
        for k, (entry, demo) in enumerate(zip(meta["trajectories"], demos)):
            for t, st in enumerate(demo.steps):
                if st.cloud is not None:
                    tasks.append((obj, demo, t, opts, trial_seed(cfg.seed, k, t)))
        if cfg.workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(cfg.workers) as ex:
                out = list(ex.map(_augment_task, tasks, chunksize=max(1, len(tasks) // (4 * cfg.workers))))
        else:
            out = [_augment_task(x) for x in tasks]
        frames = []
        it = iter(out)
        for k, (entry, demo) in enumerate(zip(meta["trajectories"], demos)):
            for t, st in enumerate(demo.steps):
                if st.cloud is None:
                    continue
                cloud, zeroed = next(it)
                (dst / entry["dir"] / f"pc_{t}.apc").write_bytes(encode_apc(cloud))
                frames.append({"traj": entry["dir"], "t": t, "zeroed_fraction": zeroed, "points": len(cloud)})
        results.append({"object_id": meta["object"]["name"], "frames": frames})
    doc = _summary(cfg, results)
    _dump(cfg.out / "summary.json", doc)
    return doc


# -- evaluate -----------------------------------------------------------------------


def _noop_high_level(obs) -> SubgoalEE:
    return SubgoalEE.from_pose(obs.pose, obs.finger_width)


def _episode(task) -> dict:
    obj, demo, theta_target, policy, horizon, seed = task
    chain = load_default_chain()
    sobj = scene_object(obj, demo.scene)
    theta_demo = demo.final_theta
    if policy == "replay":
        r = replay_demonstration(chain, sobj, demo)
    else:
        hl = OracleHighLevel.from_demo(sobj, demo, theta_target, gripper=chain.gripper) if policy == "oracle" else _noop_high_level
        r = rollout(hl, waypoint_low_level, chain, sobj, demo.scene, horizon, theta_target, seed=seed)
    perf = normalized_opening_performance(demo.theta_init, r.final_theta, theta_demo)
    return {"status": r.status, "theta_init": r.theta_init, "final_theta": r.final_theta, "theta_demo": theta_demo, "normalized_opening": perf, "steps": len(r.steps)}


def cmd_evaluate(cfg: RunConfig) -> dict:
    """Config: ``dataset``, ``policy`` (oracle, noop or replay), ``repeats`` (3), ``horizon``.

    Per-episode performance is reported raw; the aggregate clips it at 1 so an
    episode cannot score above its demonstration."""
    policy = cfg.get("policy", "oracle")
    if policy not in ("oracle", "noop", "replay"):
        raise ConfigError(f"unknown policy {policy!r}")
    repeats = cfg.count("repeats", 3)
    horizon = cfg.count("horizon", DEFAULT_HORIZON)
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    tasks, keys = [], []
    for d in _dataset_dirs(cfg.path("dataset")):
        meta, demos = read_object_dataset(d)
        obj = parse_object(meta["object"])
        for entry, demo in zip(meta["trajectories"], demos):
            for rep in range(repeats):
                tasks.append((obj, demo, entry["theta_target"], policy, horizon, trial_seed(cfg.seed, entry["config"], rep) % 2**32))
                keys.append((meta["object"]["name"], entry["dir"], entry["config"], rep))
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            out = list(ex.map(_episode, tasks))
    else:
        out = [_episode(t) for t in tasks]
    episodes = [dict(object_id=k[0], traj=k[1], config=k[2], repeat=k[3], **r) for k, r in zip(keys, out)]
    per_repeat = []
    for rep in range(repeats):
        vals = [min(e["normalized_opening"], 1.0) for e in episodes if e["repeat"] == rep]
        per_repeat.append(float(np.mean(vals)) if vals else math.nan)
    m = float(np.mean(per_repeat)) if episodes else None
    sd = float(np.std(per_repeat)) if episodes else None
    doc = _summary(cfg, {"policy": policy, "episodes": episodes, "per_repeat_mean": per_repeat, "mean": m, "std": sd})
    _dump(cfg.out / "metrics.json", doc)
    if episodes:
        _plot(
            cfg.out / "normalized_opening.png",
            f"{policy}: normalized opening",
            lambda ax: ax.hist([e["normalized_opening"] for e in episodes], bins=20, range=(0.0, 1.5)),
        )
    return doc


# -- inspect ------------------------------------------------------------------------


def cmd_inspect(cfg: RunConfig) -> dict:
    """Config: ``dataset``. Prints one row per trajectory and writes plots."""
    rows = []
    for d in _dataset_dirs(cfg.path("dataset")):
        meta, demos = read_object_dataset(d)
        for entry, demo in zip(meta["trajectories"], demos):
            span = demo.final_theta - demo.theta_init
            rows.append(
                {
                    "object_id": meta["object"]["name"],
                    "traj": entry["dir"],
                    "config": entry["config"],
                    "steps": len(demo.steps),
                    "clouds": sum(s.cloud is not None for s in demo.steps),
                    "theta_init": demo.theta_init,
                    "final_theta": demo.final_theta,
                    "opened": span,
                }
            )
    print(f"{'object':32s} {'traj':8s} {'cfg':>3s} {'steps':>5s} {'clouds':>6s} {'final_theta':>11s}")
    for r in rows:
        print(f"{r['object_id']:32s} {r['traj']:8s} {r['config']:3d} {r['steps']:5d} {r['clouds']:6d} {r['final_theta']:11.4f}")
    doc = _summary(cfg, {"trajectories": rows})
    _dump(cfg.out / "inspect.json", doc)
    if rows:
        _plot(cfg.out / "steps.png", "trajectory length", lambda ax: ax.hist([r["steps"] for r in rows], bins=20))
        _plot(cfg.out / "opened.png", "opened amount", lambda ax: ax.hist([r["opened"] for r in rows], bins=20))
    return doc


# -- bench --------------------------------------------------------------------------


def cmd_bench(cfg: RunConfig) -> dict:
    """Config: ``n_seeds`` (50). One-obstacle 7-DOF planning benchmark; paths are
    re-validated at half the planner's edge resolution."""
    n = cfg.count("n_seeds", 50)
    query = one_obstacle_query()
    planners = {"rrt_star": lambda s: plan_rrt_star(query, RRTStarParams(), s), "bit_star": lambda s: plan_bit_star(query, BITStarParams(), s)}
    results = {}
    for name, plan in planners.items():
        lengths = []
        for s in range(n):
            try:
                path = plan(trial_seed(cfg.seed, s, 0) % 2**32)
            except PlanningError:
                continue
            if path_valid(query.validity, path.waypoints, query.resolution / 2.0):
                lengths.append(path.length())
        ok = len(lengths)
        results[name] = {"seeds": n, "successes": ok, "rate": ok / n if n else None, "mean_length": float(np.mean(lengths)) if lengths else None}
    doc = _summary(cfg, results)
    _dump(cfg.out / "bench.json", doc)
    return doc


# -- entry point ----------------------------------------------------------------------

COMMANDS = {
    "gen-assets": cmd_gen_assets,
    "generate": cmd_generate,
    "augment": cmd_augment,
    "evaluate": cmd_evaluate,
    "inspect": cmd_inspect,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="artopen", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (u64)")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--out", help="output directory")
        if name in ("augment", "evaluate", "inspect"):
            p.add_argument("--dataset", help="dataset directory")
        if name == "evaluate":
            p.add_argument("--policy", choices=("oracle", "noop", "replay"))
            p.add_argument("--repeats", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg)
    except (ConfigError, AssetError, DatasetError, PointCloudFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001
        print(f"failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

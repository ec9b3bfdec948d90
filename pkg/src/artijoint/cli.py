"""Command-line entry point: ``artijoint gen|estimate|eval|render-state|urdf|report``.

Exit codes: 0 success, 2 validation error, 3 IO error, 4 internal invariant
violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .estimator import ABLATION_MODES, EstimateConfig, estimate_scene, hypotheses_from_json
from .kinematics import Joint, KinematicsError
from .metrics import EvalReport, MetricsError, Thresholds, evaluate_dataset
from .motionseed import SeedFilterConfig
from .sim import (
    CATEGORIES,
    Camera,
    NoiseConfig,
    PmapFormatError,
    generate_object,
    read_pmap,
    render_pointmap,
    render_state_pair,
    suggest_camera,
    write_pmap,
)
from .urdf import UrdfError, emit_urdf, object_to_urdf, parse_urdf, urdf_joints, urdf_to_object

log = logging.getLogger("artijoint")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4
BENCHMARK_CATEGORIES = ("cabinet_door", "drawer_unit", "laptop_lid", "multi_joint_mixed")
RUN_CONFIG = "run_config.json"
MANIFEST = "manifest.json"
INDEX = "index.json"

DIRECT_NOTE = ("direct mode has no second state: the opened-state map is replaced by a copy of the "
               "closed-state map, so no motion seeds survive and no hypotheses are produced")


class ValidationError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    categories: list[str] = field(default_factory=lambda: list(BENCHMARK_CATEGORIES))
    count: int = 0
    seed: int = 1
    noise: dict = field(default_factory=lambda: NoiseConfig().to_dict())
    filter: dict = field(default_factory=lambda: SeedFilterConfig().to_dict())
    estimate: dict = field(default_factory=lambda: EstimateConfig().to_dict())
    thresholds: dict = field(default_factory=lambda: Thresholds().to_dict())
    mode: str = "oracle"
    jobs: int = 1
    out: str = ""
    inputs: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        try:
            for c in self.categories:
                if c not in CATEGORIES:
                    raise ValidationError(f"unknown category {c!r}; choose from {', '.join(CATEGORIES)}")
            if self.count < 0:
                raise ValidationError("--count must be non-negative")
            if self.jobs < 1:
                raise ValidationError("--jobs must be at least 1")
            if self.mode not in ABLATION_MODES:
                raise ValidationError(f"--mode must be one of {ABLATION_MODES}")
            NoiseConfig(**self.noise)
            SeedFilterConfig.from_dict(self.filter)
            EstimateConfig.from_dict(self.estimate)
            Thresholds(**self.thresholds)
        except ValidationError:
            raise
        except (ValueError, TypeError) as exc:
            raise ValidationError(str(exc)) from exc
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / RUN_CONFIG).write_text(self.to_json())


def _config_from_args(args, command: str) -> RunConfig:
    cats = getattr(args, "category", None)
    if cats in (None, ""):
        categories = list(BENCHMARK_CATEGORIES)
    elif cats == "all":
        categories = list(CATEGORIES)
    else:
        categories = [c.strip() for c in cats.split(",") if c.strip()]
    filt = SeedFilterConfig(args.conf_gate, args.low_pct, args.high_pct).to_dict() \
        if hasattr(args, "conf_gate") else SeedFilterConfig().to_dict()
    est = EstimateConfig(K=args.K).to_dict() if hasattr(args, "K") else EstimateConfig().to_dict()
    th = Thresholds.parse(args.thresholds).to_dict() if getattr(args, "thresholds", None) else Thresholds().to_dict()
    return RunConfig(command, categories, int(getattr(args, "count", 0) or 0), int(getattr(args, "seed", 1)),
                     NoiseConfig(point_sigma=getattr(args, "noise_sigma", 0.0)).to_dict(), filt, est, th,
                     getattr(args, "mode", "oracle") or "oracle", int(getattr(args, "jobs", 1)),
                     str(args.out))


# ---------------------------------------------------------------------------
# gen

def scene_plan(categories, count: int, seed: int) -> list[tuple[str, int]]:
    """``(category, seed)`` per scene: consecutive seeds, categories in equal blocks."""
    return [(categories[k * len(categories) // count], seed + k) for k in range(count)]


def scene_name(k: int, category: str, seed: int) -> str:
    return f"scene_{k:04d}_{category}_{seed}"


def generate_scene(directory: Path, category: str, seed: int, noise: NoiseConfig) -> dict:
    obj, gt = generate_object(category, seed)
    cam = suggest_camera(obj)
    P0, P1 = render_state_pair(obj, cam, noise, seed)
    directory.mkdir(parents=True, exist_ok=True)
    write_pmap(directory / "p0.pmap", P0)
    write_pmap(directory / "p1.pmap", P1)
    (directory / "gt.urdf").write_text(emit_urdf(object_to_urdf(obj)))
    manifest = {"name": directory.name, "category": category, "seed": seed, "camera": cam.to_dict(),
                "noise": noise.to_dict(), "bbox_diagonal": obj.bbox_diagonal,
                "joints": [j.to_dict() for j in gt],
                "files": {"p0": "p0.pmap", "p1": "p1.pmap", "urdf": "gt.urdf"}}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def cmd_gen(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    cfg.write(out)
    noise = NoiseConfig(**cfg.noise)
    names = []
    for k, (cat, seed) in enumerate(scene_plan(cfg.categories, cfg.count, cfg.seed)):
        name = scene_name(k, cat, seed)
        generate_scene(out / name, cat, seed, noise)
        names.append(name)
    (out / INDEX).write_text(json.dumps({"scenes": names}, indent=2) + "\n")
    print(f"generated {len(names)} scenes in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate

def load_dataset(data: Path) -> list[Path]:
    index = data / INDEX
    if not index.is_file():
        raise FileNotFoundError(f"{index} not found; is {data} a generated dataset?")
    return [data / n for n in json.loads(index.read_text())["scenes"]]


def load_manifest(scene: Path) -> dict:
    return json.loads((scene / MANIFEST).read_text())


def _estimate_one(task) -> tuple[str, str]:
    scene, mode, est, filt = task
    scene = Path(scene)
    P0, P1 = read_pmap(scene / "p0.pmap"), read_pmap(scene / "p1.pmap")
    res = estimate_scene(P0, P1, mode, EstimateConfig.from_dict(est), SeedFilterConfig.from_dict(filt))
    cfg = EstimateConfig.from_dict(est)
    body = {"scene": scene.name, "mode": mode, "hypotheses": [h.to_dict() for h in res.hypotheses],
            "diagnostics": res.diagnostics(cfg.K)}
    if mode == "direct":
        body["note"] = DIRECT_NOTE
    return scene.name, json.dumps(body, indent=2, sort_keys=True) + "\n"


def run_estimates(scenes: list[Path], mode: str, est: dict, filt: dict, jobs: int) -> list[tuple[str, str]]:
    tasks = [(str(s), mode, est, filt) for s in scenes]
    if jobs == 1:
        return [_estimate_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_estimate_one, tasks))


def cmd_estimate(cfg: RunConfig) -> int:
    scenes = load_dataset(Path(cfg.inputs["data"]))
    out = Path(cfg.out)
    cfg.write(out)
    results = run_estimates(scenes, cfg.mode, cfg.estimate, cfg.filter, cfg.jobs)
    total = 0
    for name, text in results:
        (out / f"{name}.json").write_text(text)
        total += len(json.loads(text)["hypotheses"])
    print(f"{cfg.mode}: {total} hypotheses over {len(results)} scenes written to {out}")
    if cfg.mode == "direct":
        print(f"note: {DIRECT_NOTE}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

def evaluate_run(data: Path, pred: Path, thresholds: Thresholds, K: int) -> EvalReport:
    scenes = load_dataset(data)
    available = {p.stem for p in pred.glob("scene_*.json")}
    wanted = {s.name for s in scenes}
    if available != wanted:
        missing, extra = sorted(wanted - available), sorted(available - wanted)
        raise ValidationError(f"scene sets differ: missing predictions {missing[:5]}, unknown {extra[:5]}")
    records = []
    for s in scenes:
        man = load_manifest(s)
        gt = [Joint.from_dict(d) for d in man["joints"]]
        body = json.loads((pred / f"{s.name}.json").read_text())
        preds = hypotheses_from_json(json.dumps(body["hypotheses"]))
        records.append((gt, preds, man["bbox_diagonal"], s.name))
    return evaluate_dataset(records, thresholds, K)


def cmd_eval(cfg: RunConfig) -> int:
    report = evaluate_run(Path(cfg.inputs["data"]), Path(cfg.inputs["pred"]),
                          Thresholds(**cfg.thresholds), int(cfg.estimate["K"]))
    out = Path(cfg.out)
    cfg.write(out)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    print(report.summary_table())
    return EXIT_OK


# ---------------------------------------------------------------------------
# render-state

def render_joint_state(scene: Path, joint: int, t: float):
    man = load_manifest(scene)
    obj, _ = generate_object(man["category"], int(man["seed"]))
    n = len(obj.movable)
    if not 0 <= joint < n:
        raise ValidationError(f"joint id {joint} out of range for a scene with {n} joints")
    if not 0.0 <= t <= 1.0:
        raise ValidationError("t must lie in [0, 1]")
    states = np.zeros(n)
    states[joint] = t
    # the fully opened state reuses the opened-state noise stream
    noise_seed = int(man["seed"]) + (1 if t == 1.0 else 0)
    return render_pointmap(obj, states, Camera.from_dict(man["camera"]), NoiseConfig(**man["noise"]), noise_seed)


def cmd_render_state(cfg: RunConfig) -> int:
    pm = render_joint_state(Path(cfg.inputs["scene"]), int(cfg.inputs["joint"]), float(cfg.inputs["t"]))
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pmap(out, pm)
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# urdf

def cmd_urdf(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    if cfg.inputs["action"] == "export":
        cat = cfg.categories[0]
        obj, _ = generate_object(cat, cfg.seed)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(emit_urdf(object_to_urdf(obj)))
        print(f"wrote {out}")
        return EXIT_OK
    model = parse_urdf(Path(cfg.inputs["file"]).read_text())
    for w in model.warnings:
        log.warning(w)
    obj = urdf_to_object(model)
    body = {"name": model.name, "links": len(model.links),
            "joints": [j.to_dict() for j in urdf_joints(model)],
            "movable_parts": len(obj.movable), "warnings": model.warnings}
    text = json.dumps(body, indent=2, sort_keys=True) + "\n"
    if cfg.out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report: the ablation harness

def cmd_report(cfg: RunConfig) -> int:
    data = Path(cfg.inputs["data"])
    scenes = load_dataset(data)
    out = Path(cfg.out)
    cfg.write(out)
    th = Thresholds(**cfg.thresholds)
    rows = {}
    for mode in ABLATION_MODES:
        pred = out / f"estimates_{mode}"
        pred.mkdir(parents=True, exist_ok=True)
        for name, text in run_estimates(scenes, mode, cfg.estimate, cfg.filter, cfg.jobs):
            (pred / f"{name}.json").write_text(text)
        report = evaluate_run(data, pred, th, int(cfg.estimate["K"]))
        (out / f"report_{mode}.json").write_text(report.to_json() + "\n")
        rows[mode] = report
    lines = [f"{'mode':<8}{'SR':>8}{'matched':>9}{'n_gt':>7}{'spurious':>10}"]
    for mode, r in rows.items():
        lines.append(f"{mode:<8}{r.overall_sr:>8.4f}{r.n_matched:>9d}{r.n_gt:>7d}{r.spurious_count:>10d}")
    summary = "\n".join(lines) + f"\n\nnote: {DIRECT_NOTE}\n"
    (out / "summary.txt").write_text(summary)
    (out / "summary.json").write_text(json.dumps(
        {m: {"overall_sr": r.overall_sr, "n_gt": r.n_gt, "n_matched": r.n_matched,
             "spurious_count": r.spurious_count, "mean_errors": r.mean_errors} for m, r in rows.items()},
        indent=2, sort_keys=True) + "\n")
    print(summary, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _add_filter_flags(p):
    p.add_argument("--conf-gate", type=float, default=0.85)
    p.add_argument("--low-pct", type=float, default=0.15)
    p.add_argument("--high-pct", type=float, default=0.20)
    p.add_argument("--K", type=int, default=16)
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artijoint", description="Articulated joint estimation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate scenes (manifest, GT URDF, PMAP pair)")
    p.add_argument("--category", default=None, help="comma-separated categories, or 'all'")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="estimate joints for every scene of a dataset")
    p.add_argument("data")
    p.add_argument("--mode", choices=ABLATION_MODES, default="oracle")
    _add_filter_flags(p)
    p.add_argument("--out", default=None)

    p = sub.add_parser("eval", help="score estimates against ground truth")
    p.add_argument("data")
    p.add_argument("pred")
    p.add_argument("--thresholds", default=None, help="axis,origin,range,direction")
    p.add_argument("--K", type=int, default=16)
    p.add_argument("--out", default=None)

    p = sub.add_parser("render-state", help="render one joint at state t, the others closed")
    p.add_argument("scene")
    p.add_argument("--joint", type=int, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("urdf", help="export a generated object or import a URDF file")
    usub = p.add_subparsers(dest="action", required=True)
    e = usub.add_parser("export")
    e.add_argument("--category", required=True)
    e.add_argument("--seed", type=int, default=1)
    e.add_argument("--out", required=True)
    i = usub.add_parser("import")
    i.add_argument("file")
    i.add_argument("--out", default="")

    p = sub.add_parser("report", help="ablation harness: oracle, direct and 2d modes on one dataset")
    p.add_argument("data")
    p.add_argument("--thresholds", default=None)
    _add_filter_flags(p)
    p.add_argument("--out", default=None)
    return parser


COMMANDS = {"gen": cmd_gen, "estimate": cmd_estimate, "eval": cmd_eval, "render-state": cmd_render_state,
            "urdf": cmd_urdf, "report": cmd_report}


def _resolve(args) -> RunConfig:
    cmd = args.command
    if cmd == "estimate" and args.out is None:
        args.out = str(Path(args.data) / f"estimates_{args.mode}")
    if cmd in ("eval", "report") and args.out is None:
        args.out = str(Path(args.data) / ("eval" if cmd == "eval" else "report"))
    cfg = _config_from_args(args, cmd)
    if cmd in ("estimate", "eval", "report"):
        cfg.inputs["data"] = args.data
    if cmd == "eval":
        cfg.inputs["pred"] = args.pred
    if cmd == "render-state":
        cfg.inputs.update(scene=args.scene, joint=args.joint, t=args.t)
    if cmd == "urdf":
        cfg.inputs["action"] = args.action
        if args.action == "import":
            cfg.inputs["file"] = args.file
    return cfg.validate()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg)
    except (ValidationError, MetricsError, KinematicsError, UrdfError, ValueError) as exc:
        if isinstance(exc, PmapFormatError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - reported as an internal failure
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

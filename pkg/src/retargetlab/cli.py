"""Command-line front end.

Every command reads JSON documents and writes JSON or CSV. Outputs depend
only on the inputs and ``--seed``, so re-running a command reproduces its
files byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from retargetlab import cepr, metrics
from retargetlab.errors import ModelError, PreconditionError
from retargetlab.kinematics import RobotModel, fixture_path, link_transforms, load_model_file
from retargetlab.objective import (
    CostWeights,
    MappingConfig,
    SearchConfig,
    analytic_probes,
    certify_negative_curvature,
)
from retargetlab.retarget import SolverConfig, retarget_sequence
from retargetlab.sequences import (
    MotionSequence,
    RobotTrajectory,
    dumps,
    matrix_to_quat_wxyz,
    read_json,
    write_json,
)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class CliError(Exception):
    pass


def _load(path, what: str):
    try:
        return read_json(path)
    except FileNotFoundError:
        raise CliError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _parse(path, what: str, parser):
    doc = _load(path, what)
    try:
        return parser(doc)
    except ModelError as exc:
        raise CliError(f"{path}: {exc}") from None
    except KeyError as exc:
        raise CliError(f"{path}: missing field {exc}") from None
    except (ValueError, TypeError) as exc:
        raise CliError(f"{path}: {exc}") from None


def load_model_arg(spec: str) -> RobotModel:
    """A model file path, or the name of a bundled fixture."""
    path = Path(spec)
    if not path.exists():
        path = fixture_path(spec if spec.endswith(".json") else f"{spec}.json")
        if "/" in spec or not path.exists():
            raise CliError(f"model file not found: {spec}")
    try:
        return load_model_file(path)
    except ModelError as exc:
        raise CliError(str(exc)) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _trajectory_for(path, model: RobotModel) -> RobotTrajectory:
    traj = _parse(path, "trajectory", RobotTrajectory.from_dict)
    if len(traj) == 0:
        raise CliError(f"{path}: no frames")
    try:
        return traj.for_model(model)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None


def _config(path) -> dict:
    if path is None:
        return {}
    doc = _load(path, "config")
    if not isinstance(doc, dict):
        raise CliError(f"{path}: config must be a JSON object")
    return doc


def _out_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


# --------------------------------------------------------------------------- commands


def cmd_fk(args) -> int:
    model = load_model_arg(args.model)
    traj = _trajectory_for(args.trajectory, model)
    names = [link.name for link in model.links]
    frames = []
    for cfg in traj.frames:
        rots, trans = link_transforms(model, cfg)
        frames.append({"poses": [{"pos": trans[i], "quat_wxyz": matrix_to_quat_wxyz(rots[i])}
                                 for i in range(len(names))]})
    _out_text(args.out, dumps({"fps": traj.fps, "body_names": names, "frames": frames}))
    return EXIT_OK


def cmd_retarget(args) -> int:
    model = load_model_arg(args.model)
    mapping = _parse(args.mapping, "mapping", MappingConfig.from_dict)
    motion = _parse(args.motion, "motion", MotionSequence.from_dict)
    if len(motion) == 0:
        raise CliError(f"{args.motion}: no frames")
    try:
        solver = SolverConfig.from_dict(_config(args.config).get("solver", {}))
    except (ValueError, TypeError) as exc:
        raise CliError(f"{args.config}: {exc}") from None
    try:
        result = retarget_sequence(model, mapping, motion, solver, cold_restart=args.cold_restart)
    except KeyError as exc:
        raise CliError(f"{args.motion}: {exc.args[0]}") from None
    except ValueError as exc:
        raise CliError(str(exc)) from None
    write_json(args.out, result.trajectory.to_dict())

    q = result.trajectory.q
    steps = np.zeros(len(q))
    if len(q) > 1 and q.shape[1]:
        steps[1:] = np.abs(np.diff(q, axis=0)).max(axis=1)
    rows = []
    for t, d in enumerate(result.per_frame):
        rows.append({
            "frame": t, "final_cost": d.final_cost, "iterations": d.iterations, "converged": int(d.converged),
            "at_saddle": int(d.at_saddle), "stalled_at_limit": int(d.stalled_at_limit),
            "min_hessian_eigenvalue": "" if d.min_hessian_eigenvalue is None else d.min_hessian_eigenvalue,
            "rejected_steps": d.rejected_steps, "max_joint_step": float(steps[t]), "error": d.error or "",
        })
    diag_path = args.diagnostics or str(Path(args.out).with_suffix("")) + ".diagnostics.csv"
    _out_text(diag_path, metrics.csv_text(rows))
    failed = sum(d.error is not None for d in result.per_frame)
    if failed:
        print(f"{failed} of {len(result.per_frame)} frames failed; see {diag_path}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_certify(args) -> int:
    model = load_model_arg(args.model)
    cfg = _config(args.config)
    try:
        weights = CostWeights(**cfg.get("weights", {}))
        search_doc = dict(cfg.get("search", {}))
        if "config_box" in search_doc:
            lo, hi = search_doc["config_box"]
            search_doc["config_box"] = (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
        if "target_box" in search_doc:
            search_doc["target_box"] = tuple(search_doc["target_box"])
        search_doc["seed"] = args.seed
        search = SearchConfig(**search_doc)
    except TypeError as exc:
        raise CliError(f"{args.config}: {exc}") from None
    except ValueError as exc:
        raise CliError(f"{args.config}: {exc}") from None
    error_map = cfg.get("error_map", "se3")
    body = args.body or cfg.get("body") or model.links[model.order[-1]].name
    try:
        cert = certify_negative_curvature(model, body, weights, search, error_map)
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if cert is None:
        write_json(args.out, {"found": False, "model": model.name, "body": body, "seed": args.seed,
                              "n_samples": search.n_samples})
        print("no negative-curvature direction found", file=sys.stderr)
        return EXIT_FAILED
    probes = [label for label, _, _ in analytic_probes(model, body, search.config_box)]
    write_json(args.out, {"found": True, "model": model.name, "probes": probes, **cert.to_dict()})
    return EXIT_OK


def _filter_item(index: int, item: dict, base_dir: Path, args, cfg: dict) -> dict:
    path = item.get("path")
    kind = item.get("kind")
    row = {"index": index, "path": path, "kind": kind}
    try:
        if kind not in ("human", "robot"):
            raise CliError(f"manifest item {index}: kind must be 'human' or 'robot', got {kind!r}")
        if not path:
            raise CliError(f"manifest item {index}: missing path")
        full = Path(path) if Path(path).is_absolute() else base_dir / path
        if kind == "human":
            seq = _parse(full, "motion", MotionSequence.from_dict)
            feet = item.get("feet", cfg.get("feet"))
            if not feet:
                raise CliError(f"manifest item {index}: human items need 'feet'")
            masses = item.get("masses", cfg.get("masses", {}))
            up = item.get("up_axis", cfg.get("up_axis", "Z"))
            report = cepr.curate_human_sequence(seq, masses, feet, cepr.CurationConfig(**cfg.get("curation", {})), up)
        else:
            model_spec = item.get("model") or args.model
            if not model_spec:
                raise CliError(f"manifest item {index}: robot items need a model")
            if item.get("model") and not Path(model_spec).is_absolute() and (base_dir / model_spec).exists():
                model_spec = str(base_dir / model_spec)
            model = load_model_arg(model_spec)
            traj = _trajectory_for(full, model)
            fdoc = dict(cfg.get("filter", {}))
            if isinstance(fdoc.get("qdot_max"), list):
                fdoc["qdot_max"] = np.asarray(fdoc["qdot_max"], dtype=float)
            report = cepr.filter_robot_sequence(traj, model, cepr.FilterConfig(**fdoc))
        row.update(status="ok", **report.to_dict())
    except (CliError, ValueError, TypeError, KeyError) as exc:
        row.update(status="error", error=str(exc))
    return row


def cmd_filter(args) -> int:
    manifest = _load(args.manifest, "manifest")
    items = manifest.get("items") if isinstance(manifest, dict) else manifest
    if not isinstance(items, list):
        raise CliError(f"{args.manifest}: expected a list of items")
    cfg = _config(args.config)
    base_dir = Path(args.manifest).resolve().parent
    # results are collected in manifest order regardless of completion order
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        rows = list(pool.map(lambda ix: _filter_item(ix[0], ix[1], base_dir, args, cfg), enumerate(items)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "reports.json", rows)
    summary = [{
        "index": r["index"], "path": r["path"], "kind": r["kind"], "status": r["status"],
        "verdict": r.get("verdict", ""),
        "reasons": ";".join(x["check"] for x in r.get("reasons", [])),
        "error": r.get("error", ""),
    } for r in rows]
    _out_text(out / "summary.csv", metrics.csv_text(summary))
    errors = [r for r in rows if r["status"] == "error"]
    for r in errors:
        print(f"item {r['index']} ({r['path']}): {r['error']}", file=sys.stderr)
    return EXIT_FAILED if errors else EXIT_OK


def cmd_metrics(args) -> int:
    model = load_model_arg(args.model)
    refs = args.reference or []
    if refs and len(refs) != len(args.trajectory):
        raise CliError(f"got {len(args.trajectory)} trajectories but {len(refs)} references")
    rows = []
    for i, path in enumerate(args.trajectory):
        traj = _trajectory_for(path, model)
        row = {"trajectory": path, **metrics.quality_report(traj, model).csv_row()}
        if refs:
            ref = _trajectory_for(refs[i], model)
            try:
                row.update(metrics.tracking_errors(traj, ref, model, args.alignment).csv_row())
            except ValueError as exc:
                raise CliError(f"{path}: {exc}") from None
        rows.append(row)
    _out_text(args.out, metrics.csv_text(rows))
    return EXIT_OK


def cmd_cluster(args) -> int:
    doc = _load(args.embeddings, "embeddings")
    try:
        ids, vectors = doc["ids"], doc["vectors"]
        if len(ids) != len(vectors):
            raise ValueError(f"{len(ids)} ids but {len(vectors)} vectors")
        embs = [cepr.Embedding(str(i), np.asarray(v, dtype=float)) for i, v in zip(ids, vectors)]
        assign = cepr.cluster_motions(embs, args.k, args.seed)
    except KeyError as exc:
        raise CliError(f"{args.embeddings}: missing field {exc}") from None
    except ValueError as exc:
        raise CliError(f"{args.embeddings}: {exc}") from None
    _out_text(args.out, metrics.csv_text([{"id": i, "cluster": c} for i, c in assign]))
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retargetlab", description="Motion retargeting and curation tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fk", help="forward kinematics of a trajectory")
    p.add_argument("--model", required=True, help="model JSON or bundled fixture name")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fk)

    p = sub.add_parser("retarget", help="retarget a human motion onto a robot")
    p.add_argument("--model", required=True)
    p.add_argument("--mapping", required=True)
    p.add_argument("--motion", required=True)
    p.add_argument("--config", help='JSON with a "solver" object')
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics", help="per-frame CSV (default: <out>.diagnostics.csv)")
    p.add_argument("--cold-restart", action="store_true", help="start every frame from the initial guess")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_retarget)

    p = sub.add_parser("certify", help="search for a negative-curvature certificate")
    p.add_argument("--model", required=True)
    p.add_argument("--body", help="end-effector link (default: last link)")
    p.add_argument("--config", help='JSON with "weights", "error_map" and "search"')
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("filter", help="curate human motions and filter robot trajectories")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", help="model for robot items without their own")
    p.add_argument("--config", help='JSON with "curation", "filter", "masses", "feet", "up_axis"')
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("metrics", help="quality counts and tracking errors")
    p.add_argument("--model", required=True)
    p.add_argument("--trajectory", required=True, nargs="+")
    p.add_argument("--reference", nargs="+")
    p.add_argument("--alignment", choices=metrics.ALIGNMENTS, default="root")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("cluster", help="spherical k-means over motion embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Subcommands:
  optimize-poses  select the best-scoring pose set for a camera and space
  simulate        run the virtual-camera study and write report + figures
  serve           run the realtime guidance service for a selected set
  init            write preset camera and search-space files to start from

Every option can also be supplied through an environment variable named
POSEGUIDE_<OPTION> (dashes become underscores), e.g. POSEGUIDE_SEED=7.
Errors are reported as one JSON object on stderr; usage and input
errors exit with status 2, runtime failures with 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import PoseguideError
from .experiment import run_extremal_experiment, write_report_files
from .poseselect import PoseSearchSpace, PoseSet
from .presets import default_board, dms_space, lens_preset
from .server import GuidanceServer
from .session import SessionConfig, begin_session
from .simulate import NoiseModel, VirtualCamera

ENV_PREFIX = "POSEGUIDE_"


def _env_default(name: str, fallback):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), fallback)


def _fail(code: int, kind: str, detail: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "detail": detail}, sort_keys=True) + "\n")
    return code


def _load_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"{what} file not found: {path}")
    except json.JSONDecodeError as err:
        raise UsageError(f"{what} file is not valid JSON: {err}")


class UsageError(Exception):
    pass


def _load_camera(path) -> VirtualCamera:
    data = _load_json(path, "camera")
    try:
        return VirtualCamera.from_json_dict(data)
    except (KeyError, TypeError, ValueError) as err:
        raise UsageError(f"camera file malformed: {err}")


def _load_space(path) -> PoseSearchSpace:
    data = _load_json(path, "space")
    try:
        return PoseSearchSpace.from_json_dict(data)
    except (KeyError, TypeError, ValueError) as err:
        raise UsageError(f"space file malformed: {err}")


def _print_rows(report) -> None:
    print(f"{'set':<12}{'MRE':>10}{'score':>10}{'param_err':>12}")
    for row in report.rows:
        print(f"{row.label:<12}{row.mre:>10.4f}{row.score:>10.4f}{row.param_err:>12.4f}")


def cmd_optimize_poses(args) -> int:
    if args.k_sets < 1:
        raise UsageError("--k-sets must be >= 1")
    if args.n < 3:
        raise UsageError("--n must be >= 3")
    camera = _load_camera(args.camera)
    space = _load_space(args.space)
    noise = NoiseModel("gaussian", args.noise_sigma, args.seed) if args.noise_sigma > 0 \
        else NoiseModel("none", 0.0, args.seed)
    report = run_extremal_experiment(
        camera, space, n=args.n, k_sets=args.k_sets, noise=noise,
        alpha=args.alpha, beta=args.beta, seed=args.seed,
        pool_m=args.pool_m, workers=args.workers, visibility=args.visibility,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": 1,
        "pose_set": report.best_set.to_json_dict(),
        "score_report": report.best_report.to_json_dict(),
        "config": report.config,
    }
    out.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    from .report import save_pose_coverage_figure

    save_pose_coverage_figure(
        report.best_set, space.board, camera.truth, space.image,
        out.with_name(out.stem + "_coverage.png"),
        title="selected pose set",
    )
    _print_rows(report)
    print(f"selected set seed={report.best_set.seed} score={report.best_report.score:.4f}")
    print(f"wrote {out}")
    return 0


def cmd_simulate(args) -> int:
    if args.k_sets < 1:
        raise UsageError("--k-sets must be >= 1")
    camera = _load_camera(args.camera)
    space = _load_space(args.space)
    noise = NoiseModel("gaussian", args.noise_sigma, args.seed) if args.noise_sigma > 0 \
        else NoiseModel("none", 0.0, args.seed)
    report = run_extremal_experiment(
        camera, space, n=args.n, k_sets=args.k_sets, noise=noise,
        alpha=args.alpha, beta=args.beta, seed=args.seed,
        pool_m=args.pool_m, workers=args.workers, visibility=args.visibility,
    )
    paths = write_report_files(report, args.out)
    from .report import render_experiment_figures

    figures = render_experiment_figures(report, args.out)
    _print_rows(report)
    for p in [*paths.values(), *figures]:
        print(f"wrote {p}")
    return 0


def cmd_serve(args) -> int:
    camera = _load_camera(args.camera) if args.camera else None
    selected = _load_json(args.pose_set, "pose set")
    try:
        pose_set = PoseSet.from_json_dict(
            selected["pose_set"] if "pose_set" in selected else selected
        )
    except (KeyError, TypeError, ValueError) as err:
        raise UsageError(f"pose set file malformed: {err}")
    if args.camera:
        board = default_board()
        image = camera.image
        reference = camera.truth
    else:
        raise UsageError("--camera is required to project guidance targets")
    host, _, port = args.listen.rpartition(":")
    if not host or not port.isdigit():
        raise UsageError("--listen must look like HOST:PORT")
    config = SessionConfig(
        pose_set=pose_set,
        board=board,
        image=image,
        match_threshold=args.match_threshold,
        capture_mode=args.capture_mode,
        dwell_frames=args.dwell_frames,
        reference_intrinsics=reference,
    )
    try:
        begin_session(config)  # fail fast on unmatchable targets
    except ValueError as err:
        raise UsageError(f"{err}; re-run optimize-poses with --visibility outer4")
    server = GuidanceServer(
        config, (host, int(port)), data_dir=args.data_dir,
        on_disconnect=args.on_disconnect,
    )
    host, port = server.address[0], server.address[1]
    print(f"guidance service listening on {host}:{port}")
    print(f"data dir: {args.data_dir}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def cmd_init(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    camera = lens_preset(args.lens)
    space = dms_space(image=camera.image)
    camera_path = out / "camera.json"
    space_path = out / "space.json"
    camera_path.write_text(json.dumps(camera.to_json_dict(), sort_keys=True, indent=2) + "\n")
    space_path.write_text(json.dumps(space.to_json_dict(), sort_keys=True, indent=2) + "\n")
    print(f"wrote {camera_path}")
    print(f"wrote {space_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poseguide",
        description="Camera calibration with optimized board-pose sets and guided capture.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, default_visibility):
        p.add_argument("--camera", default=_env_default("camera", None),
                       help="camera JSON file (see 'poseguide init')")
        p.add_argument("--space", default=_env_default("space", None),
                       help="pose search space JSON file")
        p.add_argument("--n", type=int, default=int(_env_default("n", 20)),
                       help="poses per candidate set")
        p.add_argument("--k-sets", type=int, default=int(_env_default("k-sets", 200)),
                       help="number of candidate sets to score")
        p.add_argument("--pool-m", type=int, default=None,
                       help="pose pool size (default 10*n)")
        p.add_argument("--seed", type=int, default=int(_env_default("seed", 0)))
        p.add_argument("--noise-sigma", type=float,
                       default=float(_env_default("noise-sigma", 0.1)),
                       help="synthetic corner noise in pixels")
        p.add_argument("--alpha", type=float, default=float(_env_default("alpha", 1.0)))
        p.add_argument("--beta", type=float, default=float(_env_default("beta", 1.0)))
        p.add_argument("--workers", type=int, default=None,
                       help="processes for candidate scoring")
        p.add_argument("--visibility", choices=("any4", "outer4"),
                       default=_env_default("visibility", default_visibility),
                       help="pose admissibility: any 4 corners visible, or the "
                            "outermost 4 on screen (required for guidance targets)")

    p_opt = sub.add_parser("optimize-poses", help="select the best-scoring pose set")
    add_common(p_opt, default_visibility="outer4")
    p_opt.add_argument("--out", required=True, help="output JSON for the selected set")
    p_opt.set_defaults(func=cmd_optimize_poses)

    p_sim = sub.add_parser("simulate", help="run the virtual-camera simulation study")
    add_common(p_sim, default_visibility="any4")
    p_sim.add_argument("--out", required=True, help="output directory for report + figures")
    p_sim.set_defaults(func=cmd_simulate)

    p_srv = sub.add_parser("serve", help="serve a realtime guidance session")
    p_srv.add_argument("--pose-set", required=True,
                       help="selected pose set JSON (from optimize-poses)")
    p_srv.add_argument("--camera", default=_env_default("camera", None))
    p_srv.add_argument("--listen", default=_env_default("listen", "127.0.0.1:7060"))
    p_srv.add_argument("--data-dir", default=_env_default("data-dir", "poseguide-data"))
    env_threshold = _env_default("match-threshold", None)
    p_srv.add_argument("--match-threshold", type=float,
                       default=float(env_threshold) if env_threshold is not None else None)
    p_srv.add_argument("--capture-mode", choices=("auto", "manual"),
                       default=_env_default("capture-mode", "auto"))
    p_srv.add_argument("--dwell-frames", type=int,
                       default=int(_env_default("dwell-frames", 5)))
    p_srv.add_argument("--on-disconnect", choices=("abort", "suspend"),
                       default=_env_default("on-disconnect", "abort"))
    p_srv.set_defaults(func=cmd_serve)

    p_init = sub.add_parser("init", help="write preset camera and space files")
    p_init.add_argument("--lens", choices=("len1", "len2"), default="len1")
    p_init.add_argument("--out", default=".")
    p_init.set_defaults(func=cmd_init)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        # argparse exits 2 on usage errors already; keep that contract
        return int(err.code or 0)
    try:
        if args.command in ("optimize-poses", "simulate") and not (args.camera and args.space):
            raise UsageError("--camera and --space are required")
        return args.func(args)
    except UsageError as err:
        return _fail(2, "usage", str(err))
    except PoseguideError as err:
        return _fail(1, type(err).__name__, str(err))


if __name__ == "__main__":
    sys.exit(main())

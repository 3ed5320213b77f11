"""Command-line pipeline: shred -> match -> train/score -> assemble -> render.

Each stage reads and writes plain artifacts (JSON, PNG) so any step can be
re-run from disk alone. Options resolve as flags > config file > defaults,
and every run echoes its resolved configuration as one JSON line before
doing work. Failures exit nonzero with a JSON error payload on stderr.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import cv2
import numpy as np

from .compatibility import (
    ImbalanceError,
    ModelFormatError,
    NoSeamError,
    OracleScorer,
    boost_train_features,
    candidate_is_correct,
    features_for_candidates,
    load_model,
    rebalance_indices,
    save_model,
    score_candidates_with_model,
)
from .composition import (
    AssemblyGraph,
    ClosureTolerance,
    ResultFormatError,
    compose,
    load_result,
    save_result,
)
from .evaluation import format_report_table, score_result
from .geometry import render_placement
from .pairwise import (
    CandidateFormatError,
    PairwiseConfig,
    extract_candidates,
    read_candidates,
    write_candidates,
)
from .shredder import (
    BundleFormatError,
    ShredParameterError,
    make_test_image,
    read_bundle,
    shred_to_piece_count,
    shred_voronoi,
    write_bundle,
)


class UsageError(ValueError):
    """Bad or missing option after config resolution."""


PIPELINE_ERRORS = (
    UsageError, ShredParameterError, BundleFormatError, CandidateFormatError,
    ModelFormatError, ImbalanceError, NoSeamError, ResultFormatError,
    OSError, json.JSONDecodeError,
)

# Per-command defaults. argparse is configured with SUPPRESS defaults so that
# vars(args) holds only what the user typed; resolution is then a plain merge
# of defaults < config file < explicit flags.
DEFAULTS = {
    "shred": {"image": None, "image_seed": 0, "size": 420, "pieces": 9,
              "style": "polyline", "amplitude": 6.0, "seed": 0, "out": None},
    "match": {"bundle": None, "out": None, "workers": os.cpu_count() or 1,
              "k_max": 10, "min_score": 20},
    "train": {"bundles": [], "synth": 0, "pieces": 9, "base_seed": 1000,
              "size": 420, "style": "polyline", "rounds": 5, "seed": 0,
              "workers": os.cpu_count() or 1, "k_max": 10, "min_score": 20,
              "out": None},
    "score": {"bundle": None, "candidates": None, "scorer": "oracle",
              "noise": 0.0, "model": None, "threshold": 0.0, "seed": 0,
              "out": None},
    "assemble": {"bundle": None, "candidates": None, "solver": "hlm",
                 "theta_m": 500, "max_steps": None, "seed": 0, "out": None},
    "evaluate": {"bundle": None, "results": [], "out": None},
    "render": {"bundle": None, "result": None, "outlines": False,
               "scale": 1.0, "out": None},
}


def build_parser() -> argparse.ArgumentParser:
    sup = argparse.SUPPRESS
    parser = argparse.ArgumentParser(
        prog="shredkit",
        description="Shred pictures into fragment puzzles and solve them.")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help_text):
        p = sub.add_parser(name, help=help_text, argument_default=sup)
        p.add_argument("--config", default=None,
                       help="JSON file of option overrides (flags win)")
        return p

    p = cmd("shred", "cut a picture into a posed fragment bundle")
    p.add_argument("--image", help="input picture (omit for a procedural one)")
    p.add_argument("--image-seed", type=int, help="procedural picture seed")
    p.add_argument("--size", type=int, help="procedural picture side in px")
    p.add_argument("--pieces", type=int)
    p.add_argument("--style", choices=("polyline", "voronoi"))
    p.add_argument("--amplitude", type=float, help="cut perturbation in px")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output bundle directory")

    p = cmd("match", "extract pairwise alignment candidates from a bundle")
    p.add_argument("--bundle")
    p.add_argument("--workers", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--min-score", type=int)
    p.add_argument("--out", help="output candidate file (JSON lines)")

    p = cmd("train", "train the boosted seam detector on labeled bundles")
    p.add_argument("--bundles", nargs="+", help="bundle directories")
    p.add_argument("--synth", type=int,
                   help="also generate this many procedural training bundles")
    p.add_argument("--pieces", type=int)
    p.add_argument("--base-seed", type=int, help="first procedural seed")
    p.add_argument("--size", type=int)
    p.add_argument("--style", choices=("polyline", "voronoi"))
    p.add_argument("--rounds", type=int, help="boosting rounds (learners)")
    p.add_argument("--seed", type=int, help="rebalancing seed")
    p.add_argument("--workers", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--min-score", type=int)
    p.add_argument("--out", help="output model file")

    p = cmd("score", "assign compatibility scores to candidates")
    p.add_argument("--bundle")
    p.add_argument("--candidates")
    p.add_argument("--scorer", choices=("oracle", "ensemble"))
    p.add_argument("--noise", type=float, help="oracle label-flip probability")
    p.add_argument("--model", help="trained model file (ensemble scorer)")
    p.add_argument("--threshold", type=float,
                   help="drop candidates scoring below this")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output scored-candidate file")

    p = cmd("assemble", "solve global placement from scored candidates")
    p.add_argument("--bundle")
    p.add_argument("--candidates")
    p.add_argument("--solver", choices=("bf", "glc", "hlm", "all"))
    p.add_argument("--theta-m", type=int, help="per-level merge cap")
    p.add_argument("--max-steps", type=int, help="walk budget (glc)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="result file, or directory with --solver all")

    p = cmd("evaluate", "score assembly results against groundtruth")
    p.add_argument("--bundle")
    p.add_argument("--results", nargs="+", help="assembly result files")
    p.add_argument("--out", help="optional JSON report file")

    p = cmd("render", "composite a bundle at solved (or groundtruth) poses")
    p.add_argument("--bundle")
    p.add_argument("--result", help="assembly result (omit for groundtruth)")
    p.add_argument("--outlines", action="store_true", default=sup,
                   help="draw fragment boundaries")
    p.add_argument("--scale", type=float)
    p.add_argument("--out", help="output PNG")

    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the optional config file, and explicit flags."""
    command = args.command
    given = {k: v for k, v in vars(args).items()
             if k not in ("command", "config")}
    from_file = {}
    if args.config is not None:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
        for key in doc:
            if key.replace("-", "_") not in DEFAULTS[command]:
                raise UsageError(f"{args.config}: unknown option {key!r} "
                                 f"for command {command!r}")
        from_file = {k.replace("-", "_"): v for k, v in doc.items()}
    return {**DEFAULTS[command], **from_file, **given}


def _require(cfg: dict, *keys):
    for key in keys:
        if not cfg[key]:
            flag = "--" + key.replace("_", "-")
            raise UsageError(f"missing required option {flag}")


def _load_image(cfg: dict) -> np.ndarray:
    if cfg["image"] is None:
        return make_test_image(cfg["image_seed"], size=(cfg["size"], cfg["size"]))
    raw = cv2.imread(str(cfg["image"]), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise UsageError(f"cannot read image {cfg['image']}")
    if raw.ndim == 2:
        raw = cv2.cvtColor(raw, cv2.COLOR_GRAY2BGR)
    code = cv2.COLOR_BGRA2RGBA if raw.shape[2] == 4 else cv2.COLOR_BGR2RGBA
    return cv2.cvtColor(raw, code)


def _shred_one(image, cfg: dict, seed: int):
    if cfg["style"] == "voronoi":
        return shred_voronoi(image, cfg["pieces"], seed,
                             perturbation_amplitude=cfg["amplitude"])
    return shred_to_piece_count(image, cfg["pieces"], seed)


def cmd_shred(cfg: dict) -> int:
    _require(cfg, "out")
    bundle = _shred_one(_load_image(cfg), cfg, cfg["seed"])
    write_bundle(bundle, cfg["out"])
    print(json.dumps({"out": str(cfg["out"]), "pieces": len(bundle),
                      "adjacent_pairs": len(bundle.adjacency())},
                     sort_keys=True))
    return 0


def _pairwise_config(cfg: dict) -> PairwiseConfig:
    return PairwiseConfig(k_max=cfg["k_max"], min_raw_score=cfg["min_score"],
                          workers=cfg["workers"])


def cmd_match(cfg: dict) -> int:
    _require(cfg, "bundle", "out")
    bundle = read_bundle(cfg["bundle"])
    t0 = time.perf_counter()
    cands = extract_candidates(bundle, _pairwise_config(cfg))
    write_candidates(cands, cfg["out"])
    print(json.dumps({"out": str(cfg["out"]), "candidates": len(cands),
                      "elapsed_s": round(time.perf_counter() - t0, 3)},
                     sort_keys=True))
    return 0


def cmd_train(cfg: dict) -> int:
    _require(cfg, "out")
    bundles = [read_bundle(p) for p in cfg["bundles"]]
    train_cfg = dict(cfg, amplitude=6.0)
    for k in range(cfg["synth"]):
        seed = cfg["base_seed"] + k
        img = make_test_image(seed, size=(cfg["size"], cfg["size"]))
        bundles.append(_shred_one(img, train_cfg, seed))
    if not bundles:
        raise UsageError("need --bundles and/or --synth")
    pcfg = _pairwise_config(cfg)
    feats, labels = [], []
    for bundle in bundles:
        cands = extract_candidates(bundle, pcfg)
        feats.append(features_for_candidates(bundle, cands))
        labels.extend(1 if candidate_is_correct(bundle, c) else 0
                      for c in cands)
    x = np.vstack([f for f in feats if len(f)])
    y = np.asarray(labels)
    idx = rebalance_indices(y, cfg["seed"])
    model = boost_train_features(x[idx], y[idx], n_learners=cfg["rounds"])
    save_model(model, cfg["out"])
    print(json.dumps({"out": str(cfg["out"]), "bundles": len(bundles),
                      "samples": int(len(y)), "positives": int(y.sum()),
                      "train_rows": int(len(idx)), "rounds": cfg["rounds"]},
                     sort_keys=True))
    return 0


def cmd_score(cfg: dict) -> int:
    _require(cfg, "bundle", "candidates", "out")
    bundle = read_bundle(cfg["bundle"])
    cands = read_candidates(cfg["candidates"])
    if cfg["scorer"] == "oracle":
        scored = OracleScorer(noise=cfg["noise"], seed=cfg["seed"]).score(
            bundle, cands)
    else:
        _require(cfg, "model")
        scored = score_candidates_with_model(bundle, cands,
                                             load_model(cfg["model"]))
    kept = [c for c in scored if c.gamma >= cfg["threshold"]]
    write_candidates(kept, cfg["out"])
    print(json.dumps({"out": str(cfg["out"]), "scored": len(scored),
                      "kept": len(kept)}, sort_keys=True))
    return 0


def cmd_assemble(cfg: dict) -> int:
    _require(cfg, "bundle", "candidates", "out")
    bundle = read_bundle(cfg["bundle"])
    cands = read_candidates(cfg["candidates"])
    graph = AssemblyGraph(bundle.fragments, cands)
    tol = ClosureTolerance.for_bundle(bundle)
    solvers = ("bf", "glc", "hlm") if cfg["solver"] == "all" else (cfg["solver"],)
    outputs = {}
    for name in solvers:
        res = compose(graph, name, tol, seed=cfg["seed"],
                      theta_m=cfg["theta_m"], max_steps=cfg["max_steps"])
        if len(solvers) == 1:
            path = Path(cfg["out"])
        else:
            path = Path(cfg["out"]) / f"result_{name}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
        save_result(res, path)
        outputs[name] = {"out": str(path), "selected": len(res.selected),
                         "placed": len(res.poses)}
    print(json.dumps(outputs, sort_keys=True))
    return 0


def cmd_evaluate(cfg: dict) -> int:
    _require(cfg, "bundle", "results")
    bundle = read_bundle(cfg["bundle"])
    rows, doc = [], {}
    for path in cfg["results"]:
        report = score_result(bundle, load_result(path))
        rows.append((Path(path).stem, report))
        doc[str(path)] = report.to_json_dict()
    print(format_report_table(rows))
    if cfg["out"]:
        Path(cfg["out"]).write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_render(cfg: dict) -> int:
    _require(cfg, "bundle", "out")
    bundle = read_bundle(cfg["bundle"])
    poses = load_result(cfg["result"]).poses if cfg["result"] else bundle.poses
    frags_poses = [(bundle.fragment(v), pose) for v, pose in poses.items()]
    if not frags_poses:
        raise UsageError("result places no fragments")
    canvas = render_placement(frags_poses, scale=cfg["scale"],
                              outlines=cfg["outlines"])
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(out), cv2.cvtColor(canvas, cv2.COLOR_RGBA2BGRA)):
        raise OSError(f"could not write {out}")
    print(json.dumps({"out": str(out), "size": list(canvas.shape[1::-1]),
                      "fragments": len(frags_poses)}, sort_keys=True))
    return 0


COMMANDS = {
    "shred": cmd_shred,
    "match": cmd_match,
    "train": cmd_train,
    "score": cmd_score,
    "assemble": cmd_assemble,
    "evaluate": cmd_evaluate,
    "render": cmd_render,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        print(json.dumps({"command": args.command, "config": cfg},
                         sort_keys=True))
        return COMMANDS[args.command](cfg)
    except PIPELINE_ERRORS as e:
        payload = {"error": type(e).__name__, "message": str(e)}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 2 if isinstance(e, UsageError) else 1


if __name__ == "__main__":
    sys.exit(main())

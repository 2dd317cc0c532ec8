"""Command-line entry point.

Exit codes: 0 success, 1 bad input or parameters (including usage errors),
2 internal failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields

import numpy as np

from pathlung.config import FIELD_HELP, FIELD_TYPES, RunConfig, parse_value, read_config_file
from pathlung.errors import InputError, StageError

log = logging.getLogger("pathlung")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2


class UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- arguments


def _flag(name):
    return "--" + name.replace("_", "-")


def _typed(name):
    def convert(text):
        try:
            return parse_value(name, text)
        except InputError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    convert.__name__ = FIELD_TYPES[name][0].__name__
    return convert


def _add_config_flags(parser, names):
    """One flag per config field; defaults stay None so the file can fill gaps."""
    defaults = RunConfig()
    group = parser.add_argument_group("parameters (flag > --config file > default)")
    for name in names:
        kind, optional = FIELD_TYPES[name]
        default = getattr(defaults, name)
        shown = "auto" if default is None else default
        text = f"{FIELD_HELP[name]} (default: {shown})"
        if kind is bool:
            group.add_argument(_flag(name), dest=name, action=argparse.BooleanOptionalAction,
                               default=None, help=text)
        else:
            group.add_argument(_flag(name), dest=name, default=None, metavar=kind.__name__.upper(),
                               type=_typed(name), help=text)


def _add_volume_input(parser, required=True):
    parser.add_argument("--input", required=required, help="CT volume: NIfTI-1 (.nii/.nii.gz) or raw")
    parser.add_argument("--raw-dims", type=int, nargs=3, metavar=("NX", "NY", "NZ"),
                        help="dims of a raw input volume (required for raw input)")
    parser.add_argument("--raw-spacing", type=float, nargs=3, default=(1.0, 1.0, 1.0),
                        metavar=("SX", "SY", "SZ"), help="voxel spacing of a raw input in mm (default: 1 1 1)")
    parser.add_argument("--raw-format", default="int16",
                        help="raw scalar type: int16, uint16, int32, float32, float64 (default: int16)")


ALL_FIELDS = [f.name for f in fields(RunConfig)]
STAGE_ONE = ["threshold_center", "threshold_halfwidth", "seed_rng", "seed_candidates",
             "fc_mean", "fc_sigma", "fc_theta", "bone_hu"]
SLIC_FIELDS = ["slic_k", "sv_volume", "slic_compactness", "slic_max_iters", "slic_tol"]
TEXTURE_FIELDS = ["glcm_bins", "glcm_directions", "glcm_offset", "glrlm_directions", "glrlm_levels", "roi_window"]
FOREST_FIELDS = ["rf_trees", "rf_bag_fraction", "rf_bootstrap", "rf_max_features", "rf_seed"]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pathlung", description="Pathological lung segmentation from CT volumes.")
    parser.add_argument("--log-level", default="INFO", help="logging level for stderr (default: INFO)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(p, names):
        p.add_argument("--config", help="flat 'key = value' file with parameter overrides")
        _add_config_flags(p, names + ["threads"])
        # also accepted after the subcommand; the global value applies otherwise
        p.add_argument("--log-level", default=argparse.SUPPRESS, help="logging level for stderr (default: INFO)")

    p = sub.add_parser("segment", help="segment one volume")
    _add_volume_input(p)
    p.add_argument("--model", required=True, help="trained forest model (JSON)")
    p.add_argument("--output", required=True, help="output mask, NIfTI-1")
    p.add_argument("--report", help="write the run report (JSON) here")
    p.add_argument("--initial-output", help="also write the initial connectivity mask here")
    common(p, STAGE_ONE + SLIC_FIELDS + TEXTURE_FIELDS + ["rf_threshold", "per_voxel"])

    p = sub.add_parser("train", help="train a forest from a feature CSV or from default phantoms")
    p.add_argument("--output", required=True, help="model file to write (JSON)")
    p.add_argument("--features", help="labelled feature CSV as written by 'features'")
    p.add_argument("--phantom-seeds", type=_seed_range, default=None,
                   help="train on ROIs sampled from these default phantoms, e.g. 0-9 (default: 0-9)")
    p.add_argument("--oob", action="store_true", help="log out-of-bag accuracy")
    common(p, STAGE_ONE + TEXTURE_FIELDS + FOREST_FIELDS)

    p = sub.add_parser("features", help="export descriptors at keypoints, or labelled phantom ROIs")
    _add_volume_input(p, required=False)
    p.add_argument("--keypoints", help="CSV of x,y,z keypoints (header optional) for --input")
    p.add_argument("--truth", help="ground-truth mask (NIfTI) to label the keypoints")
    p.add_argument("--phantom-seeds", type=_seed_range, help="sample labelled ROIs from these default phantoms")
    p.add_argument("--output", required=True, help="feature CSV to write")
    common(p, STAGE_ONE + TEXTURE_FIELDS + ["rf_seed"])

    ph = sub.add_parser("phantom", help="synthetic thoracic phantoms")
    phs = ph.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    phs.required = True
    p = phs.add_parser("generate", help="rasterize a phantom")
    p.add_argument("--spec", help="phantom spec (JSON); omit to use the seeded default spec")
    p.add_argument("--seed", type=int, default=1000, help="seed for the default spec (default: 1000)")
    p.add_argument("--blobs", type=int, default=None, help="lesion count for the default spec (default: 1-3 random)")
    p.add_argument("--output", required=True, help="volume to write (NIfTI-1, int16)")
    p.add_argument("--truth", help="ground-truth mask to write (NIfTI-1)")
    p.add_argument("--write-spec", help="save the resolved spec (JSON) here")
    p.add_argument("--log-level", default=argparse.SUPPRESS, help="logging level for stderr (default: INFO)")

    ev = sub.add_parser("eval", help="batch evaluation")
    evs = ev.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    evs.required = True
    p = evs.add_parser("run", help="run the pipeline on cases and report Dice scores")
    p.add_argument("--model", required=True, help="trained forest model (JSON)")
    p.add_argument("--seeds", type=_seed_range, default=None,
                   help="default phantom seeds to evaluate, e.g. 1000-1019 (default)")
    p.add_argument("--case", action="append", default=[], metavar="VOLUME:TRUTH",
                   help="NIfTI volume and ground-truth pair; repeatable, replaces --seeds")
    p.add_argument("--report", help="write the evaluation report (JSON) here")
    common(p, ALL_FIELDS[:-1])

    p = sub.add_parser("slic-export", help="write the supervoxel labels of a volume's search space")
    _add_volume_input(p)
    p.add_argument("--region", help="region mask (NIfTI); default is the computed search space")
    p.add_argument("--output", required=True, help="label volume to write (NIfTI-1, 0 = outside)")
    common(p, STAGE_ONE + SLIC_FIELDS)
    return parser


def _seed_range(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty seed list {text!r}")
    return out


# ------------------------------------------------------------------ helpers


def resolve_config(args) -> RunConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for name in ALL_FIELDS:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
    return RunConfig(**values)


def _echo(config: RunConfig):
    log.info("config %s", json.dumps(config.as_dict(), sort_keys=True))


def _load_volume(args):
    from pathlung.io import is_nifti_path, load_nifti, load_raw

    if is_nifti_path(args.input):
        return load_nifti(args.input)
    if args.raw_dims is None:
        raise InputError(f"--raw-dims is required for raw input {args.input}")
    return load_raw(args.input, tuple(args.raw_dims), tuple(args.raw_spacing), args.raw_format)


def _load_model(path):
    from pathlung.forest import load_model

    return load_model(path)


def _read_keypoints(path):
    with open(path, encoding="utf-8") as fh:
        rows = [line.strip() for line in fh if line.strip()]
    if rows and not rows[0].replace(",", "").replace("-", "").replace(" ", "").isdigit():
        rows = rows[1:]
    try:
        pts = np.array([[int(v) for v in r.split(",")[:3]] for r in rows], dtype=np.int64)
    except ValueError as exc:
        raise InputError(f"{path}: keypoints must be integer x,y,z rows ({exc})") from None
    return pts.reshape(-1, 3)


# ----------------------------------------------------------------- commands


def cmd_segment(args, config):
    from pathlung.io import save_mask_nifti
    from pathlung.pipeline import run_pipeline

    vol = _load_volume(args)
    model = _load_model(args.model)
    result = run_pipeline(vol, config, model)
    for stage, ms in result.timings_ms.items():
        flag = " (skipped)" if stage in result.skipped else ""
        log.info("stage %-12s %9.1f ms%s", stage, ms, flag)
    save_mask_nifti(result.final_mask, args.output)
    if args.initial_output:
        save_mask_nifti(result.initial_mask, args.initial_output)
    if args.report:
        doc = result.report()
        doc["input"] = args.input
        doc["model"] = args.model
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    log.info("final mask %d voxels (initial %d, pathology %d)", result.final_mask.count(),
             result.initial_mask.count(), result.pathology_mask.count())
    return EXIT_OK


def cmd_train(args, config):
    from pathlung.forest import oob_accuracy, save_model, train
    from pathlung.texture import FEATURE_NAMES, read_feature_csv
    from pathlung.training import TRAIN_BLOBS, TRAIN_SEEDS, phantom_cases, sample_rois

    if args.features and args.phantom_seeds:
        raise InputError("use either --features or --phantom-seeds, not both")
    if args.features:
        _, X, y = read_feature_csv(args.features)
        if y is None:
            raise InputError(f"{args.features} has no label column")
    else:
        seeds = args.phantom_seeds or list(TRAIN_SEEDS)
        data = sample_rois(phantom_cases(seeds, TRAIN_BLOBS), config=config, rng_seed=config.rf_seed)
        X, y = data.X, data.y
    log.info("training on %d rows (%d pathological)", len(y), int(np.sum(y == 1)))
    model = train(X, y, n_trees=config.rf_trees, bag_fraction=config.rf_bag_fraction, rng_seed=config.rf_seed,
                  bootstrap=config.rf_bootstrap, max_features=config.rf_max_features, feature_names=FEATURE_NAMES)
    if args.oob:
        score = oob_accuracy(model, X, y)
        log.info("out-of-bag accuracy %.4f over %d rows", score.accuracy, score.n_scored)
    save_model(model, args.output)
    return EXIT_OK


def cmd_features(args, config):
    from pathlung.io import load_mask_nifti
    from pathlung.texture import extract_descriptors, write_feature_csv
    from pathlung.training import TRAIN_BLOBS, phantom_cases, sample_rois

    if args.phantom_seeds:
        if args.input:
            raise InputError("use either --input or --phantom-seeds, not both")
        data = sample_rois(phantom_cases(args.phantom_seeds, TRAIN_BLOBS), config=config, rng_seed=config.rf_seed)
        write_feature_csv(args.output, data.keypoints, data.X, data.y)
        log.info("wrote %d labelled ROIs", len(data.y))
        return EXIT_OK
    if not args.input or not args.keypoints:
        raise InputError("--input and --keypoints are required unless --phantom-seeds is given")
    vol = _load_volume(args)
    pts = _read_keypoints(args.keypoints)
    lo, hi = pts.min(axis=0, initial=0), pts.max(axis=0, initial=0)
    if len(pts) and (lo.min() < 0 or np.any(hi >= np.array(vol.dims))):
        raise InputError(f"keypoints fall outside the volume {vol.dims}")
    X = extract_descriptors(vol, pts, config.texture())
    labels = None
    if args.truth:
        truth = load_mask_nifti(args.truth)
        if truth.dims != vol.dims:
            raise InputError(f"truth dims {truth.dims} do not match volume {vol.dims}")
        labels = truth.bool()[tuple(pts.T)].astype(np.int64)
    write_feature_csv(args.output, pts, X, labels)
    log.info("wrote %d descriptors", len(pts))
    return EXIT_OK


def cmd_phantom(args, config):
    from pathlung.evaluation import default_phantom_spec, generate_phantom, load_phantom_spec, save_phantom_spec
    from pathlung.io import DT_INT16, save_mask_nifti, save_nifti

    spec = load_phantom_spec(args.spec) if args.spec else default_phantom_spec(args.seed, args.blobs)
    vol, truth = generate_phantom(spec)
    save_nifti(vol, args.output, datatype=DT_INT16)
    if args.truth:
        save_mask_nifti(truth, args.truth)
    if args.write_spec:
        save_phantom_spec(spec, args.write_spec)
    log.info("phantom %s: %d lesion(s), %d truth voxels", vol.dims, len(spec.blobs), truth.count())
    return EXIT_OK


def cmd_eval(args, config):
    from pathlung.evaluation import batch_evaluate, default_phantom_spec, generate_phantom
    from pathlung.io import load_mask_nifti, load_nifti

    model = _load_model(args.model)
    if args.case:
        cases, names = [], []
        for item in args.case:
            if ":" not in item:
                raise InputError(f"--case expects VOLUME:TRUTH, got {item!r}")
            vpath, tpath = item.split(":", 1)
            cases.append((load_nifti(vpath), load_mask_nifti(tpath)))
            names.append(vpath)
    else:
        seeds = args.seeds or list(range(1000, 1020))
        cases = [generate_phantom(default_phantom_spec(s)) for s in seeds]
        names = [f"phantom{s}" for s in seeds]
    report = batch_evaluate(cases, config, model, names)
    print(report.to_text())
    if args.report:
        doc = report.to_dict()
        doc["parameters"] = config.as_dict()
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    return EXIT_OK


def cmd_slic_export(args, config):
    from pathlung.io import load_mask_nifti, save_labels_nifti
    from pathlung.pipeline import build_search_space, run_stage_one, supervoxel_count
    from pathlung.slic import run_slic

    vol = _load_volume(args)
    if args.region:
        region = load_mask_nifti(args.region)
        if region.dims != vol.dims:
            raise InputError(f"region dims {region.dims} do not match volume {vol.dims}")
    else:
        _, fc = run_stage_one(vol, config)
        region = build_search_space(vol, fc, config.bone_hu).mask
    if region.count() == 0:
        raise InputError("region is empty; nothing to cluster")
    k = supervoxel_count(region.count(), config)
    svmap = run_slic(vol, region, k, config.slic_compactness, config.slic_max_iters, config.slic_tol)
    save_labels_nifti(svmap.label_volume(), args.output, vol.spacing)
    log.info("%d supervoxels (requested %d) after %d iterations", svmap.k_actual, k, svmap.n_iterations)
    return EXIT_OK


COMMANDS = {
    "segment": cmd_segment,
    "train": cmd_train,
    "features": cmd_features,
    "phantom": cmd_phantom,
    "eval": cmd_eval,
    "slic-export": cmd_slic_export,
}


def _leaf_parser(parser, args):
    # walk command/action down the subparser tree
    for dest in ("command", "action"):
        name = getattr(args, dest, None)
        choices = next((a.choices for a in parser._actions
                        if isinstance(a, argparse._SubParsersAction)), None)
        if name is None or not choices or name not in choices:
            break
        parser = choices[name]
    return parser


def parse_and_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra:
            # let the subcommand report it so its own usage is printed
            _leaf_parser(parser, args).error("unrecognized arguments: " + " ".join(extra))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:  # bad value in a typed flag
        print(f"pathlung: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT

    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        config = resolve_config(args)
        _echo(config)
        return COMMANDS[args.command](args, config)
    except StageError as exc:
        code = EXIT_INPUT if isinstance(exc.cause, (InputError, OSError)) else EXIT_INTERNAL
        log.error("%s", exc)
        return code
    except (InputError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except Exception as exc:  # anything else is a bug
        log.exception("internal error: %s", exc)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()

"""Command line interface: fit, classify, simulate, evaluate.

Reports are versioned, machine-parseable text: a header line, then bracketed
sections of space-separated key/value lines. All file outputs are written
atomically; a failing command exits nonzero without leaving partial outputs.

Exit codes: 0 success, 2 invalid input (bad options, labels, dimensions),
3 malformed file contents, 4 numerical degeneracy, 5 fit/selection failure,
1 anything else.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .aecm import FitConfig
from .dataio import (
    DataSet3D,
    generate,
    mask_labels,
    read_idx_images,
    read_t3,
    sim_spec,
    write_heatmap_pgm,
    write_t3,
    _atomic_write_text,
)
from .errors import InputError, MvbfaError
from .metrics import ari, confusion, mat_one_norm, match_components, mcr
from .model import map_classify, responsibilities
from .modelfile import read_model, write_model
from .selection import GridSpec, grid_search, selection_table

_REPORT_HEAD = "mvbfa-report 1"


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MvbfaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvbfa",
        description="Cluster or classify matrix-valued observations with "
                    "mixtures of bilinear factor analyzers.",
    )
    parser.add_argument("--version", action="version", version=f"mvbfa {__version__}")
    sub = parser.add_subparsers(required=True, metavar="command")

    fit = sub.add_parser("fit", help="unsupervised fit with BIC model selection")
    _add_data_options(fit)
    _add_fit_options(fit)
    fit.set_defaults(func=_cmd_fit, supervision=None, command="fit")

    cls = sub.add_parser("classify", help="semi-supervised fit using partial labels")
    _add_data_options(cls)
    _add_fit_options(cls)
    cls.add_argument("--supervision", type=float, default=None,
                     help="keep this fraction of the labels, mask the rest "
                          "(data labels are then treated as ground truth)")
    cls.set_defaults(func=_cmd_classify, command="classify")

    sim = sub.add_parser("simulate", help="write synthetic replicate datasets")
    sim.add_argument("--preset", required=True, choices=("sim1", "sim2"))
    sim.add_argument("--N", type=int, required=True, help="observations per replicate")
    sim.add_argument("--reps", type=int, default=1)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=_cmd_simulate, command="simulate")

    ev = sub.add_parser("evaluate", help="score fitted models or label files")
    ev.add_argument("--truth", help="ground-truth model file")
    ev.add_argument("--model", nargs="+", help="fitted model file(s)")
    ev.add_argument("--data", help="dataset for partition comparison")
    ev.add_argument("--labels-true", help="text file of true labels")
    ev.add_argument("--labels-pred", help="text file of predicted labels")
    ev.set_defaults(func=_cmd_evaluate, command="evaluate")
    return parser


def _add_data_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset in the text format")
    p.add_argument("--idx-images", help="IDX image file")
    p.add_argument("--idx-labels", help="IDX label file")
    p.add_argument("--keep-digits", help="comma list of IDX classes to keep")
    p.add_argument("--no-jitter", action="store_true",
                   help="skip the Uniform(0,1) pixel jitter on IDX input")
    p.add_argument("--no-lift", action="store_true",
                   help="skip the +50 shift of originally nonzero IDX pixels")


def _add_fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--G", default="1:3", help="component count or range a:b")
    p.add_argument("--q", default="0:2", help="left factor count or range a:b")
    p.add_argument("--r", default="0:2", help="right factor count or range a:b")
    p.add_argument("--starts", type=int, default=10, help="random starts")
    p.add_argument("--burn", type=int, default=10, help="burn-in cycles per start")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-expand", action="store_true",
                   help="never extend factor ranges past their stated maxima")
    p.add_argument("--out", help="directory for model/report artifacts")
    p.add_argument("--heatmaps", action="store_true",
                   help="write each component location as a PGM heatmap")


def _parse_range(text: str, name: str, low: int) -> tuple[int, ...]:
    try:
        if ":" in text:
            a, b = (int(v) for v in text.split(":", 1))
        else:
            a = b = int(text)
    except ValueError as exc:
        raise InputError(f"--{name} must be an integer or a:b range, got {text!r}") from exc
    if a > b:
        raise InputError(f"--{name}: empty range {text!r}")
    if a < low:
        raise InputError(f"--{name} must be >= {low}")
    return tuple(range(a, b + 1))


def _load_data(args) -> DataSet3D:
    if args.data and args.idx_images:
        raise InputError("give either --data or --idx-images, not both")
    if args.data:
        return read_t3(args.data)
    if args.idx_images:
        if not args.idx_labels or not args.keep_digits:
            raise InputError("IDX input needs --idx-images, --idx-labels and --keep-digits")
        try:
            keep = [int(v) for v in args.keep_digits.split(",")]
        except ValueError as exc:
            raise InputError(f"--keep-digits must be a comma list of integers") from exc
        return read_idx_images(args.idx_images, args.idx_labels, keep,
                               jitter=not args.no_jitter,
                               lift_nonzero=not args.no_lift,
                               seed=args.seed)
    raise InputError("no input: give --data or --idx-images")


def _run_selection(data: DataSet3D, args):
    grid = GridSpec(
        g_values=_parse_range(args.G, "G", 1),
        q_values=_parse_range(args.q, "q", 0),
        r_values=_parse_range(args.r, "r", 0),
        expand=not args.no_expand,
    )
    config = FitConfig(
        G=grid.g_values[0], q=grid.q_values[0], r=grid.r_values[0],
        n_starts=args.starts, burn_iters=args.burn,
        max_iters=args.max_iters, seed=args.seed,
    )
    return grid_search(data, grid, config)


def _report_lines_config(args, data: DataSet3D, extra=()) -> list[str]:
    lines = [_REPORT_HEAD, "[config]", f"command {args.command}"]
    if args.data:
        lines.append(f"data {args.data}")
    if getattr(args, "idx_images", None):
        lines.append(f"idx_images {args.idx_images}")
        lines.append(f"idx_labels {args.idx_labels}")
        lines.append(f"keep_digits {args.keep_digits}")
    lines.append(f"observations {data.size}")
    lines.append(f"shape {data.shape[0]} {data.shape[1]}")
    if hasattr(args, "G"):
        lines.append(f"grid G={args.G} q={args.q} r={args.r} expand="
                     + ("false" if args.no_expand else "true"))
        lines.append(f"starts {args.starts}")
        lines.append(f"burn {args.burn}")
        lines.append(f"max_iters {args.max_iters}")
        lines.append(f"seed {args.seed}")
    lines.extend(extra)
    return lines


def _selection_sections(result) -> list[str]:
    best = result.best
    lines = ["[selection]"]
    lines.extend(selection_table(result).rstrip("\n").split("\n"))
    lines.append("[chosen]")
    lines.append(f"G {best.G}")
    lines.append(f"q {best.q}")
    lines.append(f"r {best.r}")
    lines.append(f"loglik {best.log_lik!r}")
    lines.append(f"rho {best.rho}")
    lines.append(f"bic {best.bic!r}")
    lines.append(f"converged {'true' if best.converged else 'false'}")
    lines.append(f"iterations {best.fit.iterations}")
    lines.append(f"start_failures {len(best.fit.start_failures)}")
    lines.append("[mixing]")
    lines.append("weights " + " ".join(repr(float(w)) for w in best.fit.params.weights))
    return lines


def _metrics_section(truth_labels, pred_labels) -> list[str]:
    lines = ["[metrics]"]
    if truth_labels is None or len(truth_labels) == 0:
        return lines
    lines.append(f"ari {ari(truth_labels, pred_labels)!r}")
    lines.append(f"mcr {mcr(truth_labels, pred_labels)!r}")
    table, t_vals, p_vals = confusion(truth_labels, pred_labels)
    lines.append("confusion_truth " + " ".join(str(v) for v in t_vals))
    lines.append("confusion_pred " + " ".join(str(v) for v in p_vals))
    for row in table:
        lines.append("confusion " + " ".join(str(v) for v in row))
    return lines


def _write_artifacts(args, result, lines: list[str]) -> None:
    if not args.out:
        lines.append("[artifacts]")
        print("\n".join(lines))
        return
    os.makedirs(args.out, exist_ok=True)
    best = result.best
    model_path = os.path.join(args.out, "model.txt")
    write_model(best.fit.params, model_path)
    table_path = os.path.join(args.out, "selection.csv")
    _atomic_write_text(table_path, selection_table(result))
    lines.append("[artifacts]")
    lines.append(f"model {model_path}")
    lines.append(f"selection {table_path}")
    if args.heatmaps:
        for g, comp in enumerate(best.fit.params.components, start=1):
            hp = os.path.join(args.out, f"location_{g}.pgm")
            write_heatmap_pgm(comp.mean, hp)
            lines.append(f"heatmap_{g} {hp}")
    report_path = os.path.join(args.out, "report.txt")
    _atomic_write_text(report_path, "\n".join(lines) + "\n")
    print("\n".join(lines))


def _cmd_fit(args) -> int:
    data = _load_data(args)
    result = _run_selection(DataSet3D(data.obs), args)
    lines = _report_lines_config(args, data)
    lines.extend(_selection_sections(result))
    pred = map_classify(result.best.fit.resp)
    if data.labels is not None and (data.labels > 0).any():
        known = data.labels > 0
        lines.extend(_metrics_section(data.labels[known], pred[known]))
    else:
        lines.extend(_metrics_section(None, None))
    _write_artifacts(args, result, lines)
    return 0


def _cmd_classify(args) -> int:
    data = _load_data(args)
    truth = data.labels
    fit_data = data
    extra = []
    if args.supervision is not None:
        if truth is None:
            raise InputError("--supervision needs a labeled dataset")
        fit_data = mask_labels(data, args.supervision, args.seed)
        extra.append(f"supervision {args.supervision!r}")
    result = _run_selection(fit_data, args)
    lines = _report_lines_config(args, data, extra)
    lines.extend(_selection_sections(result))
    pred = map_classify(result.best.fit.resp)
    # score only observations the fit saw as unlabeled but whose truth is known
    if truth is not None:
        fit_labels = fit_data.labels if fit_data.labels is not None else np.zeros(data.size, dtype=np.int64)
        subset = (fit_labels == 0) & (truth > 0)
        if subset.sum() >= 2:
            lines.extend(_metrics_section(truth[subset], pred[subset]))
        else:
            lines.extend(_metrics_section(None, None))
    else:
        lines.extend(_metrics_section(None, None))
    _write_artifacts(args, result, lines)
    return 0


def _cmd_simulate(args) -> int:
    if args.reps < 1:
        raise InputError("--reps must be >= 1")
    os.makedirs(args.out, exist_ok=True)
    spec0 = sim_spec(args.preset, args.N, args.seed)
    comps = []
    from .model import ComponentParams, MixtureParams

    for g in range(spec0.G):
        comps.append(ComponentParams(
            weight=float(spec0.weights[g]),
            mean=spec0.means[g],
            left_loading=spec0.left_loadings[g],
            right_loading=spec0.right_loadings[g],
            row_noise=spec0.row_noise[g],
            col_noise=spec0.col_noise[g],
        ))
    truth_path = os.path.join(args.out, f"{args.preset}_truth.txt")
    write_model(MixtureParams(tuple(comps)), truth_path)
    lines = [_REPORT_HEAD, "[config]", "command simulate",
             f"preset {args.preset}", f"N {args.N}", f"reps {args.reps}",
             f"seed {args.seed}", "[artifacts]", f"truth {truth_path}"]
    for k in range(args.reps):
        spec = sim_spec(args.preset, args.N, _replicate_seed(args.seed, k))
        ds = generate(spec)
        path = os.path.join(args.out, f"{args.preset}_N{args.N}_rep{k:03d}.t3")
        write_t3(ds, path)
        lines.append(f"replicate_{k} {path}")
    print("\n".join(lines))
    return 0


def _replicate_seed(seed: int, rep: int) -> int:
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 0x726570, rep])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _cmd_evaluate(args) -> int:
    lines = [_REPORT_HEAD, "[config]", "command evaluate"]
    if args.labels_true or args.labels_pred:
        if not (args.labels_true and args.labels_pred):
            raise InputError("need both --labels-true and --labels-pred")
        t = _read_label_file(args.labels_true)
        p = _read_label_file(args.labels_pred)
        lines.extend(_metrics_section(t, p))
        print("\n".join(lines))
        return 0
    if not args.truth or not args.model:
        raise InputError("evaluate needs --truth and --model, or the label-file pair")
    truth = read_model(args.truth)
    true_means = np.stack([c.mean for c in truth.components])
    all_norms = []
    lines.append("[recovery]")
    for path in args.model:
        fitted = read_model(path)
        if fitted.G != truth.G:
            raise InputError(
                f"{path}: component count {fitted.G} does not match truth {truth.G}"
            )
        est_means = np.stack([c.mean for c in fitted.components])
        perm = match_components(true_means, est_means)
        norms = [mat_one_norm(true_means[g] - est_means[perm[g]])
                 for g in range(truth.G)]
        all_norms.append(norms)
        lines.append(f"model {path} norms " + " ".join(repr(v) for v in norms))
    arr = np.array(all_norms)
    lines.append("mean_norms " + " ".join(repr(float(v)) for v in arr.mean(axis=0)))
    if arr.shape[0] >= 2:
        lines.append("sd_norms " + " ".join(repr(float(v)) for v in arr.std(axis=0, ddof=1)))
    if args.data:
        data = read_t3(args.data)
        ref_model = args.model[0]
        pred = map_classify(responsibilities(DataSet3D(data.obs), read_model(ref_model)))
        if data.labels is not None and (data.labels > 0).any():
            known = data.labels > 0
            lines.extend(_metrics_section(data.labels[known], pred[known]))
        else:
            ref = map_classify(responsibilities(DataSet3D(data.obs), truth))
            lines.extend(_metrics_section(ref, pred))
    print("\n".join(lines))
    return 0


def _read_label_file(path) -> np.ndarray:
    from .errors import FormatError

    try:
        with open(path, "r", encoding="ascii") as fh:
            text = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    parts = text.replace(",", " ").split()
    try:
        return np.array([int(v) for v in parts], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"{path}: labels must be integers") from exc

"""Command-line experiment runner emitting reproducible CSV/JSON artifacts.

Figures are data here: grids, curves, and traces land in CSV, scalar
results in JSON, and identical argv (seed included) produces
byte-identical files.  Timing lives only in the stdout run summary so it
cannot break artifact reproducibility.  Existing outputs are never
overwritten without --force.

Exit codes: 0 success, 1 verification or runtime failure (with a JSON
error object on stdout), 2 usage error.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .autotune import psnr_gain_curve, simulate_autotune
from .cfid import EmbeddingSet, cfid_decompose_from_stats, compute_stats, fid, read_embeddings
from .detect import detection_probability, logistic_classifier, plug_in_gap, threshold_classifier
from .linops import (
    complex_from_interleaved,
    data_consistency,
    load_operator,
)
from .proplab import contour_grid
from .regularizers import (
    RegularizerKind,
    beta_sd_nominal,
    closed_form_j,
    closed_form_l2p,
    closed_form_l2varp,
    mc_l1p,
    mc_l2p,
    mc_lsdp,
    mc_lvarp,
)
from .streams import SeededStream
from .toy import GeneratorParams, ToyPosterior, sample_posterior
from .verify import (
    check_average_error_ratio,
    check_mode_collapse,
    check_posterior_recovery,
)

__all__ = ["main"]


class ArtifactExistsError(RuntimeError):
    pass


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(part) for part in text.split(",")], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"expected comma-separated floats, got {text!r}") from exc


def _parse_int_list(text: str) -> tuple:
    return tuple(int(part) for part in text.split(","))


def _resolve_beta(beta: str, P: int) -> float:
    if beta == "nominal":
        return beta_sd_nominal(P)
    return float(beta)


def _write_artifact(path: str, payload: str | bytes, force: bool) -> str:
    import os

    if os.path.exists(path) and not force:
        raise ArtifactExistsError(
            f"refusing to overwrite existing artifact {path!r}; pass --force"
        )
    mode = "wb" if isinstance(payload, bytes) else "w"
    kwargs = {} if isinstance(payload, bytes) else {"encoding": "utf-8", "newline": ""}
    with open(path, mode, **kwargs) as handle:
        handle.write(payload)
    return path


def _json_artifact(args, results: dict) -> str:
    payload = {
        "version": __version__,
        "argv": args.argv,
        "seed": getattr(args, "seed", None),
        "results": results,
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _read_vector_csv(path: str) -> np.ndarray:
    """One value per line (real) or 're,im' per line (complex)."""
    rows = []
    complex_any = False
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [float(p) for p in line.split(",")]
            if len(parts) == 1:
                rows.append((parts[0], 0.0))
            elif len(parts) == 2:
                rows.append((parts[0], parts[1]))
                complex_any = True
            else:
                raise ValueError(f"{path}: expected 1 or 2 columns per line")
    if not rows:
        raise ValueError(f"{path}: empty vector file")
    arr = np.array(rows, dtype=np.float64)
    if complex_any:
        return arr[:, 0] + 1j * arr[:, 1]
    return arr[:, 0]


def _vector_csv(values: np.ndarray) -> str:
    out = io.StringIO()
    if np.iscomplexobj(values):
        for v in values:
            out.write(f"{float(v.real)!r},{float(v.imag)!r}\n")
    else:
        for v in values:
            out.write(f"{float(v)!r}\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# Subcommand handlers: each returns (exit_code, results, artifact_paths)
# ---------------------------------------------------------------------------


def _cmd_contours(args) -> tuple[int, dict, list]:
    post = ToyPosterior.single(args.mu0, args.sigma0)
    if args.kind == "l1sd":
        kind = RegularizerKind.l1_sd(args.p, _resolve_beta(args.beta, args.p))
    elif args.kind == "l2":
        kind = RegularizerKind.l2(args.p)
    else:
        kind = RegularizerKind.l2_var(args.p)
    grid = contour_grid(
        kind,
        post,
        0,
        (args.mu_min, args.mu_max),
        (args.sigma_min, args.sigma_max),
        args.resolution,
    )
    path = _write_artifact(args.out, grid.to_csv(), args.force)
    mu_star, sigma_star = grid.argmin_point()
    results = {
        "argmin_mu": mu_star,
        "argmin_sigma": sigma_star,
        "argmin_contains_truth": grid.argmin_contains(args.mu0, args.sigma0),
    }
    return 0, results, [path]


def _verify_common(args, report) -> tuple[int, dict, list]:
    results = {
        "name": report.name,
        "passed": report.passed,
        "details": report.details,
    }
    artifacts = []
    if args.out:
        artifacts.append(_write_artifact(args.out, _json_artifact(args, results), args.force))
    return (0 if report.passed else 1), results, artifacts


def _cmd_verify_prop1(args) -> tuple[int, dict, list]:
    report = check_posterior_recovery(
        args.seed, p_values=_parse_int_list(args.p_list), trials=args.trials
    )
    return _verify_common(args, report)


def _cmd_verify_prop2(args) -> tuple[int, dict, list]:
    report = check_mode_collapse(
        args.seed, p_values=_parse_int_list(args.p_list), trials=args.trials
    )
    return _verify_common(args, report)


def _cmd_verify_prop3(args) -> tuple[int, dict, list]:
    report = check_average_error_ratio(
        args.seed, p_values=_parse_int_list(args.p_list), validation_size=args.v
    )
    return _verify_common(args, report)


def _cmd_autotune_sim(args) -> tuple[int, dict, list]:
    post = ToyPosterior.single(args.mu0, args.sigma0)
    nominal = beta_sd_nominal(args.p_train)
    slope = args.plant_slope if args.plant_slope is not None else args.sigma0 / nominal

    def plant(beta: float) -> float:
        return max(slope * beta + args.plant_offset, 0.0)

    stream = SeededStream(args.seed if args.seed is not None else 0, ("autotune",))
    trace = simulate_autotune(
        plant,
        post,
        0,
        args.p_val,
        args.epochs,
        args.v,
        args.mu_sd,
        stream,
        p_train=args.p_train,
        beta0=args.beta0,
        tol_db=args.tol_db,
        use_mc=args.mc,
    )
    path = _write_artifact(args.out, trace.to_csv(), args.force)
    results = {
        "converged": trace.converged,
        "epochs": len(trace.rows),
        "final_beta_sd": trace.final_beta,
        "target_db": trace.target_db,
        "final_ratio_db": trace.rows[-1].ratio_db,
    }
    return 0, results, [path]


def _cmd_psnr_curve(args) -> tuple[int, dict, list]:
    curve = psnr_gain_curve(args.pmax)
    out = io.StringIO()
    out.write("P,gain_db\n")
    for P, gain in curve:
        out.write(f"{P},{gain!r}\n")
    path = _write_artifact(args.out, out.getvalue(), args.force)
    return 0, {"pmax": args.pmax, "final_gain_db": curve[-1][1]}, [path]


def _cmd_cfid(args) -> tuple[int, dict, list]:
    embeddings = EmbeddingSet(
        read_embeddings(args.x),
        read_embeddings(args.y),
        read_embeddings(args.xhat),
        P=args.p,
    )
    mean_part, cov_part = cfid_decompose_from_stats(compute_stats(embeddings))
    results = {
        "cfid": mean_part + cov_part,
        "cfid_mean": mean_part,
        "cfid_cov": cov_part,
        "rows": embeddings.rows,
        "P": args.p,
    }
    artifacts = [_write_artifact(args.out, _json_artifact(args, results), args.force)]
    return 0, results, artifacts


def _cmd_fid(args) -> tuple[int, dict, list]:
    x = read_embeddings(args.x)
    xhat = read_embeddings(args.xhat)
    results = {"fid": fid(x, xhat), "rows_x": x.shape[0], "rows_xhat": xhat.shape[0]}
    artifacts = [_write_artifact(args.out, _json_artifact(args, results), args.force)]
    return 0, results, artifacts


def _cmd_dc(args) -> tuple[int, dict, list]:
    operator = load_operator(args.mask, coils=args.coils)
    x_raw = _read_vector_csv(args.x_raw)
    y = _read_vector_csv(args.y)
    if args.interleaved:
        x_raw = complex_from_interleaved(np.asarray(x_raw, dtype=np.float64))
        y = complex_from_interleaved(np.asarray(y, dtype=np.float64))
    result = data_consistency(operator, x_raw, y)
    residual = float(np.max(np.abs(operator.apply(result) - y)))
    path = _write_artifact(args.out, _vector_csv(result), args.force)
    return 0, {"max_residual": residual, "dim": int(result.shape[0])}, [path]


def _cmd_detect(args) -> tuple[int, dict, list]:
    post = ToyPosterior.single(_parse_vector(args.mu0), _parse_vector(args.sigma0))
    if args.classifier == "threshold":
        classifier = threshold_classifier(args.coordinate, args.tau)
    else:
        classifier = logistic_classifier(args.coordinate, args.tau, args.scale)
    stream = SeededStream(args.seed, ("detect",))
    samples = sample_posterior(post, 0, args.p, stream)
    probability = detection_probability(classifier, samples)
    avg_of_c, c_of_avg = plug_in_gap(classifier, samples)
    results = {
        "classifier": classifier.descriptor,
        "samples": args.p,
        "probability": probability,
        "plug_in_estimate": c_of_avg,
        "plug_in_gap": avg_of_c - c_of_avg,
    }
    artifacts = [_write_artifact(args.out, _json_artifact(args, results), args.force)]
    return 0, results, artifacts


def _cmd_losses(args) -> tuple[int, dict, list]:
    params = GeneratorParams(_parse_vector(args.mu), _parse_vector(args.sigma))
    post = ToyPosterior.single(_parse_vector(args.mu0), _parse_vector(args.sigma0))
    beta = _resolve_beta(args.beta, args.p)
    stream = SeededStream(args.seed, ("losses",))
    estimates = {
        "l1p": mc_l1p(params, post, 0, args.p, args.n_outer, stream.child("l1p"), args.threads),
        "lsdp": mc_lsdp(params, args.p, args.n_outer, stream.child("lsdp"), args.threads),
        "l2p": mc_l2p(params, post, 0, args.p, args.n_outer, stream.child("l2p"), args.threads),
        "lvarp": mc_lvarp(params, args.p, args.n_outer, stream.child("lvarp"), args.threads),
    }
    results = {name: asdict(est) for name, est in estimates.items()}
    results["closed_form"] = {
        "j": closed_form_j(params, post, 0, args.p, beta),
        "l2p": closed_form_l2p(params, post, 0, args.p),
        "l2varp": closed_form_l2varp(params, post, 0, args.p),
        "beta_sd": beta,
    }
    artifacts = [_write_artifact(args.out, _json_artifact(args, results), args.force)]
    return 0, results, artifacts


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(sub, seed_required: bool | None) -> None:
    """seed_required: True = required, False = optional, None = no seed flag."""
    if seed_required is not None:
        sub.add_argument(
            "--seed", type=int, required=seed_required, default=None,
            help="experiment seed (explicit; no environment fallback)",
        )
    sub.add_argument("--out", required=True, help="artifact output path")
    sub.add_argument(
        "--force", action="store_true", help="overwrite an existing artifact"
    )
    sub.add_argument(
        "--threads", type=int, default=1,
        help="worker threads for Monte Carlo chunks (results are identical)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="postsamp",
        description="Reproducible experiments on diversity-regularized posterior sampling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("contours", help="closed-form objective grid over (mu, sigma)")
    p.add_argument("--kind", choices=("l1sd", "l2", "l2var"), required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--beta", default="nominal", help="'nominal' or a number (l1sd only)")
    p.add_argument("--mu0", type=float, required=True)
    p.add_argument("--sigma0", type=float, required=True)
    p.add_argument("--mu-min", type=float, default=-3.0)
    p.add_argument("--mu-max", type=float, default=3.0)
    p.add_argument("--sigma-min", type=float, default=0.0)
    p.add_argument("--sigma-max", type=float, default=3.0)
    p.add_argument("--resolution", type=int, default=201)
    _add_common(p, seed_required=None)
    p.set_defaults(handler=_cmd_contours)

    p = sub.add_parser("verify-prop1", help="posterior recovery check")
    p.add_argument("--p-list", default="2,3,8")
    p.add_argument("--trials", type=int, default=10)
    _add_common(p, seed_required=True)
    p.set_defaults(handler=_cmd_verify_prop1)

    p = sub.add_parser("verify-prop2", help="mode collapse check")
    p.add_argument("--p-list", default="2,3,8")
    p.add_argument("--trials", type=int, default=10)
    _add_common(p, seed_required=True)
    p.set_defaults(handler=_cmd_verify_prop2)

    p = sub.add_parser("verify-prop3", help="averaging error-ratio check")
    p.add_argument("--p-list", default="2,4,8,32")
    p.add_argument("--v", type=int, default=100_000, help="validation set size")
    _add_common(p, seed_required=True)
    p.set_defaults(handler=_cmd_verify_prop3)

    p = sub.add_parser("autotune-sim", help="closed-loop spread-weight tuning")
    p.add_argument("--p-val", type=int, default=8)
    p.add_argument("--p-train", type=int, default=2)
    p.add_argument("--mu-sd", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--mu0", type=float, default=0.0)
    p.add_argument("--sigma0", type=float, default=1.0)
    p.add_argument("--plant-slope", type=float, default=None,
                   help="spread per unit weight; default sigma0 / nominal")
    p.add_argument("--plant-offset", type=float, default=0.0)
    p.add_argument("--beta0", type=float, default=None)
    p.add_argument("--tol-db", type=float, default=0.1)
    p.add_argument("--mc", action="store_true", help="estimate the ratio by Monte Carlo")
    p.add_argument("--v", type=int, default=10_000, help="validation size for --mc")
    _add_common(p, seed_required=False)
    p.set_defaults(handler=_cmd_autotune_sim)

    p = sub.add_parser("psnr-curve", help="theoretical averaging-gain curve")
    p.add_argument("--pmax", type=int, required=True)
    _add_common(p, seed_required=None)
    p.set_defaults(handler=_cmd_psnr_curve)

    p = sub.add_parser("cfid", help="conditional Frechet distance from embedding files")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--xhat", required=True)
    p.add_argument("--p", type=int, default=1, help="repetition count per measurement")
    _add_common(p, seed_required=None)
    p.set_defaults(handler=_cmd_cfid)

    p = sub.add_parser("fid", help="unconditional Frechet distance from embedding files")
    p.add_argument("--x", required=True)
    p.add_argument("--xhat", required=True)
    _add_common(p, seed_required=None)
    p.set_defaults(handler=_cmd_fid)

    p = sub.add_parser("dc", help="data-consistency projection")
    p.add_argument("--mask", required=True, help="mask file (N=... or DIMS=... header)")
    p.add_argument("--coils", type=int, default=1)
    p.add_argument("--x-raw", required=True, help="raw vector CSV (value or re,im per line)")
    p.add_argument("--y", required=True, help="measurement vector CSV")
    p.add_argument("--interleaved", action="store_true",
                   help="inputs are interleaved re/im single-column vectors")
    _add_common(p, seed_required=None)
    p.set_defaults(handler=_cmd_dc)

    p = sub.add_parser("detect", help="calibrated detection probability from samples")
    p.add_argument("--mu0", required=True, help="comma-separated posterior mean")
    p.add_argument("--sigma0", required=True, help="comma-separated posterior spread")
    p.add_argument("--classifier", choices=("threshold", "logistic"), default="threshold")
    p.add_argument("--coordinate", type=int, default=0)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--p", type=int, default=1_000_000, help="number of posterior samples")
    _add_common(p, seed_required=True)
    p.set_defaults(handler=_cmd_detect)

    p = sub.add_parser("losses", help="Monte Carlo and closed-form loss values")
    p.add_argument("--mu", required=True)
    p.add_argument("--sigma", required=True)
    p.add_argument("--mu0", required=True)
    p.add_argument("--sigma0", required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--beta", default="nominal")
    p.add_argument("--n-outer", type=int, default=100_000)
    _add_common(p, seed_required=True)
    p.set_defaults(handler=_cmd_losses)

    return parser


def main(argv: list | None = None) -> int:
    raw_argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(raw_argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0,) else 0
    args.argv = raw_argv

    start = time.perf_counter()
    try:
        exit_code, results, artifacts = args.handler(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        error = {
            "status": "error",
            "version": __version__,
            "argv": raw_argv,
            "seed": getattr(args, "seed", None),
            "wall_time_ms": (time.perf_counter() - start) * 1000.0,
            "error": {"type": type(exc).__name__, "message": str(exc)},
        }
        print(json.dumps(error, sort_keys=True))
        return 1

    summary = {
        "status": "ok" if exit_code == 0 else "failed",
        "version": __version__,
        "argv": raw_argv,
        "seed": getattr(args, "seed", None),
        "wall_time_ms": (time.perf_counter() - start) * 1000.0,
        "artifacts": artifacts,
        "results": results,
    }
    print(json.dumps(summary, sort_keys=True))
    return exit_code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: covariance, subspace, init, verify, sweep.

Exit codes: 0 success, 1 invariant violation (from ``verify``), 2 usage or
input error, 3 numerical failure. Diagnostics are printed to stderr as
single-line ``WARN <code>: <message>`` records and never change a success
exit code on their own. All randomness is seeded (``--seed``, default 0),
so rerunning a command with identical arguments rewrites identical bytes.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from contextlib import contextmanager

import numpy as np

from .adapter import PISSA, SC_LORA, SCHEMES, VANILLA, init_pissa, init_sc_lora, init_vanilla
from .covariance import ActivationCovariance, clip_tokens, rank_deficiency_check
from .linalg import JacobiConvergenceError, frobenius_norm, svd_thin
from .matio import (
    MatrixFormatError,
    load_adapter,
    load_covariance,
    read_activation_dump,
    read_matrix,
    save_adapter,
    save_covariance,
    write_matrix,
)
from .subspace import DegenerateSubspaceWarning, delta_cov, project, select_subspace
from .trainer import SweepConfig, TrainingDivergedError, beta_sweep
from .validation import check_beta, check_orthonormal

BETA_ADVISORY_THRESHOLD = 0.95

_WARN_CODES = {
    DegenerateSubspaceWarning: "DEGENERATE",
}


@contextmanager
def _collect_warnings(sink: list[tuple[str, str]]):
    """Turn library warnings raised inside the block into (code, message) records."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        yield
    for w in caught:
        sink.append((_WARN_CODES.get(w.category, "GENERAL"), str(w.message)))


def _print_warnings(sink: list[tuple[str, str]]) -> None:
    for code, message in sink:
        print(f"WARN {code}: {message}", file=sys.stderr)


def _info(args, message: str) -> None:
    if not getattr(args, "quiet", False):
        print(message)


def _check_sample_budget(args, cov_neg, rank: int, beta: float, sink: list) -> None:
    """Sparse-sample diagnostics against the preserved-task covariance."""
    if cov_neg.n_samples is None:
        return
    verdict = rank_deficiency_check(cov_neg, rank)
    if not verdict.ok:
        sink.append(("RANK_DEFICIENT", verdict.message))
        if beta > BETA_ADVISORY_THRESHOLD:
            sink.append(
                (
                    "BETA_NEAR_ONE",
                    f"beta={beta:g} with an underdetermined preserved-task covariance "
                    "makes the selected subspace unstable; keep 1 - beta a small "
                    "positive value (for example beta = 0.8 or 0.9).",
                )
            )


def _cmd_covariance(args) -> int:
    acc = ActivationCovariance()
    for i, tokens in enumerate(read_activation_dump(args.activations)):
        if args.clip is not None:
            tokens = clip_tokens(tokens, args.clip)
        acc.partial_fit(tokens, sample_id=i)
    cov = acc.finalize()
    save_covariance(args.out, cov)
    _info(
        args,
        f"accumulated {cov.n_samples} samples (L={cov.token_length}) into a "
        f"{cov.dim} x {cov.dim} covariance -> {args.out}",
    )
    return 0


def _cmd_subspace(args) -> int:
    beta = check_beta(args.beta)
    cov_pos = load_covariance(args.cov_pos)
    cov_neg = load_covariance(args.cov_neg)
    sink: list[tuple[str, str]] = []
    with _collect_warnings(sink):
        basis = select_subspace(delta_cov(cov_pos, cov_neg, beta), args.rank)
    _check_sample_budget(args, cov_neg, args.rank, beta, sink)
    write_matrix(args.out, basis)
    _print_warnings(sink)
    _info(args, f"selected rank-{args.rank} subspace of dim {basis.shape[0]} -> {args.out}")
    return 0


def _cmd_init(args) -> int:
    w0 = read_matrix(args.w0)
    sink: list[tuple[str, str]] = []
    beta = None
    seed = None

    if args.scheme == SC_LORA:
        if args.basis is not None and (args.cov_pos or args.cov_neg or args.beta is not None):
            raise ValueError("pass either --basis or the --cov-pos/--cov-neg/--beta triple")
        if args.basis is not None:
            basis = check_orthonormal(read_matrix(args.basis), name="basis")
            if args.rank is not None and args.rank != basis.shape[1]:
                raise ValueError(
                    f"--rank {args.rank} contradicts basis with {basis.shape[1]} columns"
                )
        else:
            if not (args.cov_pos and args.cov_neg and args.beta is not None):
                raise ValueError(
                    "scheme sc-lora needs --basis, or --cov-pos, --cov-neg and --beta"
                )
            if args.rank is None:
                raise ValueError("--rank is required when selecting the subspace from covariances")
            beta = check_beta(args.beta)
            cov_pos = load_covariance(args.cov_pos)
            cov_neg = load_covariance(args.cov_neg)
            with _collect_warnings(sink):
                basis = select_subspace(delta_cov(cov_pos, cov_neg, beta), args.rank)
            _check_sample_budget(args, cov_neg, args.rank, beta, sink)
        pair = init_sc_lora(w0, basis)
    elif args.scheme == VANILLA:
        if args.rank is None:
            raise ValueError("--rank is required for scheme vanilla")
        seed = args.seed
        pair = init_vanilla(w0, args.rank, seed=seed)
    elif args.scheme == PISSA:
        if args.rank is None:
            raise ValueError("--rank is required for scheme pissa")
        pair = init_pissa(w0, args.rank)
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown scheme {args.scheme!r}")

    save_adapter(
        args.out,
        pair,
        beta=beta,
        seed=seed,
        warnings=[f"{code}: {message}" for code, message in sink],
    )
    _print_warnings(sink)
    _info(
        args,
        f"initialized {pair.scheme} adapter rank {pair.rank} for a "
        f"{pair.d_out} x {pair.d_in} layer -> {args.out}",
    )
    return 0


def _cmd_verify(args) -> int:
    pair, header = load_adapter(args.adapter)
    w0 = read_matrix(args.w0)
    rng = np.random.default_rng(args.seed)
    failures = 0

    def check(name: str, ok: bool, detail: str) -> None:
        nonlocal failures
        if ok:
            _info(args, f"ok   {name} ({detail})")
        else:
            failures += 1
            print(f"FAIL {name}: {detail}", file=sys.stderr)

    check(
        "shape",
        pair.d_out == w0.shape[0] and pair.d_in == w0.shape[1],
        f"adapter {pair.d_out} x {pair.d_in}, w0 {w0.shape[0]} x {w0.shape[1]}",
    )
    if failures:
        _print_result(args, failures)
        return 1

    w0_norm = max(1.0, frobenius_norm(w0))
    recon = frobenius_norm(pair.w_res + pair.b @ pair.a - w0)
    check(
        "reconstruction",
        recon <= 1e-10 * w0_norm,
        f"||w_res + b a - w0||_F = {recon:.3e}, budget {1e-10 * w0_norm:.3e}",
    )

    if pair.scheme == SC_LORA:
        gram_err = float(np.max(np.abs(pair.b.T @ pair.b - np.eye(pair.rank))))
        check("orthonormal_b", gram_err <= 1e-10, f"max |b^T b - I| = {gram_err:.3e}")
        a_err = frobenius_norm(pair.a - pair.b.T @ w0)
        check("a_equals_bT_w0", a_err <= 1e-10 * w0_norm, f"||a - b^T w0||_F = {a_err:.3e}")
        x = rng.standard_normal((pair.d_in, 20))
        lhs = pair.b @ (pair.a @ x)
        rhs = project(pair.b, w0 @ x)
        worst = float(
            np.max(np.linalg.norm(lhs - rhs, axis=0) / np.linalg.norm(x, axis=0))
        )
        check(
            "projection_identity",
            worst <= 1e-8,
            f"max ||b a x - proj(w0 x)|| / ||x|| = {worst:.3e}",
        )
    elif pair.scheme == VANILLA:
        check("zero_b", not np.any(pair.b), "b is the zero matrix")
        res_err = frobenius_norm(pair.w_res - w0)
        check("residual_is_w0", res_err <= 1e-12 * w0_norm, f"||w_res - w0||_F = {res_err:.3e}")
    elif pair.scheme == PISSA:
        k = min(w0.shape)
        _, sigma, _ = svd_thin(w0, k)
        tail = float(np.sum(sigma[pair.rank :] ** 2))
        res_sq = frobenius_norm(pair.w_res) ** 2
        check(
            "eckart_young_residual",
            abs(res_sq - tail) <= 1e-8 * max(1.0, w0_norm**2),
            f"||w_res||_F^2 = {res_sq:.6e}, tail singular mass = {tail:.6e}",
        )

    _print_result(args, failures)
    return 1 if failures else 0


def _print_result(args, failures: int) -> None:
    if failures:
        print(f"verification failed: {failures} invariant(s) violated", file=sys.stderr)
    else:
        _info(args, "all invariants hold")


def _cmd_sweep(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{args.config}: sweep config must be a JSON object")
    config = SweepConfig.from_dict(raw)
    report = beta_sweep(config, n_jobs=max(1, args.threads))
    report.write(args.out)
    for beta, loss, drift in report.summary():
        _info(args, f"beta={beta:g}: final_plus_loss={loss:.6g} preservation_drift={drift:.6g}")
    _info(args, f"wrote report.csv, summary.csv and {len(report.records)} traces -> {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument(
        "--seed", type=int, default=argparse.SUPPRESS, help="seed for any randomness (default 0)"
    )
    shared.add_argument(
        "--quiet", action="store_true", default=argparse.SUPPRESS, help="suppress informational output"
    )

    parser = argparse.ArgumentParser(
        prog="sclora",
        parents=[shared],
        description="Subspace-constrained low-rank adapter initialization toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser(
        "covariance", parents=[shared], help="accumulate activation samples into a task covariance"
    )
    p.add_argument("--activations", required=True, help="activation dump (matrix records)")
    p.add_argument("--out", required=True, help="output covariance bundle")
    p.add_argument("--clip", type=int, default=None, help="truncate samples to at most L tokens")
    p.set_defaults(handler=_cmd_covariance)

    p = sub.add_parser(
        "subspace", parents=[shared], help="select the balanced subspace from two covariances"
    )
    p.add_argument("--cov-pos", required=True, help="fine-tuning task covariance")
    p.add_argument("--cov-neg", required=True, help="preserved task covariance")
    p.add_argument("--beta", type=float, required=True, help="balance weight in [0, 1]")
    p.add_argument("--rank", type=int, required=True, help="subspace dimension")
    p.add_argument("--out", required=True, help="output basis (matrix record, dim x rank)")
    p.set_defaults(handler=_cmd_subspace)

    p = sub.add_parser("init", parents=[shared], help="initialize a low-rank adapter pair")
    p.add_argument("--w0", required=True, help="pretrained weight matrix")
    p.add_argument("--scheme", required=True, choices=SCHEMES)
    p.add_argument("--basis", help="precomputed orthonormal basis (sc-lora)")
    p.add_argument("--cov-pos", help="fine-tuning task covariance (sc-lora)")
    p.add_argument("--cov-neg", help="preserved task covariance (sc-lora)")
    p.add_argument("--beta", type=float, default=None, help="balance weight (sc-lora)")
    p.add_argument("--rank", type=int, default=None, help="adapter rank")
    p.add_argument("--out", required=True, help="output adapter bundle")
    p.set_defaults(handler=_cmd_init)

    p = sub.add_parser("verify", parents=[shared], help="check adapter invariants against w0")
    p.add_argument("--adapter", required=True, help="adapter bundle")
    p.add_argument("--w0", required=True, help="pretrained weight matrix")
    p.set_defaults(handler=_cmd_verify)

    p = sub.add_parser("sweep", parents=[shared], help="run the two-task balance-weight sweep")
    p.add_argument("--config", required=True, help="sweep config JSON")
    p.add_argument("--out", required=True, help="output report directory")
    p.add_argument("--threads", type=int, default=1, help="parallel sweep cells")
    p.set_defaults(handler=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if exc.code is not None else 0
        return code if isinstance(code, int) else 2
    if not hasattr(args, "seed"):
        args.seed = 0
    if not hasattr(args, "quiet"):
        args.quiet = False
    try:
        return args.handler(args)
    except MatrixFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (JacobiConvergenceError, TrainingDivergedError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Inputs are circuit files (``.circ``), serialized tensors (text or
``.mpob`` binary), or the name of a bundled fixture such as ``table1``.

Exit codes: 0 success, 2 parse or usage error, 3 size cap exceeded,
4 numerical non-convergence (no stabilization or no fixed point),
5 a requested check failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    DEFAULT_FP_TOL,
    check_fixed_point,
    check_unitary_dense,
    conjugate_local,
    find_fixed_point,
)
from .builders import (
    CircuitSpec,
    SpecError,
    build_circuit,
    list_fixtures,
    load_circuit,
    load_fixture,
)
from .index import (
    DEFAULT_STABLE_ROWS,
    circuit_overlap_index,
    gnvw_overlap_index,
    index_scan,
)
from .mpo import (
    CapExceededError,
    FormatError,
    InjectivityError,
    assemble_dense,
    load,
    reduce_to_injective,
    sites_of,
)
from .tensor_core import DEFAULT_RANK_TOL, DegenerateSpectrumError

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_CAP = 3
EXIT_NONCONVERGENCE = 4
EXIT_ASSERTION = 5

TABLE_FIXTURES = ("table1", "table2", "table3")
DEFAULT_TABLE_BLOCK = 7
# default scans stop once the blocked physical dimension passes this
DEFAULT_SCAN_SIDE = 256


class ParseError(ValueError):
    pass


@dataclasses.dataclass
class Source:
    name: str
    mpo: object
    spec: CircuitSpec | None = None


def _tolerance(text: str) -> float:
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"tolerance must lie in (0, 1), got {text}")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from exc
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError(f"sizes must be positive, got {text!r}")
    return sizes


def _reseed(spec: CircuitSpec, offset: int) -> CircuitSpec:
    layers = tuple(
        dataclasses.replace(layer, seed=layer.seed + offset) if layer.kind == "random" else layer
        for layer in spec.layers
    )
    return dataclasses.replace(spec, layers=layers)


def load_source(ref: str, seed_offset: int = 0) -> Source:
    """Resolve a circuit file, tensor file or fixture name."""
    path = Path(ref)
    try:
        if not path.exists():
            if ref in list_fixtures():
                spec = load_fixture(ref)
            else:
                raise ParseError(f"no such file or fixture: {ref}")
        elif path.suffix == ".circ":
            spec = load_circuit(path)
        else:
            if seed_offset:
                raise ParseError("--seed-offset only applies to circuit inputs")
            return Source(path.stem, load(path))
    except (SpecError, FormatError, UnicodeDecodeError) as exc:
        raise ParseError(str(exc)) from exc
    if seed_offset:
        spec = _reseed(spec, seed_offset)
    return Source(spec.name or path.stem, build_circuit(spec), spec)


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def _default_block(mpo, requested: int | None) -> int:
    if requested is not None:
        return requested
    d = sites_of(mpo)[0].phys_in
    n = 1
    while n < DEFAULT_TABLE_BLOCK and d ** (n + 1) <= DEFAULT_SCAN_SIDE:
        n += 1
    return n


def _render_report(report, fmt: str) -> str:
    if fmt == "json":
        return report.to_json()
    if fmt == "csv":
        return report.to_csv().rstrip("\n")
    return report.to_text()


# commands


def cmd_index(args) -> int:
    src = load_source(args.input, args.seed_offset)
    start = args.start if args.start is not None else (src.spec.start if src.spec else 0)
    report = index_scan(
        src.mpo,
        _default_block(src.mpo, args.max_block),
        rel_tol=args.rank_tol,
        start=start,
        stable_rows=args.stable_rows,
        check_hypotheses=not args.skip_unitary_check,
    )
    _emit(_render_report(report, args.format), args.output)
    if report.stabilized_value is None:
        print(f"{src.name}: rank ratio did not stabilize within {len(report.rows)} sites", file=sys.stderr)
        return EXIT_CAP if report.cap_exceeded else EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_tables(args) -> int:
    status = EXIT_OK
    outdir = Path(args.output_dir) if args.output_dir else None
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
    suffix = {"json": "json", "csv": "csv", "human": "txt"}[args.format]
    for name in TABLE_FIXTURES:
        spec = load_fixture(name)
        report = index_scan(build_circuit(spec), args.max_block, rel_tol=args.rank_tol, start=spec.start)
        text = _render_report(report, args.format)
        if outdir is not None:
            (outdir / f"{name}.{suffix}").write_text(text + "\n")
        elif args.format == "human":
            print(f"# {name}\n{text}\n")
        else:
            print(text)
        if report.stabilized_value is None:
            print(f"{name}: rank ratio did not stabilize", file=sys.stderr)
            status = EXIT_NONCONVERGENCE
    return status


def cmd_check_unitary(args) -> int:
    src = load_source(args.input, args.seed_offset)
    sizes = args.sizes or [len(sites_of(src.mpo)) * k for k in (1, 2, 3)]
    results = check_unitary_dense(src.mpo, sizes, args.tol)
    if args.format == "json":
        text = json.dumps([dataclasses.asdict(r) for r in results], indent=2)
    elif args.format == "csv":
        text = "n_sites,max_error,unitary\n" + "\n".join(
            f"{r.n_sites},{r.max_error:.3e},{r.unitary}" for r in results
        )
    else:
        text = "\n".join(
            f"N={r.n_sites:<3} max|O^dag O - I| = {r.max_error:.3e}  {'unitary' if r.unitary else 'NOT unitary'}"
            for r in results
        )
    _emit(text, args.output)
    return EXIT_OK if all(r.unitary for r in results) else EXIT_ASSERTION


def _maybe_reduce(mpo, reduce: bool):
    if not reduce:
        return mpo
    try:
        return reduce_to_injective(mpo)
    except InjectivityError as exc:
        print(f"reduction failed: {exc}", file=sys.stderr)
        return mpo


def cmd_fixed_point(args) -> int:
    src = load_source(args.input, args.seed_offset)
    mpo = _maybe_reduce(src.mpo, args.reduce)
    if mpo is not src.mpo and len(sites_of(src.mpo)) > 1:
        print(f"block lengths count reduced cells of {len(sites_of(src.mpo))} sites", file=sys.stderr)
    if args.block_length is not None:
        try:
            report = check_fixed_point(mpo, args.block_length, args.tol)
        except DegenerateSpectrumError as exc:
            print(f"transfer matrix: {exc}", file=sys.stderr)
            return EXIT_NONCONVERGENCE
        if args.format == "json":
            text = report.to_json()
        else:
            text = "\n".join(
                [f"block length {report.block_length}"]
                + [f"  {k:<11} {v:.3e}" for k, v in report.residuals.items()]
                + [f"  {'passed' if report.passed else 'FAILED'} at tol {args.tol:g}"]
            )
        _emit(text, args.output)
        return EXIT_OK if report.passed else EXIT_ASSERTION
    search = find_fixed_point(mpo, args.max_block, args.tol)
    if args.format == "json":
        text = search.to_json()
    else:
        lines = [f"{r.block_length:>4}  " + "  ".join(f"{k}={v:.2e}" for k, v in r.residuals.items()) for r in search.reports]
        lines.append(f"status: {search.status}" + (f" at block length {search.block_length}" if search.found else ""))
        if search.message:
            lines.append(search.message)
        text = "\n".join(lines)
    _emit(text, args.output)
    return {"found": EXIT_OK, "cap_exceeded": EXIT_CAP}.get(search.status, EXIT_NONCONVERGENCE)


def _random_single_site(d: int, rng: np.random.Generator) -> np.ndarray:
    # random traceless Hermitian operator, so it is never proportional to the identity
    x = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    h = x + x.conj().T
    return h - np.trace(h) / d * np.eye(d)


def cmd_locality(args) -> int:
    src = load_source(args.input, args.seed_offset)
    n = args.n_sites
    o = assemble_dense(src.mpo, n)
    rng = np.random.default_rng(args.seed)
    d = o.local_dim
    reports = []
    for k in range(args.samples):
        site = args.site if args.site is not None else int(rng.integers(n))
        _, rep = conjugate_local(o, _random_single_site(d, rng), [site], n, args.tol)
        reports.append((site, rep))
    worst = max(rep.growth for _, rep in reports)
    if args.format == "json":
        text = json.dumps(
            {"n_sites": n, "max_growth": worst, "samples": [{"site": s, **r.to_dict()} for s, r in reports]},
            indent=2,
        )
    elif args.format == "csv":
        text = "site,support_before,support_after,window_start,growth\n" + "\n".join(
            f"{s},{r.operator_support_before},{r.support_after},{r.window_start},{r.growth}" for s, r in reports
        )
    else:
        text = "\n".join(
            [f"site {s:>3}: support {r.operator_support_before} -> {r.support_after} (growth {r.growth})" for s, r in reports]
            + [f"max growth {worst} on a ring of {n} sites"]
        )
    _emit(text, args.output)
    if args.max_growth is not None and worst > args.max_growth:
        return EXIT_ASSERTION
    return EXIT_OK


def cmd_oracle(args) -> int:
    src = load_source(args.input, args.seed_offset)
    start = src.spec.start if src.spec else 0
    report = index_scan(src.mpo, _default_block(src.mpo, args.max_block), rel_tol=args.rank_tol, start=start)
    ratio = report.stabilized_value
    result = {
        "name": src.name,
        "rank_ratio": None if ratio is None else str(ratio),
        "sqrt_rank_ratio": report.gnvw,
        "outside_hypotheses": report.outside_hypotheses,
    }
    method = args.method
    if method == "auto":
        method = "cone" if src.spec is not None and all(
            layer.kind != "fractional" for layer in src.spec.layers
        ) else "ring"
    result["method"] = method
    eta = None
    if method == "cone":
        if src.spec is None:
            raise ParseError("the cone method needs a circuit input")
        eta = circuit_overlap_index(src.spec, args.l0, args.cut)
        result["l0"] = args.l0
    else:
        l0 = 1 if args.l0 is None else args.l0
        o = assemble_dense(src.mpo, args.n_sites)
        err = float(np.abs(o.matrix.conj().T @ o.matrix - np.eye(o.matrix.shape[0])).max())
        result.update(n_sites=args.n_sites, l0=l0, unitarity_error=err)
        if err > 1e-10:
            result["error"] = f"not unitary on {args.n_sites} sites"
        else:
            eta = gnvw_overlap_index(o, args.cut, l0)
    result["eta_index"] = eta
    diff = None if eta is None or report.gnvw is None else abs(eta - report.gnvw)
    result["discrepancy"] = diff
    if args.format == "json":
        text = json.dumps(result, indent=2)
    else:
        text = "\n".join(f"{k}: {v}" for k, v in result.items())
    _emit(text, args.output)
    if ratio is None:
        return EXIT_NONCONVERGENCE
    if diff is None or diff > args.tol:
        return EXIT_ASSERTION
    return EXIT_OK


# parser


def _common(p: argparse.ArgumentParser, with_input: bool = True) -> None:
    if with_input:
        p.add_argument("input", help="circuit file, tensor file or fixture name")
        p.add_argument("--seed-offset", type=int, default=0, help="add to every random-layer seed")
    p.add_argument("--format", choices=("json", "csv", "human"), default="human")
    p.add_argument("--output", "-o", help="write the report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpuindex", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="rank-ratio scan over growing blocks")
    _common(p)
    p.add_argument("--max-block", type=_positive, help="longest block (default: 7 sites, fewer for d > 2)")
    p.add_argument("--start", type=int, help="cell site where blocking starts")
    p.add_argument("--rank-tol", type=_tolerance, default=DEFAULT_RANK_TOL)
    p.add_argument("--stable-rows", type=_positive, default=DEFAULT_STABLE_ROWS)
    p.add_argument("--skip-unitary-check", action="store_true")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("tables", help="regenerate the three bundled circuit tables")
    _common(p, with_input=False)
    p.add_argument("--output-dir", help="write table1..table3 files here")
    p.add_argument("--max-block", type=_positive, default=DEFAULT_TABLE_BLOCK)
    p.add_argument("--rank-tol", type=_tolerance, default=DEFAULT_RANK_TOL)
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("check-unitary", help="dense unitarity check on rings")
    _common(p)
    p.add_argument("--sizes", type=_sizes, help="comma-separated ring sizes")
    p.add_argument("--tol", type=_tolerance, default=1e-10)
    p.set_defaults(func=cmd_check_unitary)

    p = sub.add_parser("fixed-point", help="fixed-point equations of the blocked tensor")
    _common(p)
    p.add_argument("--block-length", type=_positive, help="check this length only (in sites)")
    p.add_argument("--max-block", type=_positive, help="search bound in sites")
    p.add_argument("--tol", type=_tolerance, default=DEFAULT_FP_TOL)
    p.add_argument("--reduce", action="store_true", help="reduce to an injective cell tensor first")
    p.set_defaults(func=cmd_fixed_point)

    p = sub.add_parser("locality", help="support growth of conjugated single-site operators")
    _common(p)
    p.add_argument("--n-sites", type=_positive, required=True)
    p.add_argument("--samples", type=_positive, default=10)
    p.add_argument("--site", type=int, help="fixed site (default: random)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=_tolerance, default=1e-10)
    p.add_argument("--max-growth", type=int, help="fail when growth exceeds this")
    p.set_defaults(func=cmd_locality)

    p = sub.add_parser("oracle", help="compare sqrt(rank ratio) with the overlap index")
    _common(p)
    p.add_argument("--method", choices=("auto", "cone", "ring"), default="auto")
    p.add_argument("--n-sites", type=_positive, default=6, help="ring size for the ring method")
    p.add_argument("--l0", type=_positive, help="region length (cone default: light-cone radius)")
    p.add_argument("--cut", type=int, default=0)
    p.add_argument("--max-block", type=_positive, help="longest block of the rank scan")
    p.add_argument("--rank-tol", type=_tolerance, default=DEFAULT_RANK_TOL)
    p.add_argument("--tol", type=_tolerance, default=1e-8)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except CapExceededError as exc:
        print(f"size cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP
    except DegenerateSpectrumError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())

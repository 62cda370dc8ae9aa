"""Command-line entry point: ``hyperimp <command> [flags] <paths>``.

Every command writes CSV/JSON files plus a ``run.json`` manifest into its
output directory; ``hyperimp replay run.json`` re-runs a manifest.

Global flags and defaults:

==============  ======================  =========================================
flag            default                 meaning
==============  ======================  =========================================
--seed          0                       seed for forests and synthetic data
--trees         32                      surrogate forest size
--max-order     2                       largest subset size decomposed
--top-q         (one per dataset)       fraction of top records feeding priors
--tie-band      0.01                    win-matrix tie band (score units)
--reference     recommended-defaults    tunability reference configuration
--lenient       off                     skip rejected rows instead of failing
--jobs          1                       worker processes across datasets
--space-dir     $HYPERIMP_SPACE_DIR     directory of space JSON overrides
==============  ======================  =========================================
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import (
    DEFAULT_TIE_BAND,
    REFERENCE_MODES,
    RECOMMENDED_DEFAULTS,
    mean_rank,
    significance_report,
    tunability,
    win_matrix,
)
from .config_space import SpaceError, resolve_spaces
from .fanova import ImportanceError, importance_table
from .forest import ForestParams
from .perfdata import KnowledgeBaseError, load_knowledge_base, write_knowledge_base
from .priors import (
    collect_best_values,
    density_curve,
    fit_density,
    frequency_table,
    recommend_default,
)
from .synthetic import SynthSpecError, load_planted_spec, planted_kb

logger = logging.getLogger("hyperimp")

COMMANDS = ("importance", "priors", "tunability", "rank", "winmatrix", "synth")


class CLIError(Exception):
    pass


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "" if np.isnan(x) else repr(float(x))
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _print_table(header, rows, stream=None) -> None:
    stream = stream or sys.stdout
    cells = [[str(h) for h in header]] + [
        [f"{v:.4f}" if isinstance(v, (float, np.floating)) else str(v) for v in r] for r in rows
    ]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for k, r in enumerate(cells):
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)), file=stream)
        if k == 0:
            print("  ".join("-" * w for w in widths), file=stream)


# ---------------------------------------------------------------------------
# shared plumbing


def _load(args):
    spaces = resolve_spaces(args.space_dir)
    kb = load_knowledge_base(args.kb, spaces, lenient=args.lenient)
    for msg in kb.rejected:
        print(f"warning: {msg}", file=sys.stderr)
    return kb


def _forest_params(args) -> ForestParams:
    return ForestParams(n_trees=args.trees, seed=args.seed)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_algorithm(kb, algorithm):
    if algorithm not in kb.algorithms:
        raise CLIError(f"algorithm {algorithm!r} not in knowledge base "
                       f"(have: {', '.join(kb.algorithms)})")


# ---------------------------------------------------------------------------
# commands


def _importance_outputs(kb, algorithm, args):
    results = importance_table(kb, algorithm, kb.spaces, _forest_params(args), args.max_order,
                               n_jobs=args.jobs)
    subsets = [e.label for e in results[0].report.entries]
    violin = {
        "algorithm": algorithm,
        "max_order": args.max_order,
        "datasets": [r.dataset for r in results],
        "subsets": {s: [r.report.fraction(s) for r in results] for s in subsets},
        "degenerate": [r.dataset for r in results if r.report.degenerate],
    }
    violin["medians"] = {s: float(np.median(v)) for s, v in violin["subsets"].items()}
    singles = [s for s in subsets if "+" not in s]
    violin["ranking"] = sorted(singles, key=lambda s: -violin["medians"][s])
    return results, subsets, violin


def cmd_importance(args) -> list[Path]:
    kb = _load(args)
    _require_algorithm(kb, args.algorithm)
    out = _out_dir(args)
    results, subsets, violin = _importance_outputs(kb, args.algorithm, args)
    rows = []
    for r in results:
        for e in r.report.entries:
            rows.append((r.dataset, e.label, e.fraction_mean, e.fraction_std, e.raw_variance_mean))
    files = [out / "importance.csv", out / "violin.json", out / "significance.csv"]
    _write_csv(files[0], ["dataset", "subset", "fraction_mean", "fraction_std",
                          "raw_variance_mean"], rows)
    _write_json(files[1], violin)
    sig_rows = []
    for order in range(1, args.max_order + 1):
        family = [s for s in subsets if s.count("+") == order - 1]
        if len(family) < 2:
            continue
        for p in significance_report(results, family):
            sig_rows.append((p.first, p.second, p.p_value, int(p.significant), p.n_datasets,
                             p.median_difference, p.more_important or "",
                             int(p.insufficient)))
    _write_csv(files[2], ["subset_a", "subset_b", "p_value", "significant", "n_datasets",
                          "median_difference", "more_important", "insufficient_data"], sig_rows)
    print(f"{args.algorithm}: {len(results)} dataset(s), median variance fraction")
    _print_table(["subset", "median"],
                 [(s, violin["medians"][s]) for s in
                  sorted(subsets, key=lambda s: -violin["medians"][s])[:10]])
    return files


def _top_hyperparameter(kb, args) -> str:
    candidates = [Path(args.importance)] if args.importance else [Path(args.out) / "violin.json"]
    for path in candidates:
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                violin = json.load(fh)
            if violin.get("algorithm") not in (None, args.algorithm):
                raise CLIError(f"{path} describes {violin['algorithm']}, not {args.algorithm}")
            return violin["ranking"][0]
    if args.importance:
        raise CLIError(f"importance artifact {args.importance} not found")
    logger.info("no importance artifact; computing importance to pick the hyperparameter")
    _, _, violin = _importance_outputs(kb, args.algorithm, args)
    return violin["ranking"][0]


def cmd_priors(args) -> list[Path]:
    kb = _load(args)
    _require_algorithm(kb, args.algorithm)
    out = _out_dir(args)
    hp = args.hyperparameter or _top_hyperparameter(kb, args)
    space = kb.space(args.algorithm)
    try:
        domain = space[hp]
    except SpaceError as exc:
        raise CLIError(str(exc)) from None
    values = collect_best_values(kb, args.algorithm, hp, args.top_q)
    if not domain.is_categorical and len(values) < 2:
        raise CLIError(f"{hp}: only {len(values)} value(s) collected; raise --top-q")
    density = fit_density(values, domain)
    summary = {
        "algorithm": args.algorithm,
        "hyperparameter": hp,
        "kind": domain.kind,
        "recommended_default": recommend_default(density),
        "bandwidth": density.bandwidth,
        "n_samples": len(values),
        "top_q": args.top_q,
    }
    if domain.is_categorical:
        curve_path = out / f"frequencies_{hp}.csv"
        _write_csv(curve_path, ["category", "probability"], frequency_table(density))
    else:
        curve_path = out / f"density_{hp}.csv"
        _write_csv(curve_path, ["value", "density"], density_curve(density))
    json_path = out / f"prior_{hp}.json"
    _write_json(json_path, summary)
    _print_table(["hyperparameter", "recommended_default", "n_samples", "bandwidth"],
                 [(hp, summary["recommended_default"], len(values), density.bandwidth)])
    return [curve_path, json_path]


def cmd_tunability(args) -> list[Path]:
    kb = _load(args)
    out = _out_dir(args)
    algorithms = args.algorithm or kb.algorithms
    rows, summary = [], []
    for alg in algorithms:
        _require_algorithm(kb, alg)
        res = tunability(kb, alg, args.reference, args.top_q)
        rows.extend((alg, ds, d) for ds, d in zip(res.datasets, res.deltas))
        rows.append((alg, "aggregate_std", res.aggregate_std))
        rows.append((alg, "aggregate_mean", res.aggregate_mean))
        summary.append((alg, res.aggregate_std, res.aggregate_mean, len(res.datasets)))
    path = out / "tunability.csv"
    _write_csv(path, ["algorithm", "dataset", "delta"], rows)
    print(f"tunability (reference: {args.reference})")
    _print_table(["algorithm", "std", "mean", "datasets"],
                 sorted(summary, key=lambda r: -r[1]))
    return [path]


def cmd_rank(args) -> list[Path]:
    kb = _load(args)
    out = _out_dir(args)
    rs = mean_rank(kb)
    path = out / "rank.csv"
    order = rs.order()
    idx = {a: i for i, a in enumerate(rs.algorithms)}
    _write_csv(path, ["algorithm", "mean_rank", "ci_halfwidth"],
               [(a, rs.mean_rank[idx[a]], rs.ci_halfwidth[idx[a]]) for a in order])
    print(f"mean rank over {rs.n_datasets} dataset(s), {rs.n_excluded} excluded as incomplete")
    _print_table(["algorithm", "mean_rank", "ci95"],
                 [(a, rs.mean_rank[idx[a]], rs.ci_halfwidth[idx[a]]) for a in order])
    return [path]


def cmd_winmatrix(args) -> list[Path]:
    kb = _load(args)
    out = _out_dir(args)
    wm = win_matrix(kb, args.tie_band, relative=args.relative)
    path = out / "winmatrix.csv"
    _write_csv(path, ["algorithm_i", "algorithm_j", "win_pct", "tie_pct", "loss_pct",
                      "n_common"], wm.rows())
    print(f"win percentages (tie band {wm.tie_band}{' relative' if wm.relative else ''}); "
          "rows ordered by mean rank")
    _print_table(["", *wm.algorithms],
                 [(a, *["-" if i == j or np.isnan(wm.win[i, j]) else f"{wm.win[i, j]:.1f}"
                        for j in range(len(wm.algorithms))])
                  for i, a in enumerate(wm.algorithms)])
    return [path]


def cmd_synth(args) -> list[Path]:
    spec = load_planted_spec(args.spec)
    planted = planted_kb(spec, args.seed, with_truth=True)
    kb_path = Path(args.out)
    kb_path.parent.mkdir(parents=True, exist_ok=True)
    write_knowledge_base(planted.kb, kb_path)
    sidecar = kb_path.with_name(kb_path.stem + ".truth.json")
    spaces_dir = kb_path.with_name(kb_path.stem + ".spaces")
    spaces_dir.mkdir(exist_ok=True)
    space_files = []
    for alg in planted.algorithms:
        p = spaces_dir / f"{alg.name}.json"
        _write_json(p, alg.space.to_dict())
        space_files.append(p)
    _write_json(sidecar, {
        "seed": args.seed,
        "n_samples": planted.n_samples,
        "algorithms": {
            a.name: {
                "datasets": a.datasets,
                "offset": a.offset,
                "scale": a.scale,
                "noise": a.noise,
                "terms": a.terms,
                "planted": planted.truth[a.name],
            }
            for a in planted.algorithms
        },
    })
    print(f"wrote {len(planted.kb)} table(s) to {kb_path}")
    return [kb_path, sidecar, *space_files]


HANDLERS = {
    "importance": cmd_importance,
    "priors": cmd_priors,
    "tunability": cmd_tunability,
    "rank": cmd_rank,
    "winmatrix": cmd_winmatrix,
    "synth": cmd_synth,
}


# ---------------------------------------------------------------------------
# parser and manifests


def _fraction_or_none(text: str):
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError("must lie in (0, 1]")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global flags")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--trees", type=_positive_int, default=32)
    g.add_argument("--max-order", type=_positive_int, default=2)
    g.add_argument("--top-q", type=_fraction_or_none, default=None)
    g.add_argument("--tie-band", type=float, default=DEFAULT_TIE_BAND)
    g.add_argument("--reference", choices=REFERENCE_MODES, default=RECOMMENDED_DEFAULTS)
    g.add_argument("--lenient", action="store_true")
    g.add_argument("--jobs", type=_positive_int, default=1)
    g.add_argument("--space-dir", default=None)
    g.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="hyperimp",
        description="Hyperparameter importance, priors, tunability and rankings.")
    parser.add_argument("--version", action="version", version=f"hyperimp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("importance", parents=[common], help="per-dataset variance fractions")
    p.add_argument("kb")
    p.add_argument("--algorithm", required=True)
    p.add_argument("--out", default="hyperimp-out")

    p = sub.add_parser("priors", parents=[common], help="density of well-performing values")
    p.add_argument("kb")
    p.add_argument("--algorithm", required=True)
    p.add_argument("--hyperparameter", default=None)
    p.add_argument("--importance", default=None, help="violin.json from a previous run")
    p.add_argument("--out", default="hyperimp-out")

    p = sub.add_parser("tunability", parents=[common], help="best-vs-reference gaps")
    p.add_argument("kb")
    p.add_argument("--algorithm", action="append", default=None)
    p.add_argument("--out", default="hyperimp-out")

    p = sub.add_parser("rank", parents=[common], help="mean rank of algorithms")
    p.add_argument("kb")
    p.add_argument("--out", default="hyperimp-out")

    p = sub.add_parser("winmatrix", parents=[common], help="pairwise win percentages")
    p.add_argument("kb")
    p.add_argument("--relative", action="store_true", help="tie band relative to the larger score")
    p.add_argument("--out", default="hyperimp-out")

    p = sub.add_parser("synth", parents=[common], help="generate a planted knowledge base")
    p.add_argument("spec")
    p.add_argument("--out", required=True, help="knowledge base CSV to write")

    p = sub.add_parser("replay", help="re-run the command recorded in a run.json manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="output location replacing the recorded one")
    return parser


def _manifest_dir(args) -> Path:
    return Path(args.out).parent if args.command == "synth" else Path(args.out)


def _input_paths(args) -> list[str]:
    if args.command == "synth":
        return [args.spec]
    paths = [args.kb]
    if getattr(args, "importance", None):
        paths.append(args.importance)
    return paths


def write_manifest(args, argv, outputs) -> Path:
    space_files = []
    space_dir = args.space_dir or os.environ.get("HYPERIMP_SPACE_DIR")
    if space_dir:
        space_files = sorted(str(p) for p in Path(space_dir).glob("*.json"))
    params = {k: v for k, v in vars(args).items() if k not in ("command",)}
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "inputs": {p: _sha256(p) for p in _input_paths(args) if Path(p).exists()},
        "space_files": space_files,
        "seed": args.seed,
        "parameters": params,
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    path = _manifest_dir(args) / "run.json"
    _write_json(path, manifest)
    return path


def _replay_argv(manifest_path: str, out: str | None) -> tuple[list[str], str]:
    """Recorded argv (with ``--out`` swapped in) and the directory it ran from."""
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    argv = list(manifest["argv"])
    cwd = manifest.get("cwd") or os.getcwd()
    for path, digest in manifest.get("inputs", {}).items():
        full = Path(cwd, path)
        if full.exists() and _sha256(full) != digest:
            print(f"warning: input {path} changed since the manifest was written",
                  file=sys.stderr)
    if out is not None:
        out = os.path.abspath(out)
        if "--out" in argv:
            argv[argv.index("--out") + 1] = out
        else:
            argv += ["--out", out]
    return argv, cwd


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        try:
            argv, cwd = _replay_argv(args.manifest, args.out)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot replay {args.manifest}: {exc}", file=sys.stderr)
            return 2
        here = os.getcwd()
        os.chdir(cwd)
        try:
            return main(argv)
        finally:
            os.chdir(here)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        outputs = HANDLERS[args.command](args)
    except KnowledgeBaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for msg in exc.diagnostics:
            print(f"  {msg}", file=sys.stderr)
        return 2
    except (CLIError, SpaceError, SynthSpecError, ImportanceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_manifest(args, argv, outputs)
    return 0


if __name__ == "__main__":
    sys.exit(main())

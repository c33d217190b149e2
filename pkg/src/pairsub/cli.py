"""Command-line interface: ``pairsub <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 infeasible instance. ``PAIRSUB_RUN_DIR`` overrides where the sharded
engine keeps its collections.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .bounding import SamplingPolicy, bound, complete_greedy, residual_utilities, state_from_sets
from .core import (
    MissingUtilityError,
    NeighborGraph,
    ObjectiveParams,
    PairsubError,
    Solution,
    UnknownNodeError,
    UtilityTable,
    monotonicity_offset,
    objective_score,
)
from .dataflow import DataflowError, Engine, bound_pipeline, fan_out_edges, score_pipeline
from .dataflow.records import ADJ, IDS, NODE_VALUE, schema_dtype
from .distributed import DistributedConfig, distributed_select, normalize_scores
from .graph_prep import build_knn, margin_utility, symmetrize
from .greedy import InfeasibleError, greedy_select
from .io import (
    GRAPH_HEADER,
    UTILITY_HEADER,
    DataFormatError,
    iter_tsv,
    read_embeddings,
    read_graph,
    read_predictions,
    read_solution,
    read_utilities,
    write_embeddings,
    write_graph,
    write_predictions,
    write_solution,
    write_utilities,
)
from .synthetic import MixtureConfig, make_dataset

EXIT_CONFIG, EXIT_DATA, EXIT_INFEASIBLE = 2, 3, 4
MODES = ("greedy", "distributed", "bound", "bound+distributed")
RUN_DIR_ENV = "PAIRSUB_RUN_DIR"
BENCH_COLUMNS = ("alpha", "fraction", "k", "partitions", "rounds", "gamma", "adaptive", "mode", "seed",
                 "raw_score", "normalized_score", "wall_time")


class ConfigError(PairsubError, ValueError):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    graph: str | None = None
    utilities: str | None = None
    alpha: float = 0.9
    k: int | None = None
    fraction: float | None = None
    mode: str = "greedy"
    m: int = 1
    r: int = 1
    gamma: float = 0.75
    adaptive: bool = True
    sampling: str = "exact"
    sample_fraction: float = 1.0
    seed: int = 0
    budget_bytes: int = 256 << 20
    engine: str = "in-memory"
    workers: int = 1
    out_dir: str = "."
    monotone_offset: bool = False
    timing: bool = False

    _types = {"alpha": float, "k": int, "fraction": float, "m": int, "r": int, "gamma": float,
              "adaptive": _bool, "sample_fraction": float, "seed": int, "budget_bytes": int,
              "workers": int, "monotone_offset": _bool, "timing": _bool}

    @classmethod
    def from_sources(cls, file_values: dict, overrides: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        merged = {}
        for source in (file_values, overrides):
            for key, value in source.items():
                if value is None:
                    continue
                key = key.replace("-", "_")
                if key not in names:
                    raise ConfigError(f"unknown configuration key {key!r}")
                conv = cls._types.get(key, str)
                try:
                    merged[key] = conv(value)
                except ValueError as exc:
                    raise ConfigError(f"{key}: {exc}") from None
        return cls(**merged)

    def validate(self, need_files=("graph", "utilities")) -> None:
        for name in need_files:
            path = getattr(self, name)
            if path is None:
                raise ConfigError(f"{name} file is required")
            if not Path(path).is_file():
                raise ConfigError(f"{name} file {path} does not exist")
        if (self.k is None) == (self.fraction is None):
            raise ConfigError("give exactly one of k and fraction")
        if self.fraction is not None and not 0 < self.fraction <= 1:
            raise ConfigError("fraction must lie in (0, 1]")
        if self.k is not None and self.k < 0:
            raise ConfigError("k must be non-negative")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}")
        if self.engine not in ("in-memory", "sharded"):
            raise ConfigError("engine must be in-memory or sharded")
        try:
            self.policy()
            self.distributed()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def resolve_k(self, n: int) -> int:
        if self.k is not None:
            return self.k
        # exact rational ceiling: 0.1 * 20000 must give 2000, not 2001
        return math.ceil(Fraction(repr(self.fraction)) * n)

    def params(self, g: NeighborGraph) -> ObjectiveParams:
        p = ObjectiveParams.balanced(self.alpha)
        return p.with_offset(monotonicity_offset(g, p)) if self.monotone_offset else p

    def policy(self) -> SamplingPolicy:
        return SamplingPolicy(self.sampling, self.sample_fraction, self.seed)

    def distributed(self) -> DistributedConfig:
        return DistributedConfig(m=self.m, r=self.r, gamma=self.gamma, adaptive=self.adaptive,
                                 seed=self.seed, workers=self.workers)


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def load_inputs(cfg: RunConfig) -> tuple[NeighborGraph, UtilityTable]:
    u = read_utilities(cfg.utilities)
    g = read_graph(cfg.graph, nodes=u.ids)
    missing = np.setdiff1d(g.ids, u.ids)
    if len(missing):
        raise MissingUtilityError(int(missing[0]))
    return g, u


@contextmanager
def run_directory(explicit: str | None):
    base = explicit or os.environ.get(RUN_DIR_ENV)
    if base:
        Path(base).mkdir(parents=True, exist_ok=True)
        yield Path(base)
        return
    tmp = tempfile.mkdtemp(prefix="pairsub-")
    try:
        yield Path(tmp)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _sharded_from_tsv(engine: Engine, path, header, kinds, schema, name):
    """Stream a TSV file into a collection without holding it in memory."""
    w = engine.writer(engine.temp_name(name + ".raw"), schema, False)
    dtype = schema_dtype(schema)
    for cols in iter_tsv(path, header, kinds, chunk=engine.chunk_records(dtype, 0.1)):
        rec = np.empty(len(cols[0]), dtype=dtype)
        for field_name, col in zip(dtype.names, cols):
            rec[field_name] = col
        w.write(rec)
    raw = engine.register(w.close())
    return engine.external_sort(raw, name, stage=f"ingest.{name}", drop_input=True)


def _sharded_ids(engine: Engine, ids, name):
    arr = np.empty(len(ids), dtype=schema_dtype(IDS))
    arr["id"] = np.sort(ids)
    return engine.from_array(name, IDS, arr, sorted=True)


# -- commands ----------------------------------------------------------------------

def cmd_knn_build(args) -> int:
    emb = read_embeddings(args.embeddings)
    if not 1 <= args.k_nn < len(emb):
        raise ConfigError(f"k_nn must lie in [1, {len(emb) - 1}]")
    g = symmetrize(build_knn(emb, args.k_nn, workers=args.workers))
    write_graph(args.out, g)
    print(f"nodes={len(g)} edges={g.edge_count} mean_degree={g.degrees.mean():.3f}")
    return 0


def cmd_utilities(args) -> int:
    u = margin_utility(read_predictions(args.predictions), center=not args.no_center)
    write_utilities(args.out, u)
    return 0


def cmd_synth(args) -> int:
    cfg = MixtureConfig(n=args.n, dim=args.dim, clusters=args.clusters, seed=args.seed)
    data = make_dataset(cfg, k_nn=args.k_nn, workers=args.workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_embeddings(out / "embeddings.npz", data.embeddings)
    write_predictions(out / "predictions.npz", data.predictions)
    write_graph(out / "graph.tsv", data.graph)
    write_utilities(out / "utilities.tsv", data.utilities)
    print(f"wrote {out}: nodes={len(data.graph)} edges={data.graph.edge_count}")
    return 0


def _bound_state(cfg: RunConfig, g, u, p, k, engine_dir):
    if cfg.engine == "in-memory":
        return bound(None, g, u, p, k, cfg.policy())
    with run_directory(engine_dir) as run:
        eng = Engine(run, cfg.budget_bytes, workers=cfg.workers)
        graph = _sharded_from_tsv(eng, cfg.graph, GRAPH_HEADER, "iif", ADJ, "graph")
        utils = _sharded_from_tsv(eng, cfg.utilities, UTILITY_HEADER, "if", NODE_VALUE, "utilities")
        ground = _sharded_ids(eng, u.ids, "ground")
        res = bound_pipeline(eng, ground, graph, utils, p, k, cfg.policy())
        ids = [c.read_all()["id"] for c in (res.grown, res.remaining, res.excluded)]
        st = state_from_sets(g, k, *ids)
        return replace(st, grow_rounds=res.grow_rounds, shrink_rounds=res.shrink_rounds)


def select(cfg: RunConfig, g: NeighborGraph, u: UtilityTable, run_dir=None):
    """Dispatch on ``cfg.mode``; returns the solution and a report dict."""
    p = cfg.params(g)
    k = cfg.resolve_k(len(u))
    if k > len(u):
        raise InfeasibleError(f"k={k} exceeds ground set size {len(u)}")
    report = {"mode": cfg.mode, "n": len(u), "k": k, "alpha": cfg.alpha, "beta": p.beta,
              "delta_offset": p.delta_offset, "seed": cfg.seed}
    telemetry = []
    if cfg.mode == "greedy":
        sol = greedy_select(None, g, u, p, k)
    elif cfg.mode == "distributed":
        sol = distributed_select(None, g, u, p, k, cfg.distributed(), telemetry)
    else:
        st = _bound_state(cfg, g, u, p, k, run_dir)
        report.update(grown=len(st.grown), excluded=len(st.excluded), remaining=len(st.remaining),
                      grow_rounds=st.grow_rounds, shrink_rounds=st.shrink_rounds)
        if cfg.mode == "bound" or st.residual_k == 0:
            sol = complete_greedy(st, g, u, p)
        else:
            rest = distributed_select(st.remaining, g, residual_utilities(st, g, u, p), p, st.residual_k,
                                      cfg.distributed(), telemetry)
            sol = Solution(np.concatenate([st.grown, rest.members]))
    report["score"] = objective_score(sol, g, u, replace(p, delta_offset=0.0))
    if p.delta_offset:
        report["score_with_offset"] = objective_score(sol, g, u, p)
    return sol, report, telemetry


def cmd_select(args, cfg: RunConfig) -> int:
    cfg.validate()
    g, u = load_inputs(cfg)
    sol, report, telemetry = select(cfg, g, u, args.run_dir)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_solution(out / "solution.txt", sol)
    with open(out / "report.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for key, value in report.items():
            fh.write(f"{key}\t{value!r}\n" if isinstance(value, float) else f"{key}\t{value}\n")
    if telemetry:
        with open(out / "rounds.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "n_round", "m_round", "union_size", "wall_time", "score"])
            for t in telemetry:
                w.writerow([t.round, t.n_round, t.m_round, t.union_size,
                            repr(t.wall_time) if cfg.timing else "", repr(t.score)])
    print(repr(report["score"]))
    return 0


def cmd_score(args, cfg: RunConfig) -> int:
    for name in ("graph", "utilities"):
        if getattr(cfg, name) is None or not Path(getattr(cfg, name)).is_file():
            raise ConfigError(f"{name} file is required and must exist")
    if not Path(args.solution).is_file():
        raise ConfigError(f"solution file {args.solution} does not exist")
    sol = read_solution(args.solution)
    if cfg.engine == "in-memory":
        g, u = load_inputs(cfg)
        score = objective_score(sol, g, u, cfg.params(g))
    else:
        if cfg.monotone_offset:
            raise ConfigError("the sharded engine scores without the monotonicity offset")
        p = ObjectiveParams.balanced(cfg.alpha)
        with run_directory(args.run_dir) as run:
            eng = Engine(run, cfg.budget_bytes, workers=cfg.workers)
            graph = _sharded_from_tsv(eng, cfg.graph, GRAPH_HEADER, "iif", ADJ, "graph")
            utils = _sharded_from_tsv(eng, cfg.utilities, UTILITY_HEADER, "if", NODE_VALUE, "utilities")
            members = _sharded_ids(eng, sol.members, "solution")
            fanned = fan_out_edges(eng, graph, "fanned")
            try:
                score = score_pipeline(eng, fanned, members, utils, p)
            except MissingUtilityError as exc:
                raise UnknownNodeError(exc.node, "utilities") from None
    print(repr(score))
    return 0


def _parse_list(text, conv):
    return [conv(x) for x in str(text).split(",") if x.strip()]


def bench_rows(g, u, alphas, fractions, partitions, rounds, gammas, adaptive_modes, seeds,
               worst_case=False, workers=1, timing=True):
    """Run the grid and yield CSV rows (dicts) with normalized scores per
    (alpha, fraction) group; centralized greedy anchors 100."""
    for alpha in alphas:
        p = ObjectiveParams.balanced(alpha)
        for fraction in fractions:
            k = math.ceil(Fraction(repr(fraction)) * len(u))
            t0 = time.perf_counter()
            central = greedy_select(None, g, u, p, k)
            central_score = objective_score(central, g, u, p)
            rows = [dict(partitions=1, rounds=1, gamma="", adaptive="", mode="central", seed="",
                         raw_score=central_score, wall_time=time.perf_counter() - t0)]
            for seed in seeds:
                for m in partitions:
                    for r in rounds:
                        for gamma in gammas:
                            for adaptive in adaptive_modes:
                                variants = [("random", None)] + ([("worst-case", central)] if worst_case else [])
                                for mode, planted in variants:
                                    cfg = DistributedConfig(m=m, r=r, gamma=gamma, adaptive=adaptive, seed=seed,
                                                            adversarial_first_round=planted, workers=workers)
                                    t0 = time.perf_counter()
                                    sol = distributed_select(None, g, u, p, k, cfg)
                                    rows.append(dict(partitions=m, rounds=r, gamma=gamma, adaptive=adaptive,
                                                     mode=mode, seed=seed, raw_score=objective_score(sol, g, u, p),
                                                     wall_time=time.perf_counter() - t0))
            # worst-case rows are scored against the anchors of the random grid
            anchor = [row["raw_score"] for row in rows if row["mode"] != "worst-case"]
            worst = min(anchor + [central_score])
            normalized = normalize_scores(anchor, central_score)
            it = iter(normalized)
            for row in rows:
                if row["mode"] == "worst-case":
                    span = central_score - worst
                    row["normalized_score"] = 100.0 if span == 0 else 100.0 * (row["raw_score"] - worst) / span
                else:
                    row["normalized_score"] = next(it)
                row.update(alpha=alpha, fraction=fraction, k=k)
                if not timing:
                    row["wall_time"] = ""
                yield row


def write_bench_csv(path_or_fh, rows) -> None:
    own = isinstance(path_or_fh, (str, Path))
    fh = open(path_or_fh, "w", newline="") if own else path_or_fh
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in BENCH_COLUMNS)])
    finally:
        if own:
            fh.close()


def read_bench_csv(path) -> list[dict]:
    conv = {"alpha": float, "fraction": float, "k": int, "partitions": int, "rounds": int,
            "raw_score": float, "normalized_score": float}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({key: (conv[key](v) if key in conv and v != "" else v) for key, v in row.items()})
    return out


def cmd_bench(args, cfg: RunConfig) -> int:
    cfg = replace(cfg, k=None, fraction=cfg.fraction or 0.1)
    for name in ("graph", "utilities"):
        if getattr(cfg, name) is None or not Path(getattr(cfg, name)).is_file():
            raise ConfigError(f"{name} file is required and must exist")
    g, u = load_inputs(cfg)
    adaptive = {"on": [True], "off": [False], "both": [True, False]}[args.adaptive]
    try:
        rows = bench_rows(g, u, _parse_list(args.alphas or cfg.alpha, float),
                          _parse_list(args.fractions or cfg.fraction, float),
                          _parse_list(args.partitions, int), _parse_list(args.rounds, int),
                          _parse_list(args.gammas or cfg.gamma, float), adaptive,
                          _parse_list(args.seeds, int), worst_case=args.worst_case, workers=cfg.workers,
                          timing=not args.no_timing)
        if args.out == "-":
            write_bench_csv(sys.stdout, rows)
        else:
            write_bench_csv(args.out, rows)
    except ValueError as exc:
        if isinstance(exc, PairsubError):
            raise
        raise ConfigError(str(exc)) from None
    return 0


# -- argument parsing ------------------------------------------------------------

def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="file of 'key = value' lines; flags override it")
    p.add_argument("--graph")
    p.add_argument("--utilities")
    p.add_argument("--alpha", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--engine", choices=("in-memory", "sharded"))
    p.add_argument("--budget-bytes", type=int)
    p.add_argument("--run-dir", help=f"sharded engine directory (default ${RUN_DIR_ENV} or a temp dir)")
    p.add_argument("--monotone-offset", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairsub", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("knn-build", help="symmetrized kNN graph from embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k-nn", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("utilities", help="centered margin utilities from class probabilities")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-center", action="store_true")

    p = sub.add_parser("synth", help="write a synthetic Gaussian-mixture dataset")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--k-nn", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("select", help="select a subset")
    _add_run_options(p)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--m", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--adaptive", type=_bool)
    p.add_argument("--sampling", choices=("exact", "uniform", "weighted"))
    p.add_argument("--sample-fraction", type=float)
    p.add_argument("--out-dir")
    p.add_argument("--timing", action="store_const", const=True, help="record wall times in rounds.csv")

    p = sub.add_parser("score", help="objective value of a solution file")
    _add_run_options(p)
    p.add_argument("--solution", required=True)

    p = sub.add_parser("bench", help="distributed greedy grid as CSV")
    _add_run_options(p)
    p.add_argument("--alphas")
    p.add_argument("--fractions")
    p.add_argument("--partitions", default="1,2,4,8")
    p.add_argument("--rounds", default="1,2,4,8")
    p.add_argument("--gammas")
    p.add_argument("--adaptive", choices=("on", "off", "both"), default="both")
    p.add_argument("--seeds", default="0")
    p.add_argument("--worst-case", action="store_true", help="add rows with the centralized solution in one partition")
    p.add_argument("--no-timing", action="store_true", help="leave wall_time empty for byte-stable output")
    p.add_argument("--out", default="-")
    return parser


_RUN_KEYS = {f.name for f in fields(RunConfig)}


def _run_config(args) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {key: value for key, value in vars(args).items() if key in _RUN_KEYS}
    if args.command == "bench":
        # bench takes its grid from list flags; the run-config copies are ignored
        for key in ("adaptive", "timing"):
            overrides.pop(key, None)
    return RunConfig.from_sources(file_values, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "knn-build":
            return cmd_knn_build(args)
        if args.command == "utilities":
            return cmd_utilities(args)
        if args.command == "synth":
            return cmd_synth(args)
        cfg = _run_config(args)
        return {"select": cmd_select, "score": cmd_score, "bench": cmd_bench}[args.command](args, cfg)
    except ConfigError as exc:
        print(f"pairsub: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"pairsub: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DataFormatError, DataflowError, PairsubError, KeyError) as exc:
        print(f"pairsub: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Experiment runner.

Subcommands:
  run      one experiment from an INI config; writes metrics.csv,
           resilience.csv, roundlog.csv and optional per-round vector dumps
  grid     byzantine-fraction x defense matrix of experiments
  compare  final-round precision table across finished run directories
  bench    numba vs numpy timings for the hot kernels

All randomness flows from the config seeds; rerunning a config reproduces
every output file byte for byte.
"""
from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from .attack import AttackConfig, AttackKind
from .backend import NUMBA_AVAILABLE, backend_name
from .defense import DefenseConfig, DefenseKind
from .fed import FederationConfig, RoundData, run_federation, summarize_round
from .fism import ClientDataset, FismModel, LossConfig
from .fmf import FmfModel
from .metrics import precision_recall
from .optim import OptimConfig, OptimizerKind
from .params import to_csv_row
from .resilience import ResilienceChecker, resilience_report

WORKERS_ENV = "FEDREC_WORKERS"

# Full-scale defaults suit real interaction logs; the desk profile
# shrinks the model and samples half the clients per round so a whole
# study grid fits on one core.
FULL_DEFAULTS = {"dim": 64, "client_ratio": 0.01}
DESK_DEFAULTS = {"dim": 16, "client_ratio": 0.5}


@dataclass
class ExperimentConfig:
    # dataset
    source: str = "synthetic"
    path: str = ""
    file_format: str = "auto"
    users: int = 90
    items: int = 200
    latent_dim: int = 2
    density: float = 0.25
    popularity: float = 24.0
    data_seed: int = 44
    split_ratio: float = 0.8
    # model
    model: str = "fism"
    dim: int = 64
    # loss / optim / federation
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    fed: FederationConfig = field(default_factory=lambda: FederationConfig(1))
    # evaluation / output
    k_max: int = 5
    eval_every: int = 1
    dump_vectors: bool = False


def _enum_value(enum_cls, raw: str, what: str):
    try:
        return enum_cls(raw.strip().lower())
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise ValueError(f"invalid {what} {raw!r}; expected one of: {allowed}")


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ValueError(f"config file not found: {path}")

    profile = parser.get("experiment", "profile", fallback="full").lower()
    if profile not in ("full", "desk"):
        raise ValueError(f"invalid profile {profile!r}; expected full or desk")
    base = DESK_DEFAULTS if profile == "desk" else FULL_DEFAULTS

    ds = parser["dataset"] if parser.has_section("dataset") else {}

    def get(section, key, cast, default):
        if not parser.has_section(section) or key not in parser[section]:
            return default
        raw = parser.get(section, key)
        try:
            if cast is bool:
                return parser.getboolean(section, key)
            return cast(raw)
        except ValueError:
            raise ValueError(f"invalid value for [{section}] {key}: {raw!r}")

    cfg = ExperimentConfig()
    cfg.source = get("dataset", "source", str, "synthetic").lower()
    if cfg.source not in ("synthetic", "file"):
        raise ValueError(f"invalid dataset source {cfg.source!r}")
    cfg.path = get("dataset", "path", str, "")
    if cfg.source == "file" and not cfg.path:
        raise ValueError("dataset source 'file' requires a path")
    cfg.file_format = get("dataset", "format", str, "auto")
    cfg.users = get("dataset", "users", int, cfg.users)
    cfg.items = get("dataset", "items", int, cfg.items)
    cfg.latent_dim = get("dataset", "latent_dim", int, cfg.latent_dim)
    cfg.density = get("dataset", "density", float, cfg.density)
    cfg.popularity = get("dataset", "popularity", float, cfg.popularity)
    cfg.data_seed = get("dataset", "data_seed", int, cfg.data_seed)
    cfg.split_ratio = get("dataset", "split_ratio", float, cfg.split_ratio)

    cfg.model = get("model", "kind", str, "fism").lower()
    if cfg.model not in ("fism", "fmf"):
        raise ValueError(f"invalid model kind {cfg.model!r}; expected fism or fmf")
    cfg.dim = get("model", "dim", int, base["dim"])

    cfg.loss = LossConfig(
        gamma=get("loss", "gamma", float, 1.0),
        lam=get("loss", "lambda", float, 1e-4),
        negatives_per_positive=get("loss", "negatives_per_positive", int, 4),
    )
    cfg.optim = OptimConfig(
        eta=get("optim", "eta", float, 1e-3),
        beta1=get("optim", "beta1", float, 0.9),
        beta2=get("optim", "beta2", float, 0.999),
        beta3=get("optim", "beta3", float, 0.9),
        beta4=get("optim", "beta4", float, 0.9),
        epsilon=get("optim", "epsilon", float, 1e-8),
    )

    attack_kind = _enum_value(AttackKind, get("federation", "attack", str, "none"),
                              "attack")
    attack = AttackConfig(kind=attack_kind,
                          sigma=get("federation", "noise_sigma", float, 0.1))
    defense_kind = _enum_value(DefenseKind,
                               get("federation", "defense", str, "none"),
                               "defense")
    f_raw = get("federation", "krum_f", str, "auto")
    keep_raw = get("federation", "krum_keep", str, "auto")
    defense = DefenseConfig(
        kind=defense_kind,
        f=None if str(f_raw).strip() == "auto" else int(f_raw),
        keep=None if str(keep_raw).strip() == "auto" else int(keep_raw),
        max_iters=get("federation", "rfa_iters", int, 100),
        smoothing=get("federation", "rfa_smoothing", float, 1e-6),
        beta=get("federation", "trim_beta", float, 0.1),
        coordinate_trim=get("federation", "coordinate_trim", bool, False),
    )
    optimizer = _enum_value(OptimizerKind,
                            get("optim", "kind", str, "adam"), "optimizer")
    cfg.fed = FederationConfig(
        total_clients=cfg.users,
        byzantine_fraction=get("federation", "byzantine_fraction", float, 0.0),
        client_ratio=get("federation", "client_ratio", float,
                         base["client_ratio"]),
        rounds=get("federation", "rounds", int, 50),
        optimizer=optimizer,
        attack=attack,
        defense=defense,
        seed=get("federation", "seed", int, 0),
        probe_clients=get("federation", "probe_clients", int, 5),
        warmup=get("federation", "warmup", int, 3),
    )

    cfg.k_max = get("eval", "k_max", int, 5)
    cfg.eval_every = get("eval", "every", int, 1)
    cfg.dump_vectors = get("output", "dump_vectors", bool, False)
    return cfg


def build_datasets(cfg: ExperimentConfig):
    """Load or synthesize, split, and wrap per-client training views."""
    if cfg.source == "synthetic":
        log = data_mod.synthesize(cfg.users, cfg.items, cfg.latent_dim,
                                  cfg.density, cfg.data_seed, cfg.popularity)
    else:
        fmt = cfg.file_format
        if fmt == "auto":
            fmt = data_mod.detect_format(cfg.path)
        log = data_mod.ingest(cfg.path, fmt)
    split = data_mod.split(log, cfg.split_ratio, cfg.data_seed)
    datasets = {}
    all_items = np.arange(log.num_items, dtype=np.int64)
    for u in range(log.num_users):
        train = split.train[u]
        pool = np.setdiff1d(all_items, train)
        datasets[u] = ClientDataset(u, train, pool, int(train.size))
    return log, split, datasets


def build_model(cfg: ExperimentConfig, log, datasets):
    if cfg.model == "fmf":
        return FmfModel(log.num_users, log.num_items, cfg.dim, datasets,
                        cfg.loss)
    return FismModel(log.num_items, cfg.dim, datasets, cfg.loss)


class _MetricsObserver:
    def __init__(self, model, split, k_max: int, every: int):
        self.model = model
        self.split = split
        self.k_max = k_max
        self.every = every
        self.rows = []           # (round, k, precision, recall)
        self.last_report = None

    def __call__(self, rdata: RoundData):
        if rdata.round % self.every and rdata.round != 0:
            return
        theta = rdata.state_after.theta_bar
        rankings = {u: self.model.rank(theta, u)
                    for u in self.split.eval_users()}
        report = precision_recall(rankings, self.split.test, self.k_max)
        self.last_report = report
        for k in range(1, self.k_max + 1):
            self.rows.append((rdata.round, k, report.precision_at[k],
                              report.recall_at[k]))


class _RoundLogObserver:
    def __init__(self):
        self.rows = []

    def __call__(self, rdata: RoundData):
        self.rows.append(summarize_round(rdata))


class _VectorDumpObserver:
    """Round-stamped parameter/gradient matrices for external projection."""

    def __init__(self, out_dir: Path, byz_ids):
        self.dir = out_dir / "vectors"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.byz = byz_ids

    def __call__(self, rdata: RoundData):
        for name, pick in (("params", lambda c: rdata.packets[c].theta),
                           ("gradients", lambda c: rdata.recovered[c])):
            path = self.dir / f"round{rdata.round:04d}_{name}.csv"
            with open(path, "w", encoding="utf-8") as fh:
                width = rdata.state_after.theta_bar.size
                header = ",".join(f"x{i}" for i in range(width))
                fh.write(f"client_id,byzantine,{header}\n")
                for c in rdata.sampled:
                    vec = pick(c)
                    if vec is None:
                        continue
                    fh.write(f"{c},{int(c in self.byz)},{to_csv_row(vec)}\n")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_artifacts(out_dir: Path, metrics_rows, round_logs, checker,
                    total_rounds: int):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.csv", "w", encoding="utf-8") as fh:
        fh.write("round,k,precision,recall\n")
        for r, k, p, rec in metrics_rows:
            fh.write(f"{r},{k},{_fmt(p)},{_fmt(rec)}\n")
    with open(out_dir / "roundlog.csv", "w", encoding="utf-8") as fh:
        fh.write("round,selected_ids,byzantine_selected,"
                 "mean_benign_byzantine_gradient_distance,"
                 "byzantine_sampled,verify_failures,"
                 "theta_centroid_distance,gradient_centroid_distance\n")
        for rl in round_logs:
            ids = ";".join(str(c) for c in rl.selected)
            fh.write(f"{rl.round},{ids},{rl.byzantine_selected},"
                     f"{_fmt(rl.mean_cross_grad_dist)},{rl.byzantine_sampled},"
                     f"{rl.verify_failures},{_fmt(rl.theta_centroid_dist)},"
                     f"{_fmt(rl.grad_centroid_dist)}\n")
    ledger = checker.ledger
    with open(out_dir / "resilience.csv", "w", encoding="utf-8") as fh:
        fh.write("round,sum_g,sum_m,sum_v,sum_theta,violations\n")
        for row in ledger.history:
            fh.write(f"{row.round},{_fmt(row.sum_g)},{_fmt(row.sum_m)},"
                     f"{_fmt(row.sum_v)},{_fmt(row.sum_theta)},"
                     f"{row.violations}\n")
    report = resilience_report(ledger, total_rounds)
    with open(out_dir / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(f"rounds={total_rounds}\n")
        fh.write(f"resilience_checkpoints={report.checkpoints}\n")
        for q, vals in report.sums.items():
            fh.write(f"{q}={[_fmt(v) for v in vals]}\n")
        fh.write(f"violations={report.violations}\n")
        for note in ledger.notices[:20]:
            fh.write(f"notice: {note}\n")


def run_experiment(cfg: ExperimentConfig, out_dir: Path, quiet: bool = False):
    """Execute one configured run; returns the resilience checker."""
    log, split, datasets = build_datasets(cfg)
    model = build_model(cfg, log, datasets)
    cfg.fed.total_clients = log.num_users
    checker = ResilienceChecker(cfg.optim, cfg.fed.optimizer,
                                warmup=cfg.fed.warmup)
    metrics_obs = _MetricsObserver(model, split, cfg.k_max, cfg.eval_every)
    observers = [checker, metrics_obs]
    if cfg.dump_vectors:
        observers.append(_VectorDumpObserver(out_dir, cfg.fed.byzantine_ids))

    start = time.time()
    result = run_federation(model, cfg.fed, cfg.optim, observers=observers)
    if not quiet:
        last = metrics_obs.last_report
        p1 = last.precision_at[1] if last else float("nan")
        print(f"[{backend_name()}] {cfg.fed.rounds} rounds in "
              f"{time.time() - start:.1f}s; final P@1={p1:.4f}; "
              f"resilience violations={len(checker.ledger.violations)}")
    write_artifacts(out_dir, metrics_obs.rows, result.round_logs, checker,
                    cfg.fed.rounds)
    return checker


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out) if args.out else Path("results")
    checker = run_experiment(cfg, out_dir, quiet=args.quiet)
    violations = checker.ledger.violations
    if violations:
        for v in violations[:10]:
            print(f"resilience violation: {v}", file=sys.stderr)
        if not args.allow_violations:
            return 3
        print(f"{len(violations)} resilience violations downgraded to "
              "warnings", file=sys.stderr)
    return 0


_GRID_DEFENSES = ("gradient_krum", "param_krum", "rfa", "trimmed_norm")


def _grid_job(payload):
    cfg_path, out_dir, byz, defense_name, quiet = payload
    cfg = load_config(cfg_path)
    cfg.fed.byzantine_fraction = byz
    cfg.fed.defense.kind = DefenseKind(defense_name)
    if byz > 0 and cfg.fed.attack.kind is AttackKind.NONE:
        cfg.fed.attack = AttackConfig(AttackKind.GRADIENT_ASCENT)
    checker = run_experiment(cfg, Path(out_dir), quiet=quiet)
    return out_dir, len(checker.ledger.violations)


def _cmd_grid(args) -> int:
    try:
        load_config(args.config)  # fail fast on bad config
        fractions = [float(x) for x in args.byzantine.split(",") if x.strip()]
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    defenses = (_GRID_DEFENSES if args.defense == "all"
                else tuple(args.defense.split(",")))
    for d in defenses:
        if d not in [k.value for k in DefenseKind]:
            print(f"config error: unknown defense {d!r}", file=sys.stderr)
            return 2
    root = Path(args.out)
    jobs = []
    for byz in fractions:
        for d in defenses:
            out = root / f"byz{int(round(100 * byz)):02d}_{d}"
            jobs.append((args.config, str(out), byz, d, True))
    workers = int(os.environ.get(WORKERS_ENV, "0")) or min(len(jobs),
                                                           os.cpu_count() or 1)
    print(f"grid: {len(jobs)} experiments on {workers} workers")
    if workers == 1:
        results = [_grid_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_grid_job, jobs))
    for out, violations in results:
        print(f"  {out}: done ({violations} resilience violations)")
    return 0


def _final_precision(run_dir: Path) -> dict[int, float]:
    path = run_dir / "metrics.csv"
    if not path.exists():
        raise FileNotFoundError(f"no metrics.csv in {run_dir}")
    rows = path.read_text(encoding="utf-8").strip().splitlines()[1:]
    if not rows:
        raise ValueError(f"empty metrics.csv in {run_dir}")
    last_round = max(int(r.split(",")[0]) for r in rows)
    out = {}
    for r in rows:
        rnd, k, p, _ = r.split(",")
        if int(rnd) == last_round:
            out[int(k)] = float(p)
    return out


def _cmd_compare(args) -> int:
    tables = {}
    for d in args.dirs:
        try:
            tables[d] = _final_precision(Path(d))
        except (FileNotFoundError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    ks = sorted(next(iter(tables.values())))
    header = "run" + "".join(f"  P@{k}" for k in ks) + "  improvement%"
    print(header)
    for d, vals in tables.items():
        others = [tables[o][1] for o in tables if o != d]
        best_other = max(others) if others else float("nan")
        if others and best_other > 0:
            improvement = 100.0 * (vals[1] - best_other) / best_other
        elif others:
            improvement = 0.0 if vals[1] == best_other else math.inf
        else:
            improvement = float("nan")
        cells = "".join(f"  {vals[k]:.4f}" for k in ks)
        print(f"{d}{cells}  {improvement:+.1f}%")
    return 0


def _cmd_bench(args) -> int:
    from . import kernels

    rng = np.random.default_rng(0)
    num_items, dim = args.items, args.dim
    p = rng.standard_normal((num_items, dim))
    q = rng.standard_normal((num_items, dim))
    positives = np.sort(rng.choice(num_items, size=args.positives,
                                   replace=False)).astype(np.int64)
    pool = np.setdiff1d(np.arange(num_items, dtype=np.int64), positives)
    negatives = rng.choice(pool, size=(args.positives, args.negatives),
                           replace=True).astype(np.int64)
    vectors = rng.standard_normal((args.clients, 2 * num_items * dim))

    def time_fn(fn, *fargs, repeats=args.repeats):
        fn(*fargs)  # warm up (JIT compile)
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(*fargs)
            best = min(best, time.perf_counter() - t0)
        return best

    rows = []
    gp, gq = np.zeros_like(p), np.zeros_like(q)
    rows.append(("pair_loss", time_fn(kernels.pair_loss_np, p, q, positives,
                                      negatives, 1.0), "numpy"))
    rows.append(("pair_loss_grad",
                 time_fn(lambda: kernels.pair_loss_grad_np(
                     p, q, positives, negatives, 1.0, gp, gq)), "numpy"))
    rows.append(("pairwise_sq_dists",
                 time_fn(kernels.pairwise_sq_dists_np, vectors), "numpy"))
    if NUMBA_AVAILABLE:
        rows.append(("pair_loss", time_fn(kernels.pair_loss_nb, p, q,
                                          positives, negatives, 1.0), "numba"))
        rows.append(("pair_loss_grad",
                     time_fn(lambda: kernels.pair_loss_grad_nb(
                         p, q, positives, negatives, 1.0, gp, gq)), "numba"))
        rows.append(("pairwise_sq_dists",
                     time_fn(kernels.pairwise_sq_dists_nb, vectors), "numba"))
    else:
        print("numba not available; timing the numpy path only")
    print(f"workload: {num_items} items, dim {dim}, {args.positives} "
          f"positives x {args.negatives} negatives, {args.clients} client "
          "vectors")
    print(f"{'kernel':<20}{'backend':<8}{'best (ms)':>12}")
    by_kernel = {}
    for name, t, backend in rows:
        print(f"{name:<20}{backend:<8}{1e3 * t:>12.3f}")
        by_kernel.setdefault(name, {})[backend] = t
    for name, t in by_kernel.items():
        if "numba" in t and "numpy" in t:
            print(f"{name}: numba speedup {t['numpy'] / t['numba']:.1f}x")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedrec",
        description="Byzantine-robust federated recommendation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--allow-violations", action="store_true",
                       help="downgrade resilience assertion failures to "
                            "warnings (attack-study runs)")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_grid = sub.add_parser("grid", help="byzantine x defense matrix")
    p_grid.add_argument("config")
    p_grid.add_argument("--byzantine", default="0.2,0.3,0.4")
    p_grid.add_argument("--defense", default="all",
                        help="'all' or comma list of defense names")
    p_grid.add_argument("--out", default="grid_results")
    p_grid.set_defaults(func=_cmd_grid)

    p_cmp = sub.add_parser("compare", help="final-round precision table")
    p_cmp.add_argument("dirs", nargs="+")
    p_cmp.set_defaults(func=_cmd_compare)

    p_bench = sub.add_parser("bench", help="kernel backend benchmark")
    p_bench.add_argument("--items", type=int, default=200)
    p_bench.add_argument("--dim", type=int, default=16)
    p_bench.add_argument("--positives", type=int, default=40)
    p_bench.add_argument("--negatives", type=int, default=32)
    p_bench.add_argument("--clients", type=int, default=45)
    p_bench.add_argument("--repeats", type=int, default=5)
    p_bench.set_defaults(func=_cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

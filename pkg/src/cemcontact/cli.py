"""Command line entry point: ``cemcontact {generate-medium,run,sweep,dump-basis}``.

Configuration comes from a TOML file (sections ``grid``, ``boundary``,
``medium``, ``problem``, ``solver``, ``multiscale``, ``output``), optionally
a bundled preset, and flag overrides, applied in that order.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .auxspace import build_auxiliary
from .cembasis import DofRestriction, build_basis_column, global_basis_column
from .contactsolve import CemVariant, ContactState, FineVariant, compute_multiplier, kkt_report, run
from .errors import CemContactError, ConfigError, NonTermination, SolverFailure
from .grid import DEFAULT_BOUNDARY, build_hierarchy, decompose_boundary
from .medium import STYLES, WEIGHT_MODES, generate_medium, load_medium, save_medium
from .metrics import build_report, write_csv
from .oracle import check_oracle_size, oracle_active_set, qp_from_problem, solve_projected_gs
from .problem import build_problem

log = logging.getLogger("cemcontact")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_NONTERM = 0, 2, 3, 4
VARIANTS = ("fine", "cem", "oracle")
SWEEP_PARAMS = {
    "oversample": ("multiscale", "oversample", int),
    "eigvecs": ("multiscale", "eigvecs", int),
    "kappa_ratio": ("medium", "kappa_ratio", float),
    "n_coarse": ("grid", "n_coarse", int),
    "c": ("solver", "c", float),
}

DEFAULTS = {
    "grid": {"nx_fine": 200, "n_coarse": 20},
    "boundary": dict(DEFAULT_BOUNDARY),
    "medium": {"style": "A", "kappa_ratio": 1e3, "seed": 0, "file": ""},
    "problem": {"source": "f1", "neumann": "0"},
    "solver": {"c": 10.0, "max_iter": 20, "tol": 1e-10, "variants": ["fine", "cem"]},
    "multiscale": {"eigvecs": 4, "oversample": 4, "weight": "simplified", "threads": 1, "incremental": True},
    "output": {"dir": "out"},
}


def _toml_load(fh):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    return tomllib.load(fh)


@dataclass
class ExperimentConfig:
    """Resolved configuration; ``data`` mirrors the TOML sections."""

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __getitem__(self, section):
        return self.data[section]

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        data = copy.deepcopy(DEFAULTS)
        for section, values in raw.items():
            if section not in data:
                raise ConfigError(f"unknown config section [{section}]")
            if not isinstance(values, dict):
                raise ConfigError(f"[{section}] must be a table")
            if section == "boundary":
                data[section] = dict(values)
                continue
            for key, val in values.items():
                if key not in data[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                data[section][key] = val
        cfg = cls(data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                raw = _toml_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(raw)

    def set(self, section, key, value):
        self.data[section][key] = value

    def validate(self):
        d = self.data
        g, med, sol, ms = d["grid"], d["medium"], d["solver"], d["multiscale"]
        for key in ("nx_fine", "n_coarse"):
            if not isinstance(g[key], int) or isinstance(g[key], bool):
                raise ConfigError(f"grid.{key} must be an integer, got {g[key]!r}")
        if med["style"] not in STYLES:
            raise ConfigError(f"medium.style must be one of {STYLES}, got {med['style']!r}")
        if not float(med["kappa_ratio"]) >= 1:
            raise ConfigError(f"medium.kappa_ratio must be >= 1, got {med['kappa_ratio']}")
        if not float(sol["c"]) > 0:
            raise ConfigError(f"solver.c must be positive, got {sol['c']}")
        if int(sol["max_iter"]) < 1:
            raise ConfigError(f"solver.max_iter must be >= 1, got {sol['max_iter']}")
        if not 0 < float(sol["tol"]) < 1:
            raise ConfigError(f"solver.tol must lie in (0, 1), got {sol['tol']}")
        variants = sol["variants"]
        if isinstance(variants, str):
            variants = sol["variants"] = [v.strip() for v in variants.split(",") if v.strip()]
        bad = [v for v in variants if v not in VARIANTS]
        if bad or not variants:
            raise ConfigError(f"solver.variants must be a nonempty subset of {VARIANTS}, got {variants}")
        if int(ms["eigvecs"]) < 1:
            raise ConfigError(f"multiscale.eigvecs must be >= 1, got {ms['eigvecs']}")
        if int(ms["oversample"]) < 0:
            raise ConfigError(f"multiscale.oversample must be >= 0, got {ms['oversample']}")
        if ms["weight"] not in WEIGHT_MODES:
            raise ConfigError(f"multiscale.weight must be one of {WEIGHT_MODES}, got {ms['weight']!r}")
        if int(ms["threads"]) < 1:
            raise ConfigError(f"multiscale.threads must be >= 1, got {ms['threads']}")
        if "oracle" in variants:
            check_oracle_size(g["nx_fine"])


def load_preset(name: str) -> ExperimentConfig:
    ref = resources.files("cemcontact").joinpath("presets", f"{name}.toml")
    if not ref.is_file():
        available = sorted(p.name[:-5] for p in resources.files("cemcontact").joinpath("presets").iterdir()
                           if p.name.endswith(".toml"))
        raise ConfigError(f"unknown preset {name!r}; available: {available}")
    with ref.open("rb") as fh:
        return ExperimentConfig.from_dict(_toml_load(fh))


# ---------------------------------------------------------------------------- dumps
def dump_field(u, path, nx: int, ny: int | None = None, h: float | None = None) -> None:
    """Write ``nx ny h`` then ``(nx+1)*(ny+1)`` nodal values, row-major, one per line."""
    ny = nx if ny is None else ny
    h = 1.0 / nx if h is None else h
    u = np.asarray(u, dtype=float).ravel()
    if u.size != (nx + 1) * (ny + 1):
        raise ValueError(f"field has {u.size} values, expected {(nx + 1) * (ny + 1)}")
    try:
        with open(path, "w") as fh:
            fh.write(f"{nx} {ny} {float(h)!r}\n")
            fh.writelines(f"{v!r}\n" for v in u.tolist())
    except OSError as exc:
        raise ConfigError(f"cannot write field dump {path}: {exc}") from exc


def parse_field(path):
    """Inverse of :func:`dump_field`: returns ``(nx, ny, h, values)``."""
    with open(path) as fh:
        nx, ny, h = fh.readline().split()
        values = np.array([float(t) for t in fh.read().split()])
    return int(nx), int(ny), float(h), values


def dump_lambda_trace(problem, lam, path) -> None:
    """Multiplier on Gamma_C as ``x y lambda`` rows, ordered by x (then y)."""
    g = problem.grid
    nodes = problem.contact_nodes
    xy = g.node_coords[nodes]
    order = np.lexsort((xy[:, 1], xy[:, 0]))
    with open(path, "w") as fh:
        fh.write("# node x y lambda\n")
        for k in order:
            fh.write(f"{int(nodes[k])} {float(xy[k, 0])!r} {float(xy[k, 1])!r} {float(lam[k])!r}\n")


def dump_active_trace(problem, history, path) -> None:
    """Header: contact node indices. Then one row per iterate: ``k`` and a 0/1 flag per node."""
    with open(path, "w") as fh:
        fh.write("k " + " ".join(str(int(n)) for n in problem.contact_nodes) + "\n")
        for state in history:
            fh.write(f"{state.k} " + " ".join("1" if a else "0" for a in state.active) + "\n")


# ---------------------------------------------------------------------------- pipeline
def build_from_config(cfg: ExperimentConfig):
    gcfg, med = cfg["grid"], cfg["medium"]
    g = build_hierarchy(gcfg["nx_fine"], gcfg["n_coarse"])
    bd = decompose_boundary(g, cfg["boundary"])
    if med["file"]:
        kappa = load_medium(med["file"], g)
    else:
        kappa = generate_medium(g, med["style"], float(med["kappa_ratio"]), int(med["seed"]))
    pb, sol, ms = cfg["problem"], cfg["solver"], cfg["multiscale"]
    problem = build_problem(g, bd, kappa, pb["source"], pb["neumann"], ms["weight"], float(sol["c"]))
    return problem


def _run_oracle(problem):
    check_oracle_size(problem.grid.nx_fine, problem.grid.ny_fine)
    u = solve_projected_gs(qp_from_problem(problem))
    lam = compute_multiplier(problem.A, problem.b, u, problem.contact_nodes)
    active = oracle_active_set(problem, u)
    lam[~active] = 0.0
    state = ContactState(k=0, u=u, lam=lam, active=active, c=problem.c, contact_nodes=problem.contact_nodes)
    return state, [state]


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run every requested variant and write dumps, traces, metrics and a manifest."""
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    problem = build_from_config(cfg)
    g = problem.grid
    sol, ms = cfg["solver"], cfg["multiscale"]
    manifest = {
        "version": __version__,
        "config": copy.deepcopy(cfg.data),
        "assumptions": {"neumann_default_zero": str(cfg["problem"]["neumann"]).strip() in ("0", "0.0")},
        "grid": {"h": g.h, "H": g.H, "ratio": g.ratio, "n_contact_nodes": int(len(problem.contact_nodes))},
        "kappa": {"min": float(problem.kappa.values.min()), "max": float(problem.kappa.values.max())},
        "variants": {},
    }
    histories = {}
    for tag in sol["variants"]:
        log.info("running variant %s", tag)
        try:
            if tag == "fine":
                state, history = run(problem, FineVariant(problem, float(sol["tol"])), int(sol["max_iter"]))
                extra = {}
            elif tag == "cem":
                variant = CemVariant(problem, int(ms["eigvecs"]), int(ms["oversample"]), threads=int(ms["threads"]),
                                     incremental=bool(ms["incremental"]), tol=float(sol["tol"]))
                manifest["Lambda_report"] = variant.Lambda_report
                state, history = run(problem, variant, int(sol["max_iter"]))
                extra = {"rebuilt_columns": [int(n) for n, _ in variant.rebuild_log],
                         "coarse_dim": int(variant.space.Psi.shape[1])}
            else:
                state, history = _run_oracle(problem)
                extra = {}
        except (SolverFailure, NonTermination) as exc:
            if isinstance(exc, SolverFailure):
                exc.annotate(variant=tag)
            raise
        histories[tag] = history
        dump_field(state.u, out / f"u_{tag}.txt", g.nx_fine, g.ny_fine, g.h)
        dump_lambda_trace(problem, state.lam, out / f"lambda_{tag}.txt")
        dump_active_trace(problem, history, out / f"active_{tag}.txt")
        manifest["variants"][tag] = {
            "terminal_k": int(state.k),
            "n_active": int(state.active.sum()),
            "kkt": kkt_report(state),
            **extra,
        }
    if "fine" in histories and "cem" in histories:
        fe, cem = histories["fine"], histories["cem"]
        manifest["active_sets_agree"] = bool(np.array_equal(fe[-1].active, cem[-1].active))
        try:
            report = build_report([s.u for s in fe], [s.u for s in cem], problem.A, problem.M)
        except ZeroDivisionError as exc:
            manifest["metrics"] = f"skipped: {exc}"
        else:
            write_csv(report, out / "metrics.csv")
            manifest["metrics"] = {"csv": "metrics.csv", "terminal": report.terminal, "k0": report.k0}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return manifest


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def run_sweep(cfg: ExperimentConfig, param: str, values, out_dir=None) -> list:
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; choose from {sorted(SWEEP_PARAMS)}")
    section, key, cast = SWEEP_PARAMS[param]
    out = Path(out_dir if out_dir is not None else cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in values:
        sub = ExperimentConfig(copy.deepcopy(cfg.data))
        sub.set(section, key, cast(v))
        man = run_experiment(sub, out / f"{param}={v}")
        metrics = man.get("metrics", {})
        term = metrics.get("terminal", {}) if isinstance(metrics, dict) else {}
        rows.append((v, term.get("E_L", float("nan")), term.get("E_a", float("nan"))))
    with open(out / "sweep.csv", "w") as fh:
        fh.write(f"{param},E_L,E_a\n")
        for v, el, ea in rows:
            fh.write(f"{v},{el:.5e},{ea:.5e}\n")
    return rows


def dump_basis(cfg: ExperimentConfig, columns, out_dir=None, with_global: bool = False) -> list:
    """Write the selected ``psi_{i}^{j}`` (no active nodes) as field dumps."""
    problem = build_from_config(cfg)
    g = problem.grid
    ms = cfg["multiscale"]
    l, m = int(ms["eigvecs"]), int(ms["oversample"])
    aux = build_auxiliary(g, problem.kappa, problem.weight, l)
    restriction = DofRestriction.from_active(problem, np.zeros(len(problem.contact_nodes), dtype=bool))
    out = Path(out_dir if out_dir is not None else cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, j in columns:
        if not (0 <= i < g.n_coarse and 0 <= j < l):
            raise ConfigError(f"basis column ({i}, {j}) outside {g.n_coarse} elements x {l} eigenvectors")
        psi = build_basis_column(problem, aux, restriction, i, j, m)
        path = out / f"psi_{i}_{j}_m{m}.txt"
        dump_field(psi, path, g.nx_fine, g.ny_fine, g.h)
        written.append(path)
        if with_global:
            path = out / f"psi_{i}_{j}_glo.txt"
            dump_field(global_basis_column(problem, aux, restriction, i, j), path, g.nx_fine, g.ny_fine, g.h)
            written.append(path)
    return written


# ---------------------------------------------------------------------------- argparse
def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML experiment file")
    p.add_argument("--preset", help="bundled preset name (desk, fullscale, minimal)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--nx", type=int, help="fine elements per axis")
    p.add_argument("--coarse", type=int, help="coarse elements per axis")
    p.add_argument("--medium-style", choices=STYLES)
    p.add_argument("--kappa-ratio", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--medium-file")
    p.add_argument("--source", help="f1, f2, a number or an expression in x and y")
    p.add_argument("--neumann", help="Neumann data p (same syntax as --source)")
    p.add_argument("--eigvecs", type=int, help="eigenvectors per coarse element (l_m)")
    p.add_argument("--oversample", type=int, help="oversampling layers m")
    p.add_argument("--weight", choices=WEIGHT_MODES)
    p.add_argument("--variant", action="append", choices=VARIANTS, help="repeatable")
    p.add_argument("--c", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--full-rebuild", action="store_true", help="rebuild every basis column each iteration")


def resolve_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("--config and --preset are mutually exclusive")
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif args.preset:
        cfg = load_preset(args.preset)
    else:
        cfg = ExperimentConfig()
    overrides = [
        ("out", "output", "dir"), ("nx", "grid", "nx_fine"), ("coarse", "grid", "n_coarse"),
        ("medium_style", "medium", "style"), ("kappa_ratio", "medium", "kappa_ratio"),
        ("seed", "medium", "seed"), ("medium_file", "medium", "file"), ("source", "problem", "source"),
        ("neumann", "problem", "neumann"), ("eigvecs", "multiscale", "eigvecs"),
        ("oversample", "multiscale", "oversample"), ("weight", "multiscale", "weight"),
        ("variant", "solver", "variants"), ("c", "solver", "c"), ("max_iter", "solver", "max_iter"),
        ("threads", "multiscale", "threads"),
    ]
    for attr, section, key in overrides:
        value = getattr(args, attr, None)
        if value is not None:
            cfg.set(section, key, value)
    if getattr(args, "full_rebuild", False):
        cfg.set("multiscale", "incremental", False)
    cfg.validate()
    return cfg


def _parse_columns(text: str):
    cols = []
    for item in text.split(","):
        try:
            i, j = item.split(":")
            cols.append((int(i), int(j)))
        except ValueError as exc:
            raise ConfigError(f"bad column spec {item!r}; expected i:j") from exc
    return cols


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cemcontact", description="Multiscale Signorini contact solver")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gm = sub.add_parser("generate-medium", help="write a procedurally generated permeability field")
    gm.add_argument("output", help="medium file to write")
    gm.add_argument("--nx", type=int, default=200)
    gm.add_argument("--coarse", type=int, default=20)
    gm.add_argument("--medium-style", choices=STYLES, default="A")
    gm.add_argument("--kappa-ratio", type=float, default=1e3)
    gm.add_argument("--seed", type=int, default=0)

    _add_common(sub.add_parser("run", help="run the active set iteration for each variant"))

    sw = sub.add_parser("sweep", help="repeat a run over one parameter")
    _add_common(sw)
    sw.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    sw.add_argument("--values", required=True, help="comma separated")

    db = sub.add_parser("dump-basis", help="write selected multiscale basis functions")
    _add_common(db)
    db.add_argument("--columns", required=True, help="comma separated i:j pairs")
    db.add_argument("--global", dest="with_global", action="store_true",
                    help="also write the non-localized function (nx <= 40)")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate-medium":
            g = build_hierarchy(args.nx, args.coarse)
            save_medium(generate_medium(g, args.medium_style, args.kappa_ratio, args.seed), g, args.output)
        elif args.command == "run":
            man = run_experiment(resolve_config(args))
            print(json.dumps({k: v.get("terminal_k") for k, v in man["variants"].items()}))
        elif args.command == "sweep":
            for v, el, ea in run_sweep(resolve_config(args), args.param, args.values.split(",")):
                print(f"{args.param}={v} E_L={el:.5e} E_a={ea:.5e}")
        elif args.command == "dump-basis":
            for path in dump_basis(resolve_config(args), _parse_columns(args.columns), with_global=args.with_global):
                print(path)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NonTermination as exc:
        print(f"non-termination: {exc}", file=sys.stderr)
        for k, s in enumerate(exc.active_sets):
            print(f"  contact positions, set[-{len(exc.active_sets) - k}]: {np.flatnonzero(s).tolist()}", file=sys.stderr)
        return EXIT_NONTERM
    except CemContactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Settings come from an optional TOML file (``--config``) overlaid with flags;
the merged document is what ``--print-config`` echoes.  Sections::

    [model]        beta, and one of birth_death {lambda, mu},
                   table {"k" = p_k, ...} or zeta3 {cutoff}
    [experiment]   horizon_t, offsets_x, ks, replicates, master_seed,
                   particle_cap, m_infty_horizon, m_infty_samples, law,
                   classes, tv_threshold, ks_threshold, z_threshold
    [simulate]     replicate, dump, thresholds
    [convergence]  time_grid, k, tolerance, fraction
    [run]          threads, output, format

Exit status: 0 success, 1 usage or validation error, 2 an acceptance
threshold was violated, 3 a replicate overflowed the particle cap.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .analytics import LimitLaw, alpha_star, limit_cdf_kth, limit_pmf
from .harness import (
    ConfigError,
    ExperimentConfig,
    TooFewSurvivors,
    format_float,
    limit_laws,
    run_convergence_diagnostic,
    run_experiment,
)
from .model import BirthDeathParams, ModelParams, OffspringDistribution, heavy_tail_zeta3
from .simulator import EDGE_CLASSES, EdgeClass, Overflow, census, kth_longest, simulate_tree
from .rng import ReplicateSeed

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_THRESHOLD = 2
EXIT_OVERFLOW = 3

SUBCOMMANDS = ("simulate", "census", "limits", "experiment", "convergence")
FORMATS = ("csv", "json")


class UsageError(ValueError):
    pass


class UnknownFlag(UsageError):
    pass


class MissingSubcommand(UsageError):
    pass


class BadValue(UsageError, TypeError):
    pass


# Allowed keys per section with their value kinds.
_FLOAT, _INT, _STR, _FLOATS, _INTS, _STRS = "float", "int", "str", "floats", "ints", "strs"
SCHEMA = {
    "model": {
        "beta": _FLOAT,
        "birth_death": {"lambda": _FLOAT, "mu": _FLOAT},
        "table": "table",
        "zeta3": {"cutoff": _INT},
    },
    "experiment": {
        "horizon_t": _FLOAT,
        "offsets_x": _FLOATS,
        "ks": _INTS,
        "replicates": _INT,
        "master_seed": _INT,
        "particle_cap": _INT,
        "m_infty_horizon": _FLOAT,
        "m_infty_samples": _INT,
        "law": _STR,
        "classes": _STRS,
        "tv_threshold": _FLOAT,
        "ks_threshold": _FLOAT,
        "z_threshold": _FLOAT,
    },
    "simulate": {"replicate": _INT, "dump": _STR, "thresholds": _FLOATS},
    "convergence": {"time_grid": _FLOATS, "k": _INT, "tolerance": _FLOAT, "fraction": _FLOAT},
    "run": {"threads": _INT, "output": _STR, "format": _STR},
}


@dataclass(frozen=True)
class CliConfig:
    subcommand: str
    config_path: str | None = None
    settings: dict = field(default_factory=dict)
    print_config: bool = False

    def get(self, section: str, key: str, default=None):
        return self.settings.get(section, {}).get(key, default)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise BadValue(f"{self.prog}: {message}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def parse_offspring(text: str) -> dict[str, float]:
    """``"k:p,k:p,..."`` to a TOML-style table with string keys."""
    table: dict[str, float] = {}
    for item in text.split(","):
        if not item.strip():
            continue
        k, sep, p = item.partition(":")
        try:
            if not sep:
                raise ValueError
            kk = int(k)
            pp = float(p)
        except ValueError:
            raise argparse.ArgumentTypeError(f"offspring entries must be k:p, got {item!r}")
        if kk < 0:
            raise argparse.ArgumentTypeError(f"offspring count {kk} is negative")
        table[str(kk)] = table.get(str(kk), 0.0) + pp
    if not table:
        raise argparse.ArgumentTypeError("empty offspring table")
    return table


# flag dest -> (section, key)
_FLAG_TARGETS = {
    "seed": ("experiment", "master_seed"),
    "replicates": ("experiment", "replicates"),
    "t": ("experiment", "horizon_t"),
    "particle_cap": ("experiment", "particle_cap"),
    "x": ("experiment", "offsets_x"),
    "k": ("experiment", "ks"),
    "edge_class": ("experiment", "classes"),
    "law": ("experiment", "law"),
    "m_infty_horizon": ("experiment", "m_infty_horizon"),
    "m_infty_samples": ("experiment", "m_infty_samples"),
    "tv_threshold": ("experiment", "tv_threshold"),
    "ks_threshold": ("experiment", "ks_threshold"),
    "replicate": ("simulate", "replicate"),
    "dump": ("simulate", "dump"),
    "thresholds": ("simulate", "thresholds"),
    "time_grid": ("convergence", "time_grid"),
    "tolerance": ("convergence", "tolerance"),
    "fraction": ("convergence", "fraction"),
    "threads": ("run", "threads"),
    "output": ("run", "output"),
    "format": ("run", "format"),
    "beta": ("model", "beta"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gwedges", description="Long edges of continuous-time GW trees.",
                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, allow_abbrev=False)
        p.add_argument("--config", dest="config_path")
        p.add_argument("--print-config", action="store_true")
        p.add_argument("--seed", type=int)
        p.add_argument("--replicates", type=int)
        p.add_argument("--t", type=float)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--mu", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--offspring", type=parse_offspring)
        p.add_argument("--zeta3-cutoff", type=int)
        p.add_argument("--particle-cap", type=int)
        p.add_argument("--output")
        p.add_argument("--format", choices=FORMATS)
        p.add_argument("--threads", type=int)
        p.add_argument("--class", dest="edge_class", type=_str_list)
        p.add_argument("--x", type=_float_list)
        p.add_argument("--k", type=_int_list)
        p.add_argument("--law")
        p.add_argument("--m-infty-horizon", type=float)
        p.add_argument("--m-infty-samples", type=int)
        if name in ("simulate", "census"):
            p.add_argument("--replicate", type=int)
            p.add_argument("--dump")
            p.add_argument("--thresholds", type=_float_list)
        if name == "experiment":
            p.add_argument("--tv-threshold", type=float)
            p.add_argument("--ks-threshold", type=float)
        if name == "convergence":
            p.add_argument("--time-grid", type=_float_list)
            p.add_argument("--tolerance", type=float)
            p.add_argument("--fraction", type=float)
    return parser


def _check_kind(kind, value, where: str):
    def bad():
        raise BadValue(f"{where}: expected {kind}, got {value!r}")

    if kind == _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            bad()
        return float(value)
    if kind == _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            bad()
        return value
    if kind == _STR:
        if not isinstance(value, str):
            bad()
        return value
    if kind in (_FLOATS, _INTS, _STRS):
        if not isinstance(value, list):
            bad()
        inner = {_FLOATS: _FLOAT, _INTS: _INT, _STRS: _STR}[kind]
        return [_check_kind(inner, v, where) for v in value]
    if kind == "table":
        if not isinstance(value, dict) or not value:
            bad()
        out = {}
        for k, p in value.items():
            try:
                if int(k) < 0:
                    raise ValueError
            except ValueError:
                raise BadValue(f"{where}: offspring count {k!r} is not a nonnegative integer")
            out[str(int(k))] = _check_kind(_FLOAT, p, f"{where}.{k}")
        return out
    if not isinstance(value, dict):
        bad()
    return _check_section(kind, value, where)


def _check_section(schema: dict, doc: dict, where: str) -> dict:
    out = {}
    for key, value in doc.items():
        if key not in schema:
            raise UnknownFlag(f"unknown key {where + '.' if where else ''}{key}")
        out[key] = _check_kind(schema[key], value, f"{where}.{key}" if where else key)
    return out


def load_config_file(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}")
    except tomli.TOMLDecodeError as exc:
        raise BadValue(f"{path}: {exc}")
    return _check_section(SCHEMA, doc, "")


def parse_args(argv) -> CliConfig:
    argv = list(argv)
    parser = build_parser()
    ns, extra = parser.parse_known_args(argv)
    if ns.subcommand is None:
        if extra and extra[0].startswith("-"):
            raise UnknownFlag(f"unknown flag {extra[0]}")
        raise MissingSubcommand(f"a subcommand is required: one of {', '.join(SUBCOMMANDS)}")
    if extra:
        raise UnknownFlag(f"unknown flag {extra[0]}")
    settings = load_config_file(ns.config_path) if ns.config_path else {}
    settings = copy.deepcopy(settings)

    model = settings.setdefault("model", {})
    if ns.lam is not None or ns.mu is not None:
        bd = dict(model.get("birth_death", {}))
        if ns.lam is not None:
            bd["lambda"] = ns.lam
        if ns.mu is not None:
            bd["mu"] = ns.mu
        bd.setdefault("mu", 0.0)
        model.pop("table", None)
        model.pop("zeta3", None)
        model.pop("beta", None)
        model["birth_death"] = bd
    if ns.offspring is not None:
        model.pop("birth_death", None)
        model.pop("zeta3", None)
        model["table"] = ns.offspring
    if ns.zeta3_cutoff is not None:
        model.pop("birth_death", None)
        model.pop("table", None)
        model["zeta3"] = {"cutoff": ns.zeta3_cutoff}
    for dest, (section, key) in _FLAG_TARGETS.items():
        value = getattr(ns, dest, None)
        if value is not None:
            settings.setdefault(section, {})[key] = value
    settings = {s: v for s, v in settings.items() if v}
    return CliConfig(ns.subcommand, ns.config_path, settings, ns.print_config)


def render_config(cfg: CliConfig) -> str:
    return tomli_w.dumps(cfg.settings)


# --------------------------------------------------------------- assembling


def model_from_settings(cfg: CliConfig) -> ModelParams | BirthDeathParams:
    m = cfg.settings.get("model", {})
    families = [f for f in ("birth_death", "table", "zeta3") if f in m]
    if len(families) != 1:
        raise ConfigError(
            "specify exactly one offspring law: --lambda/--mu, --offspring or --zeta3-cutoff"
        )
    family = families[0]
    if family == "birth_death":
        if "beta" in m:
            raise ConfigError("beta is implied by lambda + mu for birth-death models")
        bd = m["birth_death"]
        if "lambda" not in bd:
            raise ConfigError("birth-death model needs lambda")
        return BirthDeathParams(bd["lambda"], bd.get("mu", 0.0))
    beta = m.get("beta", 1.0)
    if family == "table":
        off = OffspringDistribution.from_mapping({int(k): p for k, p in m["table"].items()})
    else:
        off = heavy_tail_zeta3(m["zeta3"]["cutoff"])
    return ModelParams(beta, off)


_EXPERIMENT_KEYS = tuple(SCHEMA["experiment"])


def experiment_from_settings(cfg: CliConfig, need_horizon: bool = True) -> ExperimentConfig:
    exp = dict(cfg.settings.get("experiment", {}))
    model = model_from_settings(cfg)
    if "horizon_t" not in exp:
        if need_horizon:
            raise ConfigError("horizon --t is required")
        exp["horizon_t"] = 1.0
    kwargs = {k: exp[k] for k in _EXPERIMENT_KEYS if k in exp}
    for key in ("offsets_x", "ks", "classes"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        return ExperimentConfig(model=model, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _threads(cfg: CliConfig) -> int:
    n = cfg.get("run", "threads", 1)
    if n < 1:
        raise ConfigError("threads must be >= 1")
    return n


def _format(cfg: CliConfig) -> str:
    fmt = cfg.get("run", "format", "json")
    if fmt not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}")
    return fmt


def _write(cfg: CliConfig, text: str, stdout) -> None:
    out = cfg.get("run", "output")
    if out:
        Path(out).write_text(text)
    else:
        stdout.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(
            [format_float(v) if isinstance(v, float) else ("" if v is None else v) for v in r]
        )
    return buf.getvalue()


def _json_text(doc) -> str:
    def clean(o):
        if isinstance(o, float):
            return o if math.isfinite(o) else None
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, list):
            return [clean(v) for v in o]
        return o

    return json.dumps(clean(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


# ------------------------------------------------------------- subcommands


def _single_tree(cfg: CliConfig):
    exp = experiment_from_settings(cfg)
    t = exp.horizon_t
    if not (math.isfinite(t) and t >= 0.0):
        raise ConfigError("horizon --t must be nonnegative")
    seed = ReplicateSeed(exp.master_seed, cfg.get("simulate", "replicate", 0))
    tree = simulate_tree(exp.model, t, seed, exp.particle_cap)
    dump = cfg.get("simulate", "dump")
    if dump:
        tree.write_dump(dump)
    return exp, tree


def cmd_simulate(cfg: CliConfig, stdout) -> int:
    exp, tree = _single_tree(cfg)
    row = {
        "horizon_t": tree.horizon_t,
        "master_seed": exp.master_seed,
        "replicate": tree.seed.replicate,
        "n_edges": tree.n_edges,
        "n_alive": tree.n_alive,
        "martingale_value": tree.martingale_value,
        "survived": tree.survived,
    }
    if _format(cfg) == "json":
        _write(cfg, _json_text(row), stdout)
    else:
        vals = ["true" if v is True else "false" if v is False else v for v in row.values()]
        _write(cfg, _csv_text(list(row), [vals]), stdout)
    return EXIT_OK


def cmd_census(cfg: CliConfig, stdout) -> int:
    exp, tree = _single_tree(cfg)
    thresholds = cfg.get("simulate", "thresholds")
    if not thresholds:
        m = exp.params.m
        thresholds = [alpha_star(m) * exp.horizon_t + x for x in exp.offsets_x]
    c = census(tree, thresholds)
    if _format(cfg) == "json":
        doc = {
            "horizon_t": tree.horizon_t,
            "thresholds": c.thresholds.tolist(),
            "counts": {cl.value: c.counts(cl).tolist() for cl in exp.classes},
            "kth_longest": {
                cl.value: {str(k): kth_longest(c, cl, k) for k in exp.ks} for cl in exp.classes
            },
        }
        _write(cfg, _json_text(doc), stdout)
    else:
        header = ["threshold", *(f"{cl.value}_count" for cl in exp.classes)]
        rows = [
            [float(l), *(int(c.counts(cl)[j]) for cl in exp.classes)]
            for j, l in enumerate(c.thresholds)
        ]
        _write(cfg, _csv_text(header, rows), stdout)
    return EXIT_OK


def cmd_limits(cfg: CliConfig, stdout) -> int:
    exp = experiment_from_settings(cfg, need_horizon=False)
    if exp.resolved_law() == LimitLaw.MIXTURE and exp.m_infty_horizon is None:
        raise ConfigError("mixture limit laws need --m-infty-horizon")
    p = exp.params
    laws, _, _ = limit_laws(exp.validate(statistical=False), _threads(cfg))
    rows = []
    for cl in exp.classes:
        for x in exp.offsets_x:
            law = laws[cl].at(x)
            for k in exp.ks:
                rows.append({
                    "edge_class": cl.value,
                    "x": x,
                    "k": k,
                    "pmf": limit_pmf(law, k, p.beta, p.m),
                    "cdf_kth": limit_cdf_kth(law, k, x, p.beta, p.m),
                })
    if _format(cfg) == "json":
        _write(cfg, _json_text({"law": exp.resolved_law(), "rows": rows}), stdout)
    else:
        header = ["edge_class", "x", "k", "pmf", "cdf_kth"]
        _write(cfg, _csv_text(header, [[r[h] for h in header] for r in rows]), stdout)
    return EXIT_OK


def cmd_experiment(cfg: CliConfig, stdout) -> int:
    exp = experiment_from_settings(cfg)
    report = run_experiment(exp, threads=_threads(cfg))
    text = report.to_json() if _format(cfg) == "json" else report.to_csv()
    _write(cfg, text, stdout)
    return EXIT_OK if report.passed else EXIT_THRESHOLD


def cmd_convergence(cfg: CliConfig, stdout) -> int:
    grid = cfg.get("convergence", "time_grid")
    if not grid:
        raise ConfigError("convergence needs --time-grid")
    settings = copy.deepcopy(cfg.settings)
    settings.setdefault("experiment", {}).setdefault("horizon_t", float(max(grid)))
    exp = experiment_from_settings(CliConfig(cfg.subcommand, cfg.config_path, settings))
    k = cfg.get("convergence", "k", 1)
    tol = cfg.get("convergence", "tolerance", 0.05)
    frac = cfg.get("convergence", "fraction", 0.95)
    table = run_convergence_diagnostic(exp, grid, k=k, tolerance=tol, threads=_threads(cfg))
    text = table.to_json() if _format(cfg) == "json" else table.to_csv()
    _write(cfg, text, stdout)
    ok = (
        all(w[-1] >= frac for w in table.within_tolerance.values())
        and not any(table.nondecreasing_violations.values())
        and table.pendant_increment_violations == 0
    )
    return EXIT_OK if ok else EXIT_THRESHOLD


COMMANDS = {
    "simulate": cmd_simulate,
    "census": cmd_census,
    "limits": cmd_limits,
    "experiment": cmd_experiment,
    "convergence": cmd_convergence,
}


def run(cfg: CliConfig, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    if cfg.print_config:
        stdout.write(render_config(cfg))
        return EXIT_OK
    try:
        return COMMANDS[cfg.subcommand](cfg, stdout)
    except Overflow as exc:
        stderr.write(f"gwedges: overflow: {exc}\n")
        return EXIT_OVERFLOW
    except (ValueError, TooFewSurvivors) as exc:
        stderr.write(f"gwedges: error: {exc}\n")
        return EXIT_INVALID


def main(argv=None, stdout=None, stderr=None) -> int:
    stderr = stderr or sys.stderr
    try:
        cfg = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        stderr.write(f"gwedges: usage error: {exc}\n")
        return EXIT_INVALID
    return run(cfg, stdout, stderr)


if __name__ == "__main__":
    sys.exit(main())

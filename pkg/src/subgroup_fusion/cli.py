"""Command-line entry point: ``subgroup-fusion <command> [--config FILE] [--key value ...]``.

Every setting is a flat ``key = value`` pair.  They can come from a config
file, from ``--key value`` flags, or both, and flags win.  Exit codes:
0 ok, 1 invalid input, 2 I/O failure, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import LassoProblem
from .core import (
    DivergenceError,
    FusionError,
    FusionNorm,
    FusionWeights,
    GroupedDataset,
    PenaltyConfig,
    SolverOptions,
    ValidationError,
    as_tau,
    objective,
    standardize_by_group,
)
from .evaluation import (
    METHODS,
    ComparisonReport,
    CvGrid,
    compute_tau,
    fit_method,
    kfold_cv,
    run_comparison,
)
from .simulation import SimulationConfig, simulate
from .solver_l2 import fit_augmented
from .weighting import tau_manual

log = logging.getLogger("subgroup_fusion")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3


class ConfigIOError(OSError):
    pass


# ---------------------------------------------------------------- config


@dataclass
class RunConfig:
    """Merged key/value settings with typed accessors."""

    values: dict[str, str] = field(default_factory=dict)
    used: set = field(default_factory=set)

    @classmethod
    def from_sources(cls, path: str | None, overrides: dict[str, str]) -> "RunConfig":
        values = {}
        if path:
            values.update(parse_config_text(_read_text(path), path))
        values.update(overrides)
        return cls(values)

    def _raw(self, key, default):
        self.used.add(key)
        v = self.values.get(key)
        return default if v is None or v == "" else v

    def get_str(self, key, default=None):
        return self._raw(key, default)

    def required(self, key):
        v = self._raw(key, None)
        if v is None:
            raise ValidationError(f"missing required key {key!r}")
        return v

    def get_int(self, key, default=None):
        v = self._raw(key, default)
        try:
            return None if v is None else int(v)
        except ValueError:
            raise ValidationError(f"{key} must be an integer, got {v!r}") from None

    def get_float(self, key, default=None):
        v = self._raw(key, default)
        try:
            return None if v is None else float(v)
        except ValueError:
            raise ValidationError(f"{key} must be a number, got {v!r}") from None

    def get_bool(self, key, default=False):
        v = self._raw(key, None)
        if v is None:
            return default
        if isinstance(v, bool):
            return v
        low = v.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{key} must be a boolean, got {v!r}")

    def get_floats(self, key, default=None):
        v = self._raw(key, None)
        if v is None:
            return default
        try:
            return tuple(float(x) for x in v.split(",") if x.strip())
        except ValueError:
            raise ValidationError(f"{key} must be a comma-separated list of numbers") from None

    def get_ints(self, key, default=None):
        vals = self.get_floats(key, None)
        if vals is None:
            return default
        if any(v != int(v) for v in vals):
            raise ValidationError(f"{key} must be a list of integers")
        return tuple(int(v) for v in vals)

    def get_strs(self, key, default=None):
        v = self._raw(key, None)
        if v is None:
            return default
        return tuple(x.strip() for x in v.split(",") if x.strip())

    def unused(self) -> list[str]:
        return sorted(set(self.values) - self.used)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValidationError(f"{source}:{lineno}: empty key")
        out[_norm_key(key)] = value
    return out


def parse_overrides(tokens: list[str]) -> dict[str, str]:
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise ValidationError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
            i += 1
        elif i + 1 < len(tokens) and not tokens[i + 1].startswith("--"):
            key, value = tok[2:], tokens[i + 1]
            i += 2
        else:
            key, value = tok[2:], "true"
            i += 1
        out[_norm_key(key)] = value
    return out


def _norm_key(key: str) -> str:
    return key.strip().replace("-", "_")


# ---------------------------------------------------------------- file I/O


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigIOError(f"cannot read {path}: {exc.strerror or exc}") from exc


def write_atomic(path, text: str) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise ConfigIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _fmt(v: float) -> str:
    return repr(float(v))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def dataset_to_csv(data: GroupedDataset) -> str:
    rows = []
    for g in data:
        for i in range(g.n):
            rows.append([g.group_id, _fmt(g.y[i]), *(_fmt(v) for v in g.X[i])])
    return _csv_text(["group", "y", *data.feature_names], rows)


def read_dataset(path) -> GroupedDataset:
    """Parse the data CSV; groups keep their order of first appearance."""
    text = _read_text(path)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValidationError(f"{path}: empty file") from None
    header = [h.strip() for h in header]
    if len(header) < 3 or header[0] != "group" or header[1] != "y":
        raise ValidationError(f"{path}:1: header must start with 'group,y' and name covariates")
    p = len(header) - 2
    X: dict[str, list] = {}
    y: dict[str, list] = {}
    for lineno, row in enumerate(reader, 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != p + 2:
            raise ValidationError(f"{path}:{lineno}: expected {p + 2} fields, got {len(row)}")
        gid = row[0].strip()
        if not gid:
            raise ValidationError(f"{path}:{lineno}: empty group id")
        try:
            vals = [float(c) for c in row[1:]]
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: non-numeric value") from None
        if not np.all(np.isfinite(vals)):
            raise ValidationError(f"{path}:{lineno}: non-finite value")
        y.setdefault(gid, []).append(vals[0])
        X.setdefault(gid, []).append(vals[1:])
    if not X:
        raise ValidationError(f"{path}: no data rows")
    return GroupedDataset(((g, np.array(X[g]), np.array(y[g])) for g in X), header[2:])


def coefficients_to_csv(B, feature_names, group_ids) -> str:
    rows = [[f, g, _fmt(B[j, k])]
            for k, g in enumerate(group_ids) for j, f in enumerate(feature_names)]
    return _csv_text(["covariate", "group", "beta"], rows)


def read_coefficients(path, feature_names, group_ids) -> np.ndarray:
    text = _read_text(path)
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["covariate", "group", "beta"]:
        raise ValidationError(f"{path}:1: header must be 'covariate,group,beta'")
    fi = {f: j for j, f in enumerate(feature_names)}
    gi = {g: k for k, g in enumerate(group_ids)}
    B = np.full((len(fi), len(gi)), np.nan)
    for lineno, row in enumerate(reader, 2):
        if len(row) != 3 or row[0] not in fi or row[1] not in gi:
            raise ValidationError(f"{path}:{lineno}: unknown covariate or group")
        try:
            B[fi[row[0]], gi[row[1]]] = float(row[2])
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: non-numeric beta") from None
    if np.isnan(B).any():
        raise ValidationError(f"{path}: coefficients missing for some (covariate, group)")
    return B


def tau_to_csv(tau: FusionWeights) -> str:
    ids = list(tau.group_ids)
    rows = [[g, *(_fmt(v) for v in tau.tau[k])] for k, g in enumerate(ids)]
    return _csv_text(["group", *ids], rows)


def read_pair_file(path) -> list[tuple[str, str, float]]:
    """Pair list ``group_a,group_b,value`` (header row required)."""
    reader = csv.reader(io.StringIO(_read_text(path)))
    next(reader, None)
    out = []
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) != 3:
            raise ValidationError(f"{path}:{lineno}: expected group_a,group_b,value")
        try:
            out.append((row[0].strip(), row[1].strip(), float(row[2])))
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: non-numeric value") from None
    return out


# ---------------------------------------------------------------- helpers


def sim_config_from(cfg: RunConfig, **override) -> SimulationConfig:
    props = cfg.get_floats("group_proportions")
    kw = dict(
        K=cfg.get_int("K", 9), K0=cfg.get_int("K0", 4), p=cfg.get_int("p", 200), n_total=cfg.get_int("n", 250),
        group_proportions=props, sparsity=cfg.get_float("sparsity", 0.1),
        trunc_halfwidth=cfg.get_float("trunc_halfwidth", 0.1),
        noise_sd=cfg.get_float("noise_sd", 1.0), seed=cfg.get_int("seed", 0))
    kw.update(override)
    return SimulationConfig(**kw)


def solver_options(cfg: RunConfig, method: str) -> SolverOptions:
    if method == "fused_l1":
        defaults = (20000, 1e-10)
    else:
        defaults = (1000, 1e-8)
    return SolverOptions(cfg.get_int("max_iter", defaults[0]), cfg.get_float("tol", defaults[1]),
                         cfg.get_int("seed", 0))


def method_of(cfg: RunConfig) -> str:
    method = cfg.get_str("method", "fused_l2")
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return method


def resolve_tau(cfg: RunConfig, data: GroupedDataset):
    """``tau = uniform | mean | kl | manual``; manual reads ``tau_file``."""
    scheme = cfg.get_str("tau", "uniform")
    if data.K < 2:
        return None
    if scheme == "manual":
        pairs = read_pair_file(cfg.required("tau_file"))
        return tau_manual(data.group_ids, pairs, as_distances=cfg.get_bool("tau_distances"))
    if scheme == "kl":
        return compute_tau(data, "kl", cfg.get_float("alpha", 0.1))
    return compute_tau(data, scheme)


def method_objective(data: GroupedDataset, method: str, B, lam: float, gamma: float,
                     tau, epsilon: float = 1e-3) -> float:
    """The objective each method minimizes, evaluated at ``B`` on standardized data."""
    if method == "pooled":
        X, y, _ = data.stacked()
        return LassoProblem(X, y, lam).objective(np.asarray(B)[:, 0])
    if method == "subgroupwise":
        gamma = 0.0
    norm = FusionNorm.L1 if method == "fused_l1" else FusionNorm.L2
    return objective(data, B, PenaltyConfig(lam, gamma, norm, epsilon), tau)


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.get_str("out_dir", "."))


def _threads(cfg: RunConfig) -> int:
    t = cfg.get_int("threads", os.cpu_count() or 1)
    if t < 1:
        raise ValidationError("threads must be >= 1")
    return t


def _kv_text(pairs) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs)


def _grid(cfg: RunConfig) -> CvGrid:
    return CvGrid(lambda_values=cfg.get_floats("lambdas"), gamma_values=cfg.get_floats("gammas"),
                  folds=cfg.get_int("folds", 10), seed=cfg.get_int("seed", 0),
                  stratify_by_group=cfg.get_bool("stratify", True),
                  n_lambda=cfg.get_int("n_lambda", 30), lambda_ratio=cfg.get_float("lambda_ratio", 1e-3))


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: RunConfig) -> int:
    sim = simulate(sim_config_from(cfg))
    out = _out(cfg)
    write_atomic(out / cfg.get_str("data_file", "data.csv"), dataset_to_csv(sim.data))
    write_atomic(out / cfg.get_str("truth_file", "truth.csv"),
                 coefficients_to_csv(sim.truth.B_true, sim.data.feature_names, sim.data.group_ids))
    d = sim.data
    print(f"K = {d.K}\nK0 = {len(sim.truth.V0)}\np = {d.p}\n"
          f"n_k = {','.join(str(n) for n in d.n_k)}\n"
          f"shared = {','.join(d.group_ids[k] for k in sorted(sim.truth.V0))}")
    return EXIT_OK


def cmd_fit(cfg: RunConfig) -> int:
    data = read_dataset(cfg.required("data"))
    method = method_of(cfg)
    lam = cfg.get_float("lam", None)
    if lam is None:
        lam = float(cfg.required("lambda"))
    gamma = cfg.get_float("gamma", 0.0)
    epsilon = cfg.get_float("epsilon", 1e-3)
    PenaltyConfig(lam, gamma, epsilon=epsilon)  # range checks
    std, record = standardize_by_group(data)
    tau = resolve_tau(cfg, data)
    opts = solver_options(cfg, method)
    solver = cfg.get_str("solver", "cd")
    if solver not in ("cd", "augmented"):
        raise ValidationError(f"solver must be 'cd' or 'augmented', got {solver!r}")
    if solver == "augmented" and method != "fused_l2":
        raise ValidationError("the augmented solver applies to method = fused_l2 only")
    if solver == "augmented":
        res = fit_augmented(std, PenaltyConfig(lam, gamma), tau, opts)
    else:
        res = fit_method(std, method, lam, gamma, tau, opts, epsilon=epsilon)
    if not np.all(np.isfinite(res.B)):
        raise DivergenceError("solver produced non-finite coefficients")
    B = res.B
    scale = cfg.get_str("coef_scale", "standardized")
    if scale == "raw":
        B, intercepts = record.coefficients_raw(B, data.group_ids)
    elif scale != "standardized":
        raise ValidationError("coef_scale must be 'standardized' or 'raw'")
    out = _out(cfg)
    write_atomic(out / cfg.get_str("coef_file", "coefficients.csv"),
                 coefficients_to_csv(B, data.feature_names, data.group_ids))
    obj = method_objective(std, method, res.B, lam, gamma, tau, epsilon)
    summary = [("method", method), ("solver", solver), ("lambda", _fmt(lam)),
               ("gamma", _fmt(gamma)), ("objective", _fmt(obj)),
               ("iterations", res.iterations), ("converged", str(res.converged).lower()),
               ("coef_scale", scale)]
    if scale == "raw":
        summary += [(f"intercept.{g}", _fmt(b0)) for g, b0 in zip(data.group_ids, intercepts)]
    text = _kv_text(summary)
    write_atomic(out / cfg.get_str("summary_file", "summary.txt"), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_cv(cfg: RunConfig) -> int:
    data = read_dataset(cfg.required("data"))
    method = method_of(cfg)
    tau = resolve_tau(cfg, data)
    opts = SolverOptions(cfg.get_int("max_iter", 1000), cfg.get_float("tol", 1e-7), cfg.get_int("seed", 0))
    res = kfold_cv(data, method, _grid(cfg), tau, opts, cfg.get_float("epsilon", 1e-3))
    rows = [[_fmt(l), _fmt(g), f, _fmt(e)] for l, g, f, e in res.table]
    write_atomic(_out(cfg) / cfg.get_str("cv_file", "cv_table.csv"),
                 _csv_text(["lambda", "gamma", "fold", "weighted_rmse"], rows))
    sys.stdout.write(_kv_text([("method", method), ("best_lambda", _fmt(res.best_lambda)),
                               ("best_gamma", _fmt(res.best_gamma)),
                               ("cv_error", _fmt(res.mean_errors()[(res.best_lambda,
                                                                    res.best_gamma)]))]))
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    """Sweep ``K0`` or ``n`` (key ``sweep``) over ``sweep_values``."""
    sweep = cfg.get_str("sweep", "K0")
    if sweep not in ("K0", "n"):
        raise ValidationError("sweep must be 'K0' or 'n'")
    values = cfg.get_ints("sweep_values", None)
    if values is None:
        values = (cfg.get_int(sweep, 4 if sweep == "K0" else 250),)
    methods = cfg.get_strs("methods", ("fused_l2", "pooled", "subgroupwise"))
    grid = _grid(cfg)
    opts = SolverOptions(cfg.get_int("max_iter", 1000), cfg.get_float("tol", 1e-7), cfg.get_int("seed", 0))
    key = "K0" if sweep == "K0" else "n_total"
    for v in values:  # validate every sweep point before any work
        sim_config_from(cfg, **{key: v})
    threads = _threads(cfg)
    kw = dict(methods=methods, grid=grid, replicates=cfg.get_int("replicates", 10), opts=opts,
              tau_scheme=cfg.get_str("tau", "uniform"), test_fraction=cfg.get_float("test_fraction", 0.2),
              include_timing=cfg.get_bool("timing"), threads=threads)
    report = ComparisonReport()
    for v in values:
        sim_cfg = sim_config_from(cfg, **{key: v})
        log.info("sweep %s = %d", sweep, v)
        report.extend(run_comparison(sim_cfg, tags={"sweep": sweep, "sweep_value": v}, **kw))
    write_atomic(_out(cfg) / cfg.get_str("report_file", "report.csv"), report.to_csv())
    lines = []
    for v in values:
        summ = report.summary("weighted_rmse", sweep_value=v)
        lines += [(f"{sweep}={v}.{m}", f"{mu:.4f} (sd {sd:.4f})") for m, (mu, sd) in summ.items()]
    lines.append(("failures", len(report.failures)))
    sys.stdout.write(_kv_text(lines))
    return EXIT_OK


def cmd_weights(cfg: RunConfig) -> int:
    data = read_dataset(cfg.required("data"))
    if data.K < 2:
        raise ValidationError("weights need at least two groups")
    tau = resolve_tau(cfg, data)
    if tau is None:
        tau = FusionWeights.uniform(data.K, data.group_ids)
    elif not isinstance(tau, FusionWeights):
        tau = FusionWeights(as_tau(tau, data.K), data.group_ids)
    text = tau_to_csv(tau)
    write_atomic(_out(cfg) / cfg.get_str("tau_out", "tau.csv"), text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "cv": cmd_cv,
            "compare": cmd_compare, "weights": cmd_weights}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="subgroup-fusion",
        description="Joint sparse regression across subgroups with fusion penalties.",
        epilog="Any setting can be given as 'key = value' in --config or as --key value.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="key = value settings file")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args, rest = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.from_sources(args.config, parse_overrides(rest))
        _threads(cfg)  # accepted by every command; only compare runs tasks in parallel
        code = COMMANDS[args.command](cfg)
        if cfg.unused():
            log.warning("ignored keys: %s", ", ".join(cfg.unused()))
        return code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FusionError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

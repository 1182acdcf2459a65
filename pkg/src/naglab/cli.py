"""Experiment runner: every module behind one deterministic command line.

Subcommands: analyze (quadratic stability curves), simulate (quadratic SDE
ensembles), stationary (stationary-distribution study), train (logistic
regression optimizer comparison), spectrum (extreme Hessian eigenvalues
along training), sweep (random-search phase diagrams).

Configuration is resolved as defaults < TOML file < --set overrides, with
the dedicated --seed/--format flags winning over everything. Unknown keys
and out-of-range values exit with code 2 before anything is written;
numerical failures during a run exit with code 1. Output files go through
:mod:`naglab.io`, so replaying a command with the same config and seed
reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import io
from ._version import __version__
from .optimizers import (
    DivergenceError,
    DomainError,
    NagGsConfig,
    adamw_initial_state,
    adamw_step,
    initial_state,
    is_diverged,
    nag_gs_propose,
    nag_gs_step,
    sgd_momentum_step,
)
from .problems import (
    LogisticRegressionProblem,
    Quadratic,
    load_csv_dataset,
    make_blobs,
    make_test_matrix,
)
from .quadratic import (
    SpectrumConfig,
    critical_alpha,
    iteration_eigenvalues,
    optimal_alpha,
    stationary_covariance,
)
from .sde import (
    QuadraticExperiment,
    StationarityConfig,
    run_quadratic_ensemble,
    run_stationarity_study,
)
from .spectrum import LinearOperator, extreme_eigenvalues

__all__ = ["ConfigError", "main"]


class ConfigError(Exception):
    """Bad configuration: unknown key, wrong type, out-of-range value."""


# DivergenceError/DomainError/NonStationaryError subclass RuntimeError;
# GridError subclasses ValueError. ValueError is included so domain checks
# raised mid-run surface as numerical failures, not tracebacks.
_NUMERICAL_ERRORS = (RuntimeError, ValueError, ArithmeticError,
                     np.linalg.LinAlgError)

_FUNCTION_ALIASES = {"f1": "two_pit", "f2": "fm_sin",
                     "two_pit": "two_pit", "fm_sin": "fm_sin"}


@dataclass(frozen=True)
class Field:
    kind: str
    default: object


def _schema(**fields):
    out = {k: Field(*v) for k, v in fields.items()}
    out["seed"] = Field("int", 0)
    out["format"] = Field("str", "csv")
    return out


_SCHEMAS = {
    "analyze": _schema(
        mu=("float", 1.0), L=("float", 3.0), gamma=("float", 1.0),
        sigma=("float", 1.0), alpha_min=("float", 0.05),
        alpha_max=("float", 6.0), n_alphas=("int", 120),
        spacing=("str", "linear"),
    ),
    "simulate": _schema(
        optimizer=("str", "nag_gs"), dim=("int", 3), mu=("float", 1.0),
        L=("float", 1.9), c=("float", 5.0), sigma=("float", 1.0),
        gamma0=("optfloat", None), alphas=("floats", ()),
        n_points=("int", 20000), n_steps=("int", 200),
        scatter=("bool", True), threshold=("float", 1e8),
    ),
    "stationary": _schema(
        function=("str", "f1"), alpha=("float", 8e-3), sigma=("float", 1e-3),
        mu=("float", 1.0 / 33.0), gamma0=("optfloat", None),
        n_points=("int", 100), n_steps=("int", 3000),
        domain_lo=("float", -6.0), domain_hi=("float", 6.0),
        grid_nodes=("int", 2 ** 19 + 1), n_reference=("int", 4096),
        knn_k=("int", 1), record_every=("int", 0), threshold=("float", 1e8),
    ),
    "train": _schema(
        dataset=("str", "blobs"), n_samples=("int", 200), blob_dim=("int", 2),
        separation=("float", 3.0), scale=("float", 1.4),
        label_col=("int", 0), feature_cols=("ints", ()),
        has_header=("bool", False), standardize=("bool", False),
        positive_label=("optstr", None), test_fraction=("float", 0.25),
        l2_reg=("float", 1.0),
        optimizers=("strs", ("nag_gs", "sgd_momentum", "adamw")),
        lrs=("floats", ()), lr_min=("float", 1e-2), lr_max=("float", 10.0),
        n_lrs=("int", 10), epochs=("int", 300), batch_size=("int", 0),
        mu=("float", 1.0), gamma0=("float", 1.0), momentum=("float", 0.9),
        weight_decay=("float", 0.0),
    ),
    "spectrum": _schema(
        dataset=("str", "blobs"), n_samples=("int", 200), blob_dim=("int", 2),
        separation=("float", 3.0), scale=("float", 1.4),
        label_col=("int", 0), feature_cols=("ints", ()),
        has_header=("bool", False), standardize=("bool", False),
        positive_label=("optstr", None), test_fraction=("float", 0.25),
        l2_reg=("float", 1.0), optimizer=("str", "nag_gs"),
        lr=("float", 0.5), epochs=("int", 300), batch_size=("int", 0),
        checkpoint_every=("int", 0), mu=("float", 1.0),
        gamma0=("float", 1.0), momentum=("float", 0.9),
        weight_decay=("float", 0.0), tol=("float", 1e-10),
    ),
    "sweep": _schema(
        n_trials=("int", 200), budget=("int", 200),
        objective=("str", "quadratic"), threshold=("float", 1e8),
        axes=("strs", ("alpha", "mu")), update_gamma=("bool", False),
        alpha=("float", 1.0), alpha_min=("float", 1e-2),
        alpha_max=("float", 1e2), alpha_scale=("str", "log"),
        gamma=("float", 1.0), gamma_min=("float", 1e-1),
        gamma_max=("float", 1e1), gamma_scale=("str", "log"),
        mu=("float", 1.0), mu_min=("float", -10.0), mu_max=("float", 10.0),
        mu_scale=("str", "linear"),
        dim=("int", 2), obj_mu=("float", 1.0), obj_L=("float", 10.0),
        shift_c=("float", 1.0), n_samples=("int", 200), blob_dim=("int", 2),
        separation=("float", 3.0), scale=("float", 1.4),
        l2_reg=("float", 1.0),
    ),
}


def _coerce(command, key, value, kind):
    def fail(expected):
        raise ConfigError(
            f"{command}: key '{key}' expects {expected}, got {value!r}")

    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail("a number")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            fail("an integer")
        return int(value)
    if kind == "bool":
        if not isinstance(value, bool):
            fail("a boolean")
        return value
    if kind == "str":
        if not isinstance(value, str):
            fail("a string")
        return value
    if kind == "optfloat":
        if value is None:
            return None
        return _coerce(command, key, value, "float")
    if kind == "optstr":
        if value is None:
            return None
        return _coerce(command, key, value, "str")
    if kind in ("floats", "ints", "strs"):
        if not isinstance(value, (list, tuple)):
            fail("a list")
        inner = {"floats": "float", "ints": "int", "strs": "str"}[kind]
        return tuple(_coerce(command, key, v, inner) for v in value)
    raise AssertionError(f"unhandled kind {kind}")


def _load_config_file(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from None


def _section_for(command, data):
    """Merge top-level keys with the [command] table; other tables must name
    known subcommands (shared config files are allowed, typos are not)."""
    flat = {k: v for k, v in data.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in data.items() if isinstance(v, dict)}
    bad = sorted(set(tables) - set(_SCHEMAS))
    if bad:
        raise ConfigError(f"unknown config sections: {', '.join(bad)}")
    flat.update(tables.get(command, {}))
    return flat


def _parse_set(expr):
    key, sep, raw = expr.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects KEY=VALUE, got {expr!r}")
    key, raw = key.strip(), raw.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw  # bare string, e.g. --set dataset=blobs
    return key, value


def _resolve_config(command, file_cfg, sets, seed_flag, format_flag):
    schema = _SCHEMAS[command]
    merged = dict(file_cfg)
    for expr in sets:
        key, value = _parse_set(expr)
        merged[key] = value
    unknown = sorted(set(merged) - set(schema))
    if unknown:
        raise ConfigError(
            f"{command}: unknown config keys: {', '.join(unknown)} "
            f"(allowed: {', '.join(sorted(schema))})")
    cfg = {k: f.default for k, f in schema.items()}
    for key, value in merged.items():
        cfg[key] = _coerce(command, key, value, schema[key].kind)
    if seed_flag is not None:
        cfg["seed"] = seed_flag
    if format_flag is not None:
        cfg["format"] = format_flag
    if cfg["format"] not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {cfg['format']!r}")
    return cfg


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# output helpers

def _py(value):
    """JSON-safe scalar: numpy types unwrapped, non-finite floats -> null."""
    if value is None or isinstance(value, (bool, np.bool_)):
        return None if value is None else bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        f = float(value)
        return f if math.isfinite(f) else None
    return str(value)


def _emit_table(out_dir, stem, fieldnames, rows, meta, fmt, quiet):
    path = os.path.join(out_dir, f"{stem}.{fmt}")
    if fmt == "csv":
        io.write_csv(path, fieldnames, rows, meta=meta)
    else:
        payload = {"rows": [dict(zip(fieldnames, (_py(v) for v in row)))
                            for row in rows]}
        io.write_json(path, payload, meta=meta)
    if not quiet:
        print(f"wrote {path}")
    return path


def _emit_summary(out_dir, payload, meta, quiet):
    path = os.path.join(out_dir, "summary.json")
    io.write_json(path, payload, meta=meta)
    if not quiet:
        print(f"wrote {path}")
    return path


# ---------------------------------------------------------------------------
# analyze

def _validate_analyze(cfg):
    _require(cfg["mu"] > 0.0, "mu must be positive")
    _require(cfg["L"] >= cfg["mu"], "need mu <= L")
    _require(cfg["gamma"] >= cfg["mu"],
             "the stability theory needs gamma >= mu")
    _require(cfg["sigma"] >= 0.0, "sigma must be non-negative")
    _require(cfg["alpha_min"] > 0.0, "alpha_min must be positive")
    _require(cfg["alpha_max"] > cfg["alpha_min"],
             "alpha_max must exceed alpha_min")
    _require(cfg["n_alphas"] >= 2, "n_alphas must be at least 2")
    _require(cfg["spacing"] in ("linear", "log"),
             "spacing must be 'linear' or 'log'")


def cmd_analyze(cfg, out_dir, fmt, quiet, jobs):
    mu, L, gamma, sigma = cfg["mu"], cfg["L"], cfg["gamma"], cfg["sigma"]
    space = np.linspace if cfg["spacing"] == "linear" else np.geomspace
    alphas = space(cfg["alpha_min"], cfg["alpha_max"], cfg["n_alphas"])
    meta = io.make_meta("analyze", cfg["seed"], cfg)

    curve_rows = []
    cov_rows = []
    for alpha in alphas:
        scfg = SpectrumConfig(mu=mu, L=L, gamma=gamma, alpha=float(alpha),
                              sigma=sigma)
        lams = iteration_eigenvalues(scfg)
        rho = float(np.max(np.abs(lams)))
        stable = rho < 1.0
        curve_rows.append((float(alpha), *(float(abs(l)) for l in lams),
                           rho, stable))
        if sigma > 0.0 and stable:
            cov = stationary_covariance(scfg)
            ceigs = np.sort(np.linalg.eigvalsh(cov.C))[::-1]
            cov_rows.append((float(alpha), *(float(c) for c in ceigs), stable))

    _emit_table(out_dir, "eigencurve",
                ("alpha", "lam1_abs", "lam2_abs", "lam3_abs", "lam4_abs",
                 "rho", "stable"), curve_rows, meta, fmt, quiet)
    if sigma > 0.0:
        _emit_table(out_dir, "covariance",
                    ("alpha", "ceig1", "ceig2", "ceig3", "ceig4", "stable"),
                    cov_rows, meta, fmt, quiet)

    alpha_star = optimal_alpha(mu, L, gamma)
    alpha_crit = critical_alpha(mu, L, gamma)
    rho_star = None
    if math.isfinite(alpha_star):
        rho_star = float(np.max(np.abs(iteration_eigenvalues(
            SpectrumConfig(mu=mu, L=L, gamma=gamma, alpha=alpha_star,
                           sigma=sigma)))))
    _emit_summary(out_dir, {
        "alpha_star": _py(alpha_star),
        "alpha_crit": _py(alpha_crit),
        "rho_at_alpha_star": _py(rho_star),
    }, meta, quiet)


# ---------------------------------------------------------------------------
# simulate

def _validate_simulate(cfg):
    _require(cfg["optimizer"] in ("nag_gs", "nag_fi", "gf_euler"),
             "optimizer must be nag_gs, nag_fi or gf_euler")
    _require(cfg["dim"] >= 2, "dim must be at least 2")
    _require(0.0 < cfg["mu"] <= cfg["L"], "need 0 < mu <= L")
    _require(cfg["sigma"] >= 0.0, "sigma must be non-negative")
    _require(cfg["gamma0"] is None or cfg["gamma0"] > 0.0,
             "gamma0 must be positive when given")
    _require(all(a > 0.0 for a in cfg["alphas"]),
             "alphas must all be positive")
    _require(cfg["n_points"] >= 1 and cfg["n_steps"] >= 1,
             "n_points and n_steps must be positive")
    _require(cfg["threshold"] > 0.0, "threshold must be positive")
    if not cfg["alphas"]:
        gamma = cfg["mu"] if cfg["gamma0"] is None else cfg["gamma0"]
        _require(gamma >= cfg["mu"],
                 "auto alpha selection needs gamma0 >= mu")
        astar = optimal_alpha(cfg["mu"], cfg["L"], gamma)
        _require(math.isfinite(astar),
                 "alphas must be given explicitly when mu = L")
        cfg["alphas"] = (astar / 2.0, astar, 2.0 * astar, 10.0 * astar)


def _coord_names(dim):
    base = ("x", "y", "z")
    return [base[i] if i < 3 else f"c{i + 1}" for i in range(dim)]


def _planes(dim):
    if dim == 2:
        return [(0, 1)]
    return [(0, 1), (1, 2), (0, 2)]


def cmd_simulate(cfg, out_dir, fmt, quiet, jobs):
    exp = QuadraticExperiment(
        alphas=tuple(cfg["alphas"]), dim=cfg["dim"], mu=cfg["mu"], L=cfg["L"],
        c=cfg["c"], sigma=cfg["sigma"], gamma0=cfg["gamma0"],
        n_points=cfg["n_points"], n_steps=cfg["n_steps"], seed=cfg["seed"])
    result = run_quadratic_ensemble(exp, cfg["optimizer"],
                                    threshold=cfg["threshold"])
    meta = io.make_meta("simulate", cfg["seed"], cfg)
    _emit_table(out_dir, "metrics", ("iteration", "metric", "method", "value"),
                result.series.rows, meta, fmt, quiet)

    if not cfg["scatter"]:
        return
    names = _coord_names(exp.dim)
    for idx, alpha in enumerate(exp.alphas, start=1):
        points = result.final_points[alpha]
        alive = np.flatnonzero(~result.diverged[alpha])
        rows = []
        for i, j in _planes(exp.dim):
            plane = names[i] + names[j]
            for pid in alive:
                rows.append((int(pid), names[i], float(points[pid, i]), plane))
                rows.append((int(pid), names[j], float(points[pid, j]), plane))
        scatter_meta = dict(meta)
        scatter_meta["alpha"] = float(alpha)
        _emit_table(out_dir, f"scatter_{idx:02d}",
                    ("point_id", "coord", "value", "plane"),
                    rows, scatter_meta, fmt, quiet)


# ---------------------------------------------------------------------------
# stationary

def _validate_stationary(cfg):
    _require(cfg["function"] in _FUNCTION_ALIASES,
             f"function must be one of {sorted(_FUNCTION_ALIASES)}")
    _require(cfg["alpha"] > 0.0, "alpha must be positive")
    _require(cfg["sigma"] > 0.0, "sigma must be positive")
    _require(cfg["mu"] > 0.0, "mu must be positive")
    _require(cfg["gamma0"] is None or cfg["gamma0"] > 0.0,
             "gamma0 must be positive when given")
    _require(cfg["knn_k"] >= 1, "knn_k must be at least 1")
    _require(cfg["n_points"] > cfg["knn_k"],
             "n_points must exceed knn_k")
    _require(cfg["n_reference"] > cfg["knn_k"],
             "n_reference must exceed knn_k")
    _require(cfg["n_steps"] >= 1, "n_steps must be positive")
    _require(cfg["domain_hi"] > cfg["domain_lo"], "empty domain")
    _require(cfg["grid_nodes"] >= 3, "grid_nodes must be at least 3")
    _require(cfg["record_every"] >= 0, "record_every must be non-negative")
    _require(cfg["threshold"] > 0.0, "threshold must be positive")


def cmd_stationary(cfg, out_dir, fmt, quiet, jobs):
    scfg = StationarityConfig(
        alpha=cfg["alpha"], sigma=cfg["sigma"], mu=cfg["mu"],
        gamma0=cfg["gamma0"], n_points=cfg["n_points"],
        n_steps=cfg["n_steps"], domain=(cfg["domain_lo"], cfg["domain_hi"]),
        grid_nodes=cfg["grid_nodes"], n_reference=cfg["n_reference"],
        knn_k=cfg["knn_k"], record_every=cfg["record_every"] or None,
        seed=cfg["seed"], threshold=cfg["threshold"])
    series = run_stationarity_study(_FUNCTION_ALIASES[cfg["function"]], scfg)
    meta = io.make_meta("stationary", cfg["seed"], cfg)
    _emit_table(out_dir, "metrics", ("iteration", "metric", "method", "value"),
                series.rows, meta, fmt, quiet)


# ---------------------------------------------------------------------------
# train / spectrum (shared fitting machinery)

def _validate_dataset(cfg):
    if cfg["dataset"] == "blobs":
        _require(cfg["n_samples"] >= 4, "n_samples must be at least 4")
        _require(cfg["blob_dim"] >= 1, "blob_dim must be positive")
        _require(cfg["separation"] > 0.0 and cfg["scale"] > 0.0,
                 "separation and scale must be positive")
    else:
        _require(os.path.exists(cfg["dataset"]),
                 f"dataset file not found: {cfg['dataset']}")
    _require(0.0 <= cfg["test_fraction"] <= 0.5,
             "test_fraction must lie in [0, 0.5]")
    _require(cfg["l2_reg"] >= 0.0, "l2_reg must be non-negative")


def _validate_fit_common(cfg):
    _require(cfg["epochs"] >= 1, "epochs must be positive")
    _require(cfg["batch_size"] >= 0, "batch_size must be non-negative")
    _require(cfg["mu"] > 0.0, "mu must be positive")
    _require(cfg["gamma0"] > 0.0, "gamma0 must be positive")
    _require(0.0 <= cfg["momentum"] < 1.0, "momentum must lie in [0, 1)")
    _require(cfg["weight_decay"] >= 0.0, "weight_decay must be non-negative")


def _validate_train(cfg):
    _validate_dataset(cfg)
    _validate_fit_common(cfg)
    allowed = ("nag_gs", "sgd_momentum", "adamw")
    _require(len(cfg["optimizers"]) > 0, "optimizers must be non-empty")
    _require(all(o in allowed for o in cfg["optimizers"]),
             f"optimizers must be among {allowed}")
    _require(all(lr > 0.0 for lr in cfg["lrs"]), "lrs must be positive")
    if not cfg["lrs"]:
        _require(0.0 < cfg["lr_min"] < cfg["lr_max"],
                 "need 0 < lr_min < lr_max")
        _require(cfg["n_lrs"] >= 1, "n_lrs must be positive")
        cfg["lrs"] = tuple(float(v) for v in
                           np.geomspace(cfg["lr_min"], cfg["lr_max"],
                                        cfg["n_lrs"]))


def _validate_spectrum(cfg):
    _validate_dataset(cfg)
    _validate_fit_common(cfg)
    _require(cfg["optimizer"] in ("nag_gs", "sgd_momentum", "adamw"),
             "optimizer must be nag_gs, sgd_momentum or adamw")
    _require(cfg["lr"] > 0.0, "lr must be positive")
    _require(cfg["checkpoint_every"] >= 0,
             "checkpoint_every must be non-negative")
    _require(cfg["tol"] > 0.0, "tol must be positive")


def _build_dataset(cfg, data_ss, split_ss):
    """Train/test LogisticRegressionProblem pair (test problem unreg)."""
    if cfg["dataset"] == "blobs":
        X, y = make_blobs(cfg["n_samples"], cfg["blob_dim"],
                          separation=cfg["separation"], scale=cfg["scale"],
                          seed=data_ss)
    else:
        try:
            loaded = load_csv_dataset(
                cfg["dataset"], cfg["label_col"],
                feature_cols=list(cfg["feature_cols"]) or None,
                has_header=cfg["has_header"], standardize=cfg["standardize"],
                positive_label=cfg["positive_label"], l2_reg=0.0)
        except ValueError as exc:
            raise ConfigError(f"bad dataset {cfg['dataset']}: {exc}") from None
        X, y = loaded.features, loaded.labels
    n = X.shape[0]
    n_test = int(round(cfg["test_fraction"] * n))
    if n_test == 0:
        train_idx = test_idx = np.arange(n)
    else:
        perm = np.random.default_rng(split_ss).permutation(n)
        test_idx, train_idx = perm[:n_test], perm[n_test:]
    if len(set(y[train_idx])) < 2:
        raise ConfigError("training split holds a single class; "
                          "adjust test_fraction or the dataset")
    train_p = LogisticRegressionProblem(X[train_idx], y[train_idx],
                                        l2_reg=cfg["l2_reg"])
    test_p = LogisticRegressionProblem(X[test_idx], y[test_idx], l2_reg=0.0)
    return train_p, test_p


def _w_bad(w, threshold=1e8):
    return not np.all(np.isfinite(w)) or float(np.abs(w).max()) > threshold


def _fit_logreg(train_p, test_p, optimizer, lr, epochs, batch_size, hp, seed,
                checkpoints=()):
    """Train one (optimizer, lr) cell; returns per-epoch rows, the ok flag
    (finite and strictly decreased final loss), the diverged flag, and
    parameter snapshots at the requested checkpoint epochs.

    batch_size 0 means full-batch; minibatches are reshuffled each epoch
    from the run's own stream. On divergence the loop stops and no further
    rows are recorded.
    """
    w0 = np.zeros(train_p.n_params)
    if optimizer == "nag_gs":
        ocfg = NagGsConfig(alpha=lr, mu=hp["mu"], gamma0=hp["gamma0"],
                           sigma=0.0)
        state = initial_state(w0, hp["gamma0"])
    elif optimizer == "sgd_momentum":
        state = initial_state(w0, 1.0, v0=np.zeros_like(w0))
    elif optimizer == "adamw":
        state = adamw_initial_state(w0)
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")

    rng = np.random.default_rng(seed)
    n = train_p.n_samples

    def stats(w):
        return (float(train_p.loss(w)), float(test_p.loss(w)),
                float(train_p.accuracy(w)), float(test_p.accuracy(w)))

    rows = [(optimizer, float(lr), 0, *stats(state.x))]
    snapshots = {0: w0.copy()} if 0 in checkpoints else {}
    initial_loss = rows[0][3]
    final_loss = initial_loss
    diverged = False

    for epoch in range(1, epochs + 1):
        if batch_size == 0:
            batches = [None]
        else:
            perm = rng.permutation(n)
            batches = [perm[i:i + batch_size]
                       for i in range(0, n, batch_size)]
        with np.errstate(over="ignore", invalid="ignore"):
            for batch in batches:
                try:
                    if optimizer == "nag_gs":
                        x_prop = nag_gs_propose(state, ocfg)
                        _, g = train_p.loss_grad(x_prop, batch)
                        state = nag_gs_step(state, g, ocfg)
                    elif optimizer == "sgd_momentum":
                        _, g = train_p.loss_grad(state.x, batch)
                        state = sgd_momentum_step(state, g, lr,
                                                  momentum=hp["momentum"],
                                                  weight_decay=hp["weight_decay"])
                    else:
                        _, g = train_p.loss_grad(state.x, batch)
                        state = adamw_step(state, g, lr,
                                           weight_decay=hp["weight_decay"])
                except (DivergenceError, DomainError):
                    diverged = True
                    break
                if _w_bad(state.x):
                    diverged = True
                    break
        if diverged:
            break
        row_stats = stats(state.x)
        rows.append((optimizer, float(lr), epoch, *row_stats))
        final_loss = row_stats[0]
        if epoch in checkpoints:
            snapshots[epoch] = state.x.copy()
        if not math.isfinite(final_loss):
            diverged = True
            break

    ok = ((not diverged) and math.isfinite(final_loss)
          and final_loss < initial_loss)
    return rows, ok, diverged, snapshots


_TRAIN_COLUMNS = ("optimizer", "lr", "epoch", "train_loss", "test_loss",
                  "train_acc", "test_acc")


def cmd_train(cfg, out_dir, fmt, quiet, jobs):
    root = np.random.SeedSequence(cfg["seed"])
    data_ss, split_ss, fit_ss = root.spawn(3)
    train_p, test_p = _build_dataset(cfg, data_ss, split_ss)
    hp = {k: cfg[k] for k in ("mu", "gamma0", "momentum", "weight_decay")}

    lrs = cfg["lrs"]
    cells = [(opt, lr) for opt in cfg["optimizers"] for lr in lrs]
    streams = fit_ss.spawn(len(cells))
    rows = []
    summary = {}
    for (opt, lr), stream in zip(cells, streams):
        cell_rows, ok, diverged, _ = _fit_logreg(
            train_p, test_p, opt, lr, cfg["epochs"], cfg["batch_size"],
            hp, stream)
        rows.extend(cell_rows)
        entry = summary.setdefault(opt, {"ok_lrs": [], "diverged_lrs": []})
        entry["ok_lrs" if ok else "diverged_lrs"].append(_py(lr))
    for opt, entry in summary.items():
        entry["max_ok_lr"] = max(entry["ok_lrs"], default=None)

    meta = io.make_meta("train", cfg["seed"], cfg)
    _emit_table(out_dir, "train", _TRAIN_COLUMNS, rows, meta, fmt, quiet)
    _emit_summary(out_dir, {"optimizers": summary, "lrs": [_py(v) for v in lrs]},
                  meta, quiet)


def cmd_spectrum(cfg, out_dir, fmt, quiet, jobs):
    root = np.random.SeedSequence(cfg["seed"])
    data_ss, split_ss, fit_ss, eig_ss = root.spawn(4)
    train_p, test_p = _build_dataset(cfg, data_ss, split_ss)
    hp = {k: cfg[k] for k in ("mu", "gamma0", "momentum", "weight_decay")}

    every = cfg["checkpoint_every"] or max(1, cfg["epochs"] // 10)
    checkpoints = sorted(set(range(0, cfg["epochs"] + 1, every))
                         | {cfg["epochs"]})
    _, _, diverged, snapshots = _fit_logreg(
        train_p, test_p, cfg["optimizer"], cfg["lr"], cfg["epochs"],
        cfg["batch_size"], hp, fit_ss, checkpoints=checkpoints)
    if diverged and not quiet:
        print("training diverged; spectrum covers reached checkpoints only",
              file=sys.stderr)

    rows = []
    eig_streams = eig_ss.spawn(len(checkpoints))
    for epoch, stream in zip(checkpoints, eig_streams):
        if epoch not in snapshots:
            continue
        w = snapshots[epoch]
        op = LinearOperator(dim=train_p.n_params,
                            apply=lambda v, w=w: train_p.hessian_apply(w, v))
        lo, hi = extreme_eigenvalues(op, tol=cfg["tol"],
                                     seed=int(stream.generate_state(1)[0]))
        rows.append((epoch, float(lo.value), float(hi.value)))

    meta = io.make_meta("spectrum", cfg["seed"], cfg)
    _emit_table(out_dir, "spectrum", ("checkpoint", "lambda_min", "lambda_max"),
                rows, meta, fmt, quiet)


# ---------------------------------------------------------------------------
# sweep

def _validate_sweep(cfg):
    _require(cfg["n_trials"] >= 1, "n_trials must be positive")
    _require(cfg["budget"] >= 1, "budget must be positive")
    _require(cfg["objective"] in ("quadratic", "logreg_blobs"),
             "objective must be quadratic or logreg_blobs")
    _require(cfg["threshold"] > 0.0, "threshold must be positive")
    axes = cfg["axes"]
    _require(len(axes) <= 3 and len(set(axes)) == len(axes),
             "axes must be distinct and at most three")
    _require(all(a in ("alpha", "gamma", "mu") for a in axes),
             "axes entries must be among alpha, gamma, mu")
    for p in axes:
        lo, hi = cfg[f"{p}_min"], cfg[f"{p}_max"]
        scale = cfg[f"{p}_scale"]
        _require(lo < hi, f"{p}_min must be below {p}_max")
        _require(scale in ("log", "linear"),
                 f"{p}_scale must be 'log' or 'linear'")
        if scale == "log":
            _require(lo > 0.0, f"log scale needs {p}_min > 0")
    if cfg["objective"] == "quadratic":
        _require(0.0 < cfg["obj_mu"] <= cfg["obj_L"],
                 "need 0 < obj_mu <= obj_L")
        _require(cfg["dim"] >= 2, "dim must be at least 2")
    else:
        _require(cfg["n_samples"] >= 4, "n_samples must be at least 4")
        _require(cfg["blob_dim"] >= 1, "blob_dim must be positive")
        _require(cfg["l2_reg"] >= 0.0, "l2_reg must be non-negative")


def _sweep_trial(args):
    """One random-search trial; returns (final_metric, diverged, status).

    Top-level so process pools can pickle it. Config construction failures
    are 'rejected' (inadmissible parameters, e.g. alpha*mu + gamma <= 0);
    runtime domain exits and threshold crossings are 'diverged'.
    """
    problem, x0, alpha, gamma, mu, budget, threshold, update_gamma = args
    try:
        ocfg = NagGsConfig(alpha=alpha, mu=mu, gamma0=gamma, sigma=0.0,
                           update_gamma=update_gamma)
    except ValueError:
        return None, False, "rejected"
    state = initial_state(x0, gamma)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(budget):
            x_prop = nag_gs_propose(state, ocfg)
            g = np.asarray(problem.grad(x_prop), dtype=float)
            if not np.all(np.isfinite(g)):
                return None, True, "diverged"
            try:
                state = nag_gs_step(state, g, ocfg)
            except (DivergenceError, DomainError):
                return None, True, "diverged"
            if is_diverged(state, threshold):
                return None, True, "diverged"
        if isinstance(problem, Quadratic):
            metric = float(np.linalg.norm(state.x - problem.minimizer))
        else:
            metric = float(problem.loss(state.x))
    if not math.isfinite(metric):
        return None, True, "diverged"
    return metric, False, "ok"


def cmd_sweep(cfg, out_dir, fmt, quiet, jobs):
    root = np.random.SeedSequence(cfg["seed"])
    obj_ss, sample_ss = root.spawn(2)
    if cfg["objective"] == "quadratic":
        problem = make_test_matrix(cfg["obj_mu"], cfg["obj_L"], cfg["dim"],
                                   obj_ss, shift_c=cfg["shift_c"])
        x0 = problem.minimizer + np.ones(cfg["dim"])
    else:
        X, y = make_blobs(cfg["n_samples"], cfg["blob_dim"],
                          separation=cfg["separation"], scale=cfg["scale"],
                          seed=obj_ss)
        problem = LogisticRegressionProblem(X, y, l2_reg=cfg["l2_reg"])
        x0 = np.zeros(problem.n_params)

    # all sampling happens in the parent so worker count cannot change it
    rng = np.random.default_rng(sample_ss)
    trials = []
    for t in range(cfg["n_trials"]):
        params = {}
        for p in ("alpha", "gamma", "mu"):
            if p in cfg["axes"]:
                lo, hi = cfg[f"{p}_min"], cfg[f"{p}_max"]
                if cfg[f"{p}_scale"] == "log":
                    params[p] = float(np.exp(rng.uniform(np.log(lo),
                                                         np.log(hi))))
                else:
                    params[p] = float(rng.uniform(lo, hi))
            else:
                params[p] = cfg[p]
        trials.append((t, params["alpha"], params["gamma"], params["mu"]))

    work = [(problem, x0, alpha, gamma, mu, cfg["budget"], cfg["threshold"],
             cfg["update_gamma"]) for _, alpha, gamma, mu in trials]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_sweep_trial, work, chunksize=8))
    else:
        outcomes = [_sweep_trial(args) for args in work]

    rows = [(t, alpha, gamma, mu, metric, diverged, status)
            for (t, alpha, gamma, mu), (metric, diverged, status)
            in zip(trials, outcomes)]
    meta = io.make_meta("sweep", cfg["seed"], cfg)
    _emit_table(out_dir, "sweep",
                ("trial", "alpha", "gamma", "mu", "final_metric", "diverged",
                 "status"), rows, meta, fmt, quiet)


# ---------------------------------------------------------------------------
# entry point

_VALIDATORS = {
    "analyze": _validate_analyze,
    "simulate": _validate_simulate,
    "stationary": _validate_stationary,
    "train": _validate_train,
    "spectrum": _validate_spectrum,
    "sweep": _validate_sweep,
}

_HANDLERS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "stationary": cmd_stationary,
    "train": cmd_train,
    "spectrum": cmd_spectrum,
    "sweep": cmd_sweep,
}

_DESCRIPTIONS = {
    "analyze": "stability curves and step-size thresholds for a quadratic",
    "simulate": "quadratic SDE ensembles (mean-distance series + scatters)",
    "stationary": "stationary-distribution study on a scalar objective",
    "train": "logistic-regression optimizer comparison over a lr grid",
    "spectrum": "extreme Hessian eigenvalues along a training run",
    "sweep": "random-search phase diagram over alpha/gamma/mu",
}


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="TOML config file (flat keys or a [command] table)")
    common.add_argument("--seed", type=int, metavar="U64",
                        help="override the run seed")
    common.add_argument("--out", default="naglab_out", metavar="DIR",
                        help="output directory (default: naglab_out)")
    common.add_argument("--format", choices=("csv", "json"),
                        help="table format (default: csv)")
    common.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="worker processes for sweep trials")
    common.add_argument("--quiet", action="store_true",
                        help="suppress stdout progress lines")
    common.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE", dest="sets",
                        help="override one config key (repeatable)")

    parser = argparse.ArgumentParser(
        prog="naglab",
        description="Numerical laboratory for NAG-GS and its companions.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command")
    for name, blurb in _DESCRIPTIONS.items():
        sub.add_parser(name, parents=[common], help=blurb, description=blurb)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2

    try:
        file_cfg = _load_config_file(args.config) if args.config else {}
        section = _section_for(args.command, file_cfg)
        cfg = _resolve_config(args.command, section, args.sets, args.seed,
                              args.format)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        _VALIDATORS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    os.makedirs(args.out, exist_ok=True)
    try:
        _HANDLERS[args.command](cfg, args.out, cfg["format"], args.quiet,
                                args.jobs)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

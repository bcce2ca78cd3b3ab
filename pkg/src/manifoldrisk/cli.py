"""Experiment driver: risk sweeps, CSV output, image pipelines, plots.

Every sweep writes one CSV with a fixed column set and a JSON sidecar
recording the configuration and library versions. Rows are keyed by
(experiment, d, k, p, epsilon, trial); rerunning a sweep into an existing
file skips keys already present, so interrupted runs resume. With a fixed
base seed the emitted rows are byte-identical across runs except for the
wall_ms column.

Per-cell randomness: each (cell, trial) derives its own seed by hashing
(base_seed, cell_index, trial_index), so results do not depend on
execution order or thread count.
"""

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import __version__
from .attacks import AttackConfig, minimal_radius_bisect_batch, run_attack_batch
from .classifiers import LinearClassifier, bayes_glm, bayes_gmm
from .dataio import (ImageDataset, filter_by_label, load_mnist, split_dataset,
                     write_image_grid)
from .mfa import MfaBayesClassifier, MfaFitConfig, load_mfa, mfa_fit_em, \
    mfa_sample, save_mfa
from .models import (get_feature_map, random_glm, random_gmm,
                     random_gmm_sphere_rows, sample_glm, sample_gmm)
from .numerics import mix64
from .risk import (AdversaryBudget, binomial_se, condition_ratio,
                   e1_classifier_br_closed, exact_linear_oracle, glm_br_bound,
                   gmm_br_bound, linear_br_bound, linear_gmm_risks_closed,
                   monte_carlo_risks, pgd_sandwich_oracle)
from .training import RobustErmConfig, kernel_component_ratio, robust_erm_fit

CSV_COLUMNS = (
    "experiment", "d", "k", "ratio", "p", "epsilon", "trial",
    "sr", "sr_se", "ar_lo", "ar_hi", "ar_se", "br_lo", "br_hi", "br_se",
    "bound", "cond_ratio", "seed", "wall_ms",
)
KEY_COLUMNS = ("experiment", "d", "k", "p", "epsilon", "trial")

ERM_DIAG_COLUMNS = (
    "experiment", "d", "k", "p", "epsilon", "trial",
    "kernel_ratio", "converged", "iterations", "final_objective",
    "gradient_norm", "seed",
)
RADIUS_COLUMNS = (
    "experiment", "mixture_size", "factor_dim", "n", "median_radius",
    "mean_radius", "found_fraction", "radius_max", "seed",
)

# seed-stream tags keep fit/eval/generation draws disjoint per base seed
_TAG_FIT = 101
_TAG_EVAL = 202


@dataclass(frozen=True)
class ExperimentConfig:
    """Bag of knobs for every subcommand; unused fields are ignored.

    JSON config files map onto these field names; command-line flags win
    over the file, which wins over the defaults.
    """

    kind: str
    out_dir: str = "results"
    base_seed: int = 0
    threads: int = 1
    full_grid: bool = False
    # synthetic-model sweeps
    d: int = 300
    k_grid: tuple = ()
    epsilons: tuple = (0.0, 1.0, 2.0, 4.0)
    p: float = 2.0
    phi: str = "identity"
    link: str = "logistic"
    pi: float = 0.5
    trials: int = 20
    n_mc: int = 100_000
    # robust training
    n_train: int = 300
    train_max_iterations: int = 5000
    # image pipeline
    mnist_dir: str = None
    digits: tuple = (0, 6)
    mixture_sizes: tuple = (1,)
    factor_dims: tuple = (1, 10, 100)
    em_max_iterations: int = 200
    em_tolerance: float = 1e-7
    # pixel-noise scale for image fits; the library floor (1e-6) lets
    # attacks exploit quantization-dead pixels and masks the geometry
    variance_floor: float = 5e-2
    model_dir: str = None
    n_generate: int = 5000
    test_fraction: float = 0.2
    attack_epsilon: float = 12.0
    pgd_steps: int = 40
    radius_samples: int = 200
    radius_iters: int = 9
    radius_max: float = 28.0


_KIND_DEFAULTS = {
    "gmm-sweep": {},
    "glm-sweep": {},
    "erm-sweep": {"d": 100, "trials": 20},
    "prop2-check": {"d": 150, "k_grid": (1, 5, 25, 125),
                    "epsilons": (1.0,), "n_mc": 10_000},
    "mfa-fit": {},
    "mfa-eval": {},
}

_TUPLE_FIELDS = {"k_grid", "epsilons", "digits", "mixture_sizes",
                 "factor_dims"}


def default_config(kind):
    if kind not in _KIND_DEFAULTS:
        raise ValueError("unknown experiment kind %r" % kind)
    return ExperimentConfig(kind=kind, **_KIND_DEFAULTS[kind])


def load_config(kind, config_path=None, **overrides):
    """Build a config from defaults, an optional JSON file, and overrides."""
    cfg = default_config(kind)
    if config_path:
        with open(config_path) as f:
            raw = json.load(f)
        raw.pop("kind", None)
        unknown = set(raw) - set(cfg.__dataclass_fields__)
        if unknown:
            raise ValueError("unknown config keys: %s" % sorted(unknown))
        for name in _TUPLE_FIELDS & set(raw):
            raw[name] = tuple(raw[name])
        cfg = replace(cfg, **raw)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def resolve_k_grid(cfg):
    """Explicit grid if given; else ten geometric points between 1 and d,
    or every integer under --full-grid."""
    if cfg.k_grid:
        return tuple(int(k) for k in cfg.k_grid)
    if cfg.full_grid:
        return tuple(range(1, cfg.d + 1))
    pts = np.geomspace(1.0, float(cfg.d), 10)
    return tuple(sorted(set(int(round(v)) for v in pts)))


def _fmt(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _row_line(row, columns):
    return ",".join(_fmt(row[c]) for c in columns)


def _key_of(row):
    return tuple(_fmt(row[c]) for c in KEY_COLUMNS)


def _existing_keys(path):
    if not os.path.exists(path):
        return set()
    keys = set()
    with open(path) as f:
        header = f.readline().strip().split(",")
        idx = [header.index(c) for c in KEY_COLUMNS]
        for line in f:
            parts = line.rstrip("\n").split(",")
            if len(parts) >= len(header):
                keys.add(tuple(parts[i] for i in idx))
    return keys


def _append_rows(path, rows, columns):
    fresh = not os.path.exists(path)
    with open(path, "a") as f:
        if fresh:
            f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(_row_line(row, columns) + "\n")


def _write_sidecar(csv_path, cfg, extra=None):
    meta = {
        "config": asdict(cfg),
        "package_version": __version__,
        "numpy_version": np.__version__,
        "columns": list(CSV_COLUMNS),
        "key_columns": list(KEY_COLUMNS),
    }
    try:
        import scipy
        meta["scipy_version"] = scipy.__version__
    except ImportError:
        pass
    if extra:
        meta.update(extra)
    with open(csv_path + ".meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def _run_tasks(tasks, worker, threads):
    """Map worker over tasks; list order is task order either way."""
    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, tasks))
    return [worker(t) for t in tasks]


def _report_fields(report):
    return {
        "sr": report.sr, "sr_se": report.sr_se,
        "ar_lo": report.ar_lo, "ar_hi": report.ar_hi, "ar_se": report.ar_se,
        "br_lo": report.br_lo, "br_hi": report.br_hi, "br_se": report.br_se,
    }


def _sweep_scaffold(cfg, csv_name):
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, csv_name)
    return path, _existing_keys(path)


def run_gmm_sweep(cfg):
    """Bayes-classifier risks on random mixture instances over a k grid.

    Identity feature maps get exact closed-form risks; nonlinear maps get
    the certificate/attack interval from Monte Carlo. One row per
    (k, epsilon, trial).
    """
    path, have = _sweep_scaffold(cfg, "gmm_sweep.csv")
    k_grid = resolve_k_grid(cfg)
    cells = [(ci, k, eps)
             for ci, (k, eps) in enumerate(
                 (k, e) for k in k_grid for e in cfg.epsilons)]
    tasks = []
    for ci, k, eps in cells:
        for trial in range(cfg.trials):
            row_id = {"experiment": cfg.kind, "d": cfg.d, "k": k,
                      "p": cfg.p, "epsilon": eps, "trial": trial}
            if _key_of(row_id) in have:
                continue
            tasks.append((ci, k, eps, trial))

    def worker(task):
        ci, k, eps, trial = task
        seed = mix64(cfg.base_seed, ci, trial)
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        model = random_gmm(cfg.d, k, rng, pi=cfg.pi,
                           phi=get_feature_map(cfg.phi))
        clf = bayes_gmm(model)
        budget = AdversaryBudget(p=cfg.p, epsilon=eps)
        if model.phi.name == "identity":
            report = linear_gmm_risks_closed(model, clf, budget)
        else:
            oracle = pgd_sandwich_oracle(clf.direction, clf.threshold,
                                         model.phi, budget, cfg.d)
            report = monte_carlo_risks(
                lambda m, r: sample_gmm(model, m, r), oracle, cfg.n_mc, rng)
        bound = (gmm_br_bound(model, budget)
                 if model.phi.c is not None else float("nan"))
        row = {"experiment": cfg.kind, "d": cfg.d, "k": k,
               "ratio": cfg.d / k, "p": cfg.p, "epsilon": eps,
               "trial": trial, "bound": bound,
               "cond_ratio": condition_ratio(model.W, budget),
               "seed": seed}
        row.update(_report_fields(report))
        row["wall_ms"] = int(round(1000 * (time.perf_counter() - t0)))
        return row

    rows = _run_tasks(tasks, worker, cfg.threads)
    _append_rows(path, rows, CSV_COLUMNS)
    _write_sidecar(path, cfg, {"k_grid": list(k_grid)})
    return [path]


def run_glm_sweep(cfg):
    """Bayes-classifier risks for single-index models over a k grid.

    The decision is linear in the latent preimage, so the exact margin
    oracle applies for the identity map; nonlinear maps fall back to the
    Monte Carlo sandwich.
    """
    path, have = _sweep_scaffold(cfg, "glm_sweep.csv")
    k_grid = resolve_k_grid(cfg)
    cells = [(ci, k, eps)
             for ci, (k, eps) in enumerate(
                 (k, e) for k in k_grid for e in cfg.epsilons)]
    tasks = []
    for ci, k, eps in cells:
        for trial in range(cfg.trials):
            row_id = {"experiment": cfg.kind, "d": cfg.d, "k": k,
                      "p": cfg.p, "epsilon": eps, "trial": trial}
            if _key_of(row_id) in have:
                continue
            tasks.append((ci, k, eps, trial))

    def worker(task):
        ci, k, eps, trial = task
        seed = mix64(cfg.base_seed, ci, trial)
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        model = random_glm(cfg.d, k, rng, link=cfg.link,
                           phi=get_feature_map(cfg.phi))
        clf = bayes_glm(model)
        budget = AdversaryBudget(p=cfg.p, epsilon=eps)
        if model.phi.name == "identity":
            oracle = exact_linear_oracle(clf, budget)
        else:
            oracle = pgd_sandwich_oracle(clf.direction, clf.threshold,
                                         model.phi, budget, cfg.d)
        report = monte_carlo_risks(
            lambda m, r: sample_glm(model, m, r), oracle, cfg.n_mc, rng)
        bounds = glm_br_bound(model, budget)
        row = {"experiment": cfg.kind, "d": cfg.d, "k": k,
               "ratio": cfg.d / k, "p": cfg.p, "epsilon": eps,
               "trial": trial,
               "bound": min(bounds.lipschitz, bounds.two_phi),
               "cond_ratio": condition_ratio(model.W, budget),
               "seed": seed}
        row.update(_report_fields(report))
        row["wall_ms"] = int(round(1000 * (time.perf_counter() - t0)))
        return row

    rows = _run_tasks(tasks, worker, cfg.threads)
    _append_rows(path, rows, CSV_COLUMNS)
    _write_sidecar(path, cfg, {"k_grid": list(k_grid)})
    return [path]


def run_erm_sweep(cfg):
    """Robust logistic training on sampled data, then exact evaluation.

    Each cell trains at its own epsilon and is evaluated at the same
    budget. A diagnostics CSV records the kernel component of the learned
    direction and the optimizer exit state.
    """
    path, have = _sweep_scaffold(cfg, "erm_sweep.csv")
    diag_path = os.path.join(cfg.out_dir, "erm_diagnostics.csv")
    k_grid = resolve_k_grid(cfg)
    cells = [(ci, k, eps)
             for ci, (k, eps) in enumerate(
                 (k, e) for k in k_grid for e in cfg.epsilons)]
    tasks = []
    for ci, k, eps in cells:
        for trial in range(cfg.trials):
            row_id = {"experiment": cfg.kind, "d": cfg.d, "k": k,
                      "p": cfg.p, "epsilon": eps, "trial": trial}
            if _key_of(row_id) in have:
                continue
            tasks.append((ci, k, eps, trial))

    def worker(task):
        ci, k, eps, trial = task
        seed = mix64(cfg.base_seed, ci, trial)
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        model = random_gmm(cfg.d, k, rng, pi=cfg.pi,
                           phi=get_feature_map(cfg.phi))
        train = sample_gmm(model, cfg.n_train, rng)
        fit = robust_erm_fit(
            train,
            RobustErmConfig(epsilon=eps, p=cfg.p,
                            max_iterations=cfg.train_max_iterations),
            rng)
        clf = LinearClassifier(fit.theta)
        budget = AdversaryBudget(p=cfg.p, epsilon=eps)
        if model.phi.name == "identity":
            report = linear_gmm_risks_closed(model, clf, budget)
        else:
            report = monte_carlo_risks(
                lambda m, r: sample_gmm(model, m, r),
                exact_linear_oracle(clf, budget), cfg.n_mc, rng)
        row = {"experiment": cfg.kind, "d": cfg.d, "k": k,
               "ratio": cfg.d / k, "p": cfg.p, "epsilon": eps,
               "trial": trial,
               "bound": linear_br_bound(fit.theta, model.W, budget),
               "cond_ratio": condition_ratio(model.W, budget),
               "seed": seed}
        row.update(_report_fields(report))
        row["wall_ms"] = int(round(1000 * (time.perf_counter() - t0)))
        diag = {"experiment": cfg.kind, "d": cfg.d, "k": k, "p": cfg.p,
                "epsilon": eps, "trial": trial,
                "kernel_ratio": kernel_component_ratio(fit.theta, model.W),
                "converged": fit.converged,
                "iterations": fit.iterations_used,
                "final_objective": fit.final_objective,
                "gradient_norm": fit.gradient_norm,
                "seed": seed}
        return row, diag

    results = _run_tasks(tasks, worker, cfg.threads)
    _append_rows(path, [r for r, _ in results], CSV_COLUMNS)
    _append_rows(diag_path, [d for _, d in results], ERM_DIAG_COLUMNS)
    _write_sidecar(path, cfg, {"k_grid": list(k_grid),
                               "diagnostics": os.path.basename(diag_path)})
    return [path, diag_path]


def run_prop2_check(cfg):
    """First-coordinate classifier on unit-row designs across k.

    The bound column holds the exact closed-form boundary risk of this
    classifier, for comparison against the Monte Carlo estimate and the
    k-independent floor.
    """
    path, have = _sweep_scaffold(cfg, "prop2_check.csv")
    k_grid = resolve_k_grid(cfg)
    cells = [(ci, k, eps)
             for ci, (k, eps) in enumerate(
                 (k, e) for k in k_grid for e in cfg.epsilons)]
    tasks = []
    for ci, k, eps in cells:
        for trial in range(cfg.trials):
            row_id = {"experiment": cfg.kind, "d": cfg.d, "k": k,
                      "p": cfg.p, "epsilon": eps, "trial": trial}
            if _key_of(row_id) in have:
                continue
            tasks.append((ci, k, eps, trial))

    def worker(task):
        ci, k, eps, trial = task
        seed = mix64(cfg.base_seed, ci, trial)
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        model = random_gmm_sphere_rows(cfg.d, k, rng, pi=0.5)
        e1 = np.zeros(cfg.d)
        e1[0] = 1.0
        clf = LinearClassifier(e1)
        budget = AdversaryBudget(p=cfg.p, epsilon=eps)
        closed = e1_classifier_br_closed(model, budget)
        report = monte_carlo_risks(
            lambda m, r: sample_gmm(model, m, r),
            exact_linear_oracle(clf, budget), cfg.n_mc, rng)
        row = {"experiment": cfg.kind, "d": cfg.d, "k": k,
               "ratio": cfg.d / k, "p": cfg.p, "epsilon": eps,
               "trial": trial, "bound": closed,
               "cond_ratio": float("nan"), "seed": seed}
        row.update(_report_fields(report))
        row["wall_ms"] = int(round(1000 * (time.perf_counter() - t0)))
        return row

    rows = _run_tasks(tasks, worker, cfg.threads)
    _append_rows(path, rows, CSV_COLUMNS)
    _write_sidecar(path, cfg, {"k_grid": list(k_grid)})
    return [path]


def _mfa_model_path(out_dir, digit, K, ell):
    return os.path.join(out_dir, "mfa_digit%d_K%d_ell%d.mfa" % (digit, K, ell))


def run_mfa_fit(cfg):
    """Fit one mixture model per (digit, K, ell) cell on real images.

    Saves the binary model files plus a PGM grid of fresh samples from
    each fitted model and a JSON summary of the fits.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    data = load_mnist(cfg.mnist_dir)
    cells = [(digit, K, ell)
             for digit in cfg.digits
             for K in cfg.mixture_sizes
             for ell in cfg.factor_dims]
    summaries = []
    paths = []
    for idx, (digit, K, ell) in enumerate(cells):
        seed = mix64(cfg.base_seed, _TAG_FIT, idx)
        rng = np.random.default_rng(seed)
        sub = filter_by_label(data, {digit})
        t0 = time.perf_counter()
        fit = mfa_fit_em(
            sub.images, K, ell,
            MfaFitConfig(max_iterations=cfg.em_max_iterations,
                         tolerance=cfg.em_tolerance,
                         variance_floor=cfg.variance_floor),
            rng)
        wall = time.perf_counter() - t0
        model_path = _mfa_model_path(cfg.out_dir, digit, K, ell)
        save_mfa(fit.model, model_path)
        paths.append(model_path)
        samples = np.clip(mfa_sample(fit.model, 64, rng), 0.0, 1.0)
        grid_path = os.path.join(
            cfg.out_dir, "samples_digit%d_K%d_ell%d.pgm" % (digit, K, ell))
        write_image_grid(samples, data.width, data.height, 8, grid_path)
        paths.append(grid_path)
        summaries.append({
            "digit": digit, "K": K, "ell": ell, "n_train": len(sub),
            "iterations": fit.iterations, "converged": fit.converged,
            "final_avg_loglik": fit.trace[-1], "reseeds": len(fit.reseeds),
            "seed": seed, "wall_s": round(wall, 3),
            "model_file": os.path.basename(model_path),
        })
        print("fit digit=%d K=%d ell=%d: %d iters, avg ll %.2f"
              % (digit, K, ell, fit.iterations, fit.trace[-1]))
    summary_path = os.path.join(cfg.out_dir, "mfa_fit_summary.json")
    with open(summary_path, "w") as f:
        json.dump({"config": asdict(cfg), "fits": summaries}, f,
                  indent=2, sort_keys=True)
        f.write("\n")
    paths.append(summary_path)
    return paths


def _attack_rows(cfg, clf, x_test, y_test, ell, K, seed):
    """Gradient attacks on held-out generated images; one row per attack.

    Attack success only lower-bounds the adversarial risk here (no
    certificate exists for the mixture classifier), so the upper-interval
    columns are NaN.
    """
    n = len(y_test)
    d = x_test.shape[1]
    clean_ok = clf.classify(x_test) == y_test
    sr = float(np.mean(~clean_ok))

    def loss_fn(x, y):
        return -np.asarray(y, dtype=np.float64) * clf.score(x)

    def grad_fn(x, y):
        return (-np.asarray(y, dtype=np.float64)[:, None]
                * clf.score_gradient(x))

    rows = []
    adv_cache = {}
    for kind in ("fgm", "pgd"):
        t0 = time.perf_counter()
        attack = AttackConfig(kind=kind, epsilon=cfg.attack_epsilon,
                              steps=cfg.pgd_steps, clip=(0.0, 1.0))
        x_adv, flipped = run_attack_batch(
            x_test, y_test, grad_fn, attack,
            loss_fn=loss_fn, classify=clf.classify)
        adv_cache[kind] = x_adv
        ar_lo = float(np.mean(~clean_ok | flipped))
        br_lo = ar_lo - sr
        paired = (clean_ok & flipped).astype(float)
        row = {"experiment": "mfa-" + kind, "d": d, "k": ell,
               "ratio": d / ell, "p": 2.0, "epsilon": cfg.attack_epsilon,
               "trial": K,
               "sr": sr, "sr_se": binomial_se(sr, n),
               "ar_lo": ar_lo, "ar_hi": float("nan"),
               "ar_se": binomial_se(ar_lo, n),
               "br_lo": br_lo, "br_hi": float("nan"),
               "br_se": binomial_se(float(paired.mean()), n),
               "bound": float("nan"), "cond_ratio": float("nan"),
               "seed": seed,
               "wall_ms": int(round(1000 * (time.perf_counter() - t0)))}
        rows.append(row)
    return rows, adv_cache


def run_mfa_eval(cfg):
    """Attack fitted image models: risks, example grids, flip radii.

    For each (K, ell): generate a balanced labeled set from the two
    fitted models, split it, attack the test side under an l2 budget with
    box clipping, and bisect per-sample minimal flip radii on a subset.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    model_dir = cfg.model_dir or cfg.out_dir
    path = os.path.join(cfg.out_dir, "mfa_eval.csv")
    have = _existing_keys(path)
    radius_path = os.path.join(cfg.out_dir, "mfa_radius.csv")
    neg_digit, pos_digit = cfg.digits[0], cfg.digits[1]
    rows, radius_rows, extra_paths = [], [], []
    for idx, (K, ell) in enumerate(
            (K, ell) for K in cfg.mixture_sizes for ell in cfg.factor_dims):
        seed = mix64(cfg.base_seed, _TAG_EVAL, idx)
        rng = np.random.default_rng(seed)
        pos = load_mfa(_mfa_model_path(model_dir, pos_digit, K, ell))
        neg = load_mfa(_mfa_model_path(model_dir, neg_digit, K, ell))
        clf = MfaBayesClassifier(model_pos=pos, model_neg=neg)
        half = cfg.n_generate // 2
        x_pos = np.clip(mfa_sample(pos, half, rng), 0.0, 1.0)
        x_neg = np.clip(mfa_sample(neg, cfg.n_generate - half, rng), 0.0, 1.0)
        x_all = np.vstack([x_pos, x_neg])
        y_all = np.concatenate([np.ones(half, dtype=int),
                                -np.ones(cfg.n_generate - half, dtype=int)])
        ds = ImageDataset(images=x_all, labels=y_all,
                          width=int(round(math.sqrt(x_all.shape[1]))),
                          height=int(round(math.sqrt(x_all.shape[1]))))
        _, test = split_dataset(ds, 1.0 - cfg.test_fraction, rng)
        x_test, y_test = test.images, test.labels

        new_rows, adv = _attack_rows(cfg, clf, x_test, y_test, ell, K, seed)
        rows.extend(r for r in new_rows if _key_of(r) not in have)

        # side-by-side grid: originals on top, strongest attack below
        show = min(16, len(x_test))
        grid = np.vstack([x_test[:show], adv["pgd"][:show]])
        grid_path = os.path.join(
            cfg.out_dir, "adversarial_K%d_ell%d.pgm" % (K, ell))
        write_image_grid(np.clip(grid, 0, 1), test.width, test.height,
                         show, grid_path)
        extra_paths.append(grid_path)

        # minimal flip radii on clean-correct test images
        clean_ok = clf.classify(x_test) == y_test
        sel = np.flatnonzero(clean_ok)[:cfg.radius_samples]
        if sel.size:
            x_sel, y_sel = x_test[sel], y_test[sel]

            def loss_fn(x, y):
                return -np.asarray(y, dtype=np.float64) * clf.score(x)

            def grad_fn(x, y):
                return (-np.asarray(y, dtype=np.float64)[:, None]
                        * clf.score_gradient(x))

            probe = AttackConfig(kind="pgd", epsilon=cfg.radius_max,
                                 steps=cfg.pgd_steps, clip=(0.0, 1.0))

            def flips_at(eps_vec):
                _, flipped = run_attack_batch(
                    x_sel, y_sel, grad_fn, probe, loss_fn=loss_fn,
                    classify=clf.classify, epsilon=eps_vec)
                return flipped

            radii, found = minimal_radius_bisect_batch(
                flips_at, sel.size, 0.0, cfg.radius_max,
                iters=cfg.radius_iters)
            radius_rows.append({
                "experiment": "mfa-pgd", "mixture_size": K,
                "factor_dim": ell, "n": sel.size,
                "median_radius": float(np.median(radii)),
                "mean_radius": float(np.mean(radii)),
                "found_fraction": float(np.mean(found)),
                "radius_max": cfg.radius_max, "seed": seed})
        print("eval K=%d ell=%d done" % (K, ell))

    _append_rows(path, rows, CSV_COLUMNS)
    _append_rows(radius_path, radius_rows, RADIUS_COLUMNS)
    _write_sidecar(path, cfg, {"radius_csv": os.path.basename(radius_path)})
    return [path, radius_path] + extra_paths


def run_mfa_pipeline(cfg):
    """Fit then evaluate with models read from the fit output directory."""
    paths = run_mfa_fit(cfg)
    eval_cfg = replace(cfg, kind="mfa-eval", model_dir=cfg.out_dir)
    return paths + run_mfa_eval(eval_cfg)


def _read_csv_rows(path):
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = []
        for line in f:
            parts = line.rstrip("\n").split(",")
            if len(parts) == len(header):
                rows.append(dict(zip(header, parts)))
    return rows


def render_sweep_plot(csv_path, out_path):
    """Boundary risk against d/k, one line per epsilon, shaded by spread.

    The line tracks the mean lower estimate across trials with a one
    standard deviation band; when the upper interval differs (sandwich
    runs) a second lighter band covers up to its mean. A finite bound
    column adds a dashed reference line.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = _read_csv_rows(csv_path)
    if not rows:
        raise ValueError("no data rows in %s" % csv_path)
    experiments = sorted(set(r["experiment"] for r in rows))
    fig, axes = plt.subplots(1, len(experiments), squeeze=False,
                             figsize=(6.4 * len(experiments), 4.8))
    for ax, exp in zip(axes[0], experiments):
        sub = [r for r in rows if r["experiment"] == exp]
        epsilons = sorted(set(float(r["epsilon"]) for r in sub))
        for eps in epsilons:
            pts = {}
            for r in sub:
                if float(r["epsilon"]) != eps:
                    continue
                pts.setdefault(float(r["ratio"]), []).append(
                    (float(r["br_lo"]), float(r["br_hi"]),
                     float(r["bound"])))
            ratios = sorted(pts)
            mean_lo = np.array([np.mean([v[0] for v in pts[q]])
                                for q in ratios])
            std_lo = np.array([np.std([v[0] for v in pts[q]])
                               for q in ratios])
            mean_hi = np.array([np.nanmean([v[1] for v in pts[q]])
                                for q in ratios])
            line, = ax.plot(ratios, mean_lo, marker="o", markersize=3,
                            label="eps=%g" % eps)
            ax.fill_between(ratios, mean_lo - std_lo, mean_lo + std_lo,
                            alpha=0.2, color=line.get_color())
            if np.any(np.isfinite(mean_hi) & (mean_hi > mean_lo + 1e-12)):
                ax.fill_between(ratios, mean_lo, mean_hi, alpha=0.12,
                                color=line.get_color())
            bounds = np.array([np.nanmean([v[2] for v in pts[q]])
                               for q in ratios])
            if eps > 0 and np.any(np.isfinite(bounds)):
                ax.plot(ratios, bounds, linestyle="--", linewidth=1,
                        alpha=0.6, color=line.get_color())
        ax.set_xscale("log")
        ax.set_xlabel("d / k")
        ax.set_ylabel("boundary risk")
        ax.set_title(exp)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path


def run_plot(csv_paths, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    outputs = []
    for csv_path in csv_paths:
        stem = os.path.splitext(os.path.basename(csv_path))[0]
        out_path = os.path.join(out_dir, stem + ".svg")
        outputs.append(render_sweep_plot(csv_path, out_path))
    return outputs


_RUNNERS = {
    "gmm-sweep": run_gmm_sweep,
    "glm-sweep": run_glm_sweep,
    "erm-sweep": run_erm_sweep,
    "prop2-check": run_prop2_check,
    "mfa-fit": run_mfa_fit,
    "mfa-eval": run_mfa_eval,
}


def _add_common_flags(sp):
    sp.add_argument("--config", help="JSON config file")
    sp.add_argument("--seed", type=int, help="base seed")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--threads", type=int, help="worker threads")
    sp.add_argument("--full-grid", action="store_true",
                    help="use every integer k from 1 to d")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="manifoldrisk",
        description="Risk sweeps and attacks for low-dimensional data models")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gmm-sweep": "Bayes risk sweep on mixture instances",
        "glm-sweep": "Bayes risk sweep on single-index instances",
        "erm-sweep": "robust training sweep",
        "prop2-check": "first-coordinate classifier floor check",
        "mfa-fit": "fit image mixture models",
        "mfa-eval": "attack fitted image models",
    }
    for name in _RUNNERS:
        sp = sub.add_parser(name, help=helps[name])
        _add_common_flags(sp)
    pp = sub.add_parser("plot", help="render sweep CSVs to SVG")
    pp.add_argument("csv", nargs="+", help="sweep CSV files")
    pp.add_argument("--out", default="results", help="output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "plot":
        for out in run_plot(args.csv, args.out):
            print(out)
        return 0
    overrides = {"base_seed": args.seed, "out_dir": args.out,
                 "threads": args.threads}
    if args.full_grid:
        overrides["full_grid"] = True
    cfg = load_config(args.command, args.config, **overrides)
    for out in _RUNNERS[args.command](cfg):
        print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())

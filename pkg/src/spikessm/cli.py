"""Command-line entry points: train, eval, cost, gen-data, sweep.

Runs are driven by an INI config file with ``[run]``, ``[dataset]``,
``[network]``, and ``[optimizer]`` sections layered on top of a named
profile (``smnist``, ``dvs``, ``mswc``, ``synthetic``) that embeds the
per-dataset hyperparameter defaults; command-line flags override both.
Every output directory receives the fully-resolved effective config.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.

The ``--threads`` flag controls batch-level parallelism for evaluation and
sweep cells; gradient computation always runs on a single tape per batch.
``--threads 1`` pins the BLAS pools as well and guarantees bit-identical
outputs for a fixed seed.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

_THREAD_ENV_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class ConfigError(Exception):
    pass


PROFILES = {
    "smnist": {
        "dataset": {"name": "smnist"},
        "network": {"c_in": 1, "c_out": 10, "num_hidden_layers": 2,
                    "h": 96, "n": 8, "n_out": 8, "dropout": 0.3,
                    "rho_init": 0.5, "r_bias_init": 0.0},
        "optimizer": {"lr": 1e-3, "lr_ssm": 1e-4, "lr_rho": 1e-5,
                      "lr_r_bias": 1e-5, "wd": 1e-2, "wd_ssm": 1e-3,
                      "wd_rho": 0.0, "wd_r_bias": 0.0},
        "run": {"epochs": 50, "batch_size": 128},
    },
    "dvs": {
        "dataset": {"name": "binned"},
        "network": {"c_in": 32768, "c_out": 11, "num_hidden_layers": 3,
                    "h": 128, "n": 8, "n_out": 24, "dropout": 0.0,
                    "rho_init": 0.8, "r_bias_init": 0.0},
        "optimizer": {"lr": 1e-4, "lr_ssm": 1e-2, "lr_rho": 1e-4,
                      "lr_r_bias": 1e-6, "wd": 0.0, "wd_ssm": 1e-2,
                      "wd_rho": 1e-2, "wd_r_bias": 1e-5},
        "run": {"epochs": 50, "batch_size": 16},
    },
    "mswc": {
        # base LR/WD are regime-dependent, resolved in _mswc_regime_hypers
        "dataset": {"name": "binned", "bin_size": 4},
        "network": {"c_in": 20, "c_out": 100, "num_hidden_layers": 2,
                    "h": 256, "n": 8, "n_out": 4, "dropout": 0.4,
                    "rho_init": 0.1, "r_bias_init": 0.0},
        "optimizer": {"wd_ssm": 1e-3},
        "run": {"epochs": 100, "batch_size": 256},
    },
    "synthetic": {
        "dataset": {"name": "synthetic", "classes": 2, "timesteps": 50,
                    "channels": 8, "train_per_class": 100,
                    "test_per_class": 50, "noise": 0.05,
                    "shared_channels": 6},
        "network": {"c_in": 8, "c_out": 2, "num_hidden_layers": 2,
                    "h": 32, "n": 4, "n_out": 4, "dropout": 0.0,
                    "rho_init": 0.5, "r_bias_init": 0.0},
        "optimizer": {"lr": 1e-2, "lr_ssm": 1e-3, "lr_rho": 1e-3,
                      "lr_r_bias": 1e-3, "wd": 0.0, "wd_ssm": 0.0,
                      "wd_rho": 0.0, "wd_r_bias": 0.0},
        "run": {"epochs": 200, "batch_size": 32},
    },
}


def _mswc_regime_hypers(regime: str, reset: bool) -> dict:
    """Regime-specific base rates; reset parameters follow the base ones."""
    if regime == "stable" and reset:
        lr, lr_ssm, wd = 1e-3, 1e-3, 1e-3
    elif regime == "stable":
        lr, lr_ssm, wd = 1e-2, 1e-2, 1e-4
    else:
        lr, lr_ssm, wd = 1e-3, 1e-3, 1e-4
    return {"lr": lr, "lr_ssm": lr_ssm, "lr_rho": lr, "lr_r_bias": lr,
            "wd": wd, "wd_rho": wd, "wd_r_bias": wd}


_DEFAULTS = {
    "run": {"seed": 0, "epochs": 10, "batch_size": 32, "threads": 1,
            "outdir": "", "eval_batch_size": 256},
    "dataset": {"name": "synthetic", "seed": 0, "limit_train": 0,
                "limit_test": 0, "val_fraction": 0.0, "bin_size": 1,
                "classes": 2, "timesteps": 50, "channels": 8,
                "train_per_class": 100, "test_per_class": 50, "noise": 0.05,
                "shared_channels": 0,
                "train_images": "", "train_labels": "", "test_images": "",
                "test_labels": "", "train_path": "", "test_path": ""},
    "network": {"c_in": 8, "c_out": 2, "num_hidden_layers": 2, "h": 32,
                "n": 4, "n_out": 4, "activation": "nonsigned",
                "regime": "stable", "reset": True, "dropout": 0.0,
                "batch_norm": True, "rho_init": 0.5, "r_bias_init": 0.0,
                "surrogate_width": 0.5, "norm_mode": "complex"},
    "optimizer": {"lr": 1e-3, "lr_ssm": 1e-4, "lr_rho": 1e-5,
                  "lr_r_bias": 1e-5, "wd": 0.0, "wd_ssm": 0.0, "wd_rho": 0.0,
                  "wd_r_bias": 0.0, "grad_clip": 1e5},
}

_BOOL_KEYS = {("network", "reset"), ("network", "batch_norm")}
_INT_KEYS = {
    ("run", "seed"), ("run", "epochs"), ("run", "batch_size"),
    ("run", "threads"), ("run", "eval_batch_size"),
    ("dataset", "seed"), ("dataset", "limit_train"), ("dataset", "limit_test"),
    ("dataset", "bin_size"), ("dataset", "classes"), ("dataset", "timesteps"),
    ("dataset", "channels"), ("dataset", "train_per_class"),
    ("dataset", "test_per_class"), ("dataset", "shared_channels"),
    ("network", "c_in"), ("network", "c_out"),
    ("network", "num_hidden_layers"), ("network", "h"), ("network", "n"),
    ("network", "n_out"),
}
_STR_KEYS = {
    ("run", "outdir"), ("dataset", "name"), ("dataset", "train_images"),
    ("dataset", "train_labels"), ("dataset", "test_images"),
    ("dataset", "test_labels"), ("dataset", "train_path"),
    ("dataset", "test_path"), ("network", "activation"),
    ("network", "regime"), ("network", "norm_mode"),
}


def _coerce(section: str, key: str, value):
    if isinstance(value, str):
        if (section, key) in _BOOL_KEYS:
            low = value.strip().lower()
            if low in ("1", "true", "on", "yes"):
                return True
            if low in ("0", "false", "off", "no"):
                return False
            raise ConfigError(f"[{section}] {key}: not a boolean: {value!r}")
        if (section, key) in _INT_KEYS:
            try:
                return int(value)
            except ValueError:
                raise ConfigError(f"[{section}] {key}: not an integer: "
                                  f"{value!r}") from None
        if (section, key) in _STR_KEYS:
            return value.strip()
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: not a number: "
                              f"{value!r}") from None
    return value


def resolve_config(config_path: str | None = None,
                   profile: str | None = None,
                   overrides: dict | None = None) -> dict:
    """Layer defaults <- profile <- config file <- CLI overrides."""
    cfg = {s: dict(v) for s, v in _DEFAULTS.items()}

    file_profile = None
    parser = None
    if config_path:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        read = parser.read(config_path)
        if not read:
            raise ConfigError(f"cannot read config file {config_path}")
        file_profile = parser.get("run", "profile", fallback=None)

    profile_name = profile or file_profile
    if profile_name:
        if profile_name not in PROFILES:
            raise ConfigError(f"unknown profile {profile_name!r} "
                              f"(choose from {sorted(PROFILES)})")
        for section, values in PROFILES[profile_name].items():
            cfg[section].update(values)
    cfg["run"]["profile"] = profile_name or ""

    if parser is not None:
        for section in parser.sections():
            if section not in cfg:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key == "profile":
                    continue
                if key not in cfg[section]:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                cfg[section][key] = _coerce(section, key, value)

    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        if value is None:
            continue
        if key not in cfg.get(section, {}):
            raise ConfigError(f"unknown override [{section}] {key}")
        cfg[section][key] = _coerce(section, key, value)

    # MSWC base rates depend on the regime/reset pair unless given explicitly
    if cfg["run"]["profile"] == "mswc":
        regime_hypers = _mswc_regime_hypers(cfg["network"]["regime"],
                                            cfg["network"]["reset"])
        explicit = set()
        if parser is not None and parser.has_section("optimizer"):
            explicit = set(parser.options("optimizer"))
        explicit |= {k.split(".", 1)[1] for k, v in (overrides or {}).items()
                     if k.startswith("optimizer.") and v is not None}
        for key, value in regime_hypers.items():
            if key not in explicit:
                cfg["optimizer"][key] = value
    return cfg


def write_config_echo(cfg: dict, path):
    parser = configparser.ConfigParser()
    for section, values in cfg.items():
        parser[section] = {k: str(v) for k, v in values.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def network_config_from(cfg: dict):
    from .network import NetworkConfig

    net = cfg["network"]
    rho = complex(net["rho_init"])
    return NetworkConfig(
        c_in=net["c_in"], c_out=net["c_out"],
        num_hidden_layers=net["num_hidden_layers"], h=net["h"], n=net["n"],
        n_out=net["n_out"], activation=net["activation"],
        regime=net["regime"], reset_enabled=net["reset"],
        dropout_rate=net["dropout"], batch_norm=net["batch_norm"],
        rho_init_re=rho.real, rho_init_im=rho.imag,
        r_bias_init=net["r_bias_init"],
        surrogate_width=net["surrogate_width"], norm_mode=net["norm_mode"])


def param_groups_from(cfg: dict):
    from .training import GroupHyper, ParamGroups

    opt = cfg["optimizer"]
    return ParamGroups(
        ssm=GroupHyper(opt["lr_ssm"], opt["wd_ssm"]),
        other=GroupHyper(opt["lr"], opt["wd"]),
        rho=GroupHyper(opt["lr_rho"], opt["wd_rho"]),
        r_bias=GroupHyper(opt["lr_r_bias"], opt["wd_r_bias"]))


def build_datasets(cfg: dict):
    """Train/test SequenceDatasets per the [dataset] section."""
    from .data import (load_binned_spikes, load_smnist, sum_bin,
                       synth_pattern_task)

    ds = cfg["dataset"]
    name = ds["name"]
    if name == "synthetic":
        train = synth_pattern_task(ds["classes"], ds["timesteps"],
                                   ds["channels"], ds["train_per_class"],
                                   ds["noise"], seed=ds["seed"],
                                   sample_seed=ds["seed"] * 2 + 1,
                                   shared_channels=ds["shared_channels"])
        test = synth_pattern_task(ds["classes"], ds["timesteps"],
                                  ds["channels"], ds["test_per_class"],
                                  ds["noise"], seed=ds["seed"],
                                  sample_seed=ds["seed"] * 2 + 2,
                                  shared_channels=ds["shared_channels"])
    elif name == "smnist":
        for key in ("train_images", "train_labels", "test_images",
                    "test_labels"):
            if not ds[key]:
                raise ConfigError(f"smnist dataset needs [dataset] {key}")
        train, test = load_smnist(ds["train_images"], ds["train_labels"],
                                  ds["test_images"], ds["test_labels"],
                                  seed=ds["seed"])
    elif name == "binned":
        if not ds["train_path"] or not ds["test_path"]:
            raise ConfigError("binned dataset needs train_path and test_path")
        train = load_binned_spikes(ds["train_path"])
        test = load_binned_spikes(ds["test_path"], c_out=train.c_out)
        if ds["bin_size"] > 1:
            for d in (train, test):
                d.sequences = [sum_bin(s, ds["bin_size"]) for s in d.sequences]
    else:
        raise ConfigError(f"unknown dataset name {name!r}")

    import numpy as np
    for limit_key, dataset in (("limit_train", train), ("limit_test", test)):
        limit = ds[limit_key]
        if limit and limit < len(dataset):
            sub = dataset.subset(np.arange(limit))
            if limit_key == "limit_train":
                train = sub
            else:
                test = sub
    return train, test


METRIC_FLOAT_COLUMNS = ("train_loss", "train_acc", "test_acc", "lr")


def write_metrics_csv(metrics: list, num_layers: int, path):
    """Deterministic per-epoch CSV (wall time goes to timing.csv instead)."""
    rate_cols = []
    for i in range(1, num_layers + 1):
        rate_cols += [f"spike_rate_l{i}_mean", f"spike_rate_l{i}_std"]
    header = ["epoch", *METRIC_FLOAT_COLUMNS, *rate_cols]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in metrics:
            cells = [str(row["epoch"])]
            cells += [repr(float(row[c])) for c in METRIC_FLOAT_COLUMNS]
            cells += [repr(float(row.get(c, float("nan")))) for c in rate_cols]
            fh.write(",".join(cells) + "\n")


def write_timing_csv(metrics: list, path):
    with open(path, "w") as fh:
        fh.write("epoch,wall_time_s\n")
        for row in metrics:
            fh.write(f"{row['epoch']},{row['wall_time']:.6f}\n")


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    from .network import build_network
    from .training import FitConfig, fit

    cfg = resolve_config(args.config, args.profile, _overrides_from(args))
    outdir = cfg["run"]["outdir"] or args.outdir
    if not outdir:
        raise ConfigError("train needs an output directory "
                          "(--outdir or [run] outdir)")
    os.makedirs(outdir, exist_ok=True)
    cfg["run"]["outdir"] = str(outdir)
    write_config_echo(cfg, os.path.join(outdir, "effective_config.ini"))

    train_ds, test_ds = build_datasets(cfg)
    net_cfg = network_config_from(cfg)
    if net_cfg.c_in != train_ds.c_in or net_cfg.c_out != train_ds.c_out:
        raise ConfigError(
            f"network expects c_in={net_cfg.c_in}, c_out={net_cfg.c_out} but "
            f"dataset provides c_in={train_ds.c_in}, c_out={train_ds.c_out}")
    net = build_network(net_cfg, seed=cfg["run"]["seed"])

    fit_cfg = FitConfig(
        epochs=cfg["run"]["epochs"], batch_size=cfg["run"]["batch_size"],
        groups=param_groups_from(cfg), seed=cfg["run"]["seed"],
        grad_clip=cfg["optimizer"]["grad_clip"],
        eval_batch_size=cfg["run"]["eval_batch_size"],
        checkpoint_dir=str(outdir),
        log=(lambda msg: print(msg, flush=True)) if not args.quiet else None)
    metrics, _ = fit(net, train_ds, test_ds, fit_cfg)

    write_metrics_csv(metrics, len(net.layers),
                      os.path.join(outdir, "metrics.csv"))
    write_timing_csv(metrics, os.path.join(outdir, "timing.csv"))
    if metrics:
        final = metrics[-1]
        print(f"final: train_acc={final['train_acc']:.4f} "
              f"test_acc={final['test_acc']:.4f}")
    else:
        print("no epochs run; initial checkpoint written")
    return EXIT_OK


def _parallel_eval(net, dataset, batch_size: int, threads: int) -> float:
    from concurrent.futures import ThreadPoolExecutor

    from . import autodiff as ad
    from .data import iterate_batches
    from .network import rate_decode

    batches = list(iterate_batches(dataset, batch_size))

    def run(batch):
        x, labels, mask = batch
        with ad.no_grad():
            logits, _ = net.forward(x, train=False, mask=mask)
        return int((rate_decode(logits.data, mask) == labels).sum())

    if threads <= 1:
        correct = sum(run(b) for b in batches)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            correct = sum(pool.map(run, batches))
    return correct / max(len(dataset), 1)


def cmd_eval(args) -> int:
    from .analysis import accuracy_over_time, drop_channels
    from .network import load_checkpoint

    cfg = resolve_config(args.config, args.profile, _overrides_from(args))
    net, extra = load_checkpoint(args.checkpoint)
    _, test_ds = build_datasets(cfg)
    if net.cfg.c_in != test_ds.c_in:
        raise ConfigError("checkpoint input width does not match dataset")
    batch = cfg["run"]["eval_batch_size"]
    threads = cfg["run"]["threads"]

    lines = []
    acc = _parallel_eval(net, test_ds, batch, threads)
    lines.append(f"test_accuracy,{acc!r}")
    print(f"test accuracy: {acc:.4f}")

    if args.drop_channels:
        which, _, count = args.drop_channels.partition(":")
        try:
            count = int(count)
        except ValueError:
            raise ConfigError("--drop-channels expects first|last:<count>")
        view = drop_channels(net, which, count)
        acc_drop = _parallel_eval(view, test_ds, batch, threads)
        lines.append(f"drop_{which}_{count},{acc_drop!r}")
        print(f"accuracy with {which} {count} channels dropped: {acc_drop:.4f}")

    if args.prefix_steps:
        steps = [int(s) for s in args.prefix_steps.split(",")]
        curve = accuracy_over_time(net, test_ds, steps, batch_size=batch)
        for t, a in curve:
            lines.append(f"prefix_{t},{a!r}")
            print(f"accuracy over first {t} steps: {a:.4f}")

    if args.outdir:
        os.makedirs(args.outdir, exist_ok=True)
        with open(os.path.join(args.outdir, "eval.csv"), "w") as fh:
            fh.write("metric,value\n")
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_cost(args) -> int:
    from .analysis import CostReport

    if min(args.n, args.nout, args.h) < 1:
        raise ConfigError("--n, --nout, --h must be positive integers")
    rep = CostReport.build(n=args.n, n_out=args.nout, h=args.h)
    print(f"per-neuron trainable params p          : {rep.p}")
    print(f"per-layer params (p*h)                 : {rep.p_per_layer}")
    print(f"reset condition MACs m_rc              : {rep.m_rc}")
    print(f"reset action MACs m_ra                 : {rep.m_ra}")
    print(f"reset mechanism MACs m_r               : {rep.m_r}")
    print(f"per-layer reset MACs (m_r*h)           : {rep.m_r_per_layer}")
    print(f"synaptic MACs per step (hidden-hidden) : {rep.synaptic_macs_per_step}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(rep.csv_header + "\n" + rep.csv_row() + "\n")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from .data import save_binned_spikes, synth_pattern_task

    if args.classes < 1:
        raise ConfigError("--classes must be >= 1")
    ds = synth_pattern_task(args.classes, args.timesteps, args.channels,
                            args.samples_per_class, args.noise,
                            seed=args.seed, sample_seed=args.sample_seed,
                            shared_channels=args.shared_channels)
    save_binned_spikes(ds, args.out)
    print(f"wrote {len(ds)} samples ({args.classes} classes, "
          f"T={args.timesteps}, c_in={args.channels}) to {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from concurrent.futures import ThreadPoolExecutor

    from .analysis import SWEEP_CSV_HEADER, architecture_sweep
    from .network import build_network
    from .training import FitConfig, fit

    cfg = resolve_config(args.config, args.profile, _overrides_from(args))
    cells = []
    for cell in args.grid.split(";"):
        parts = [int(p) for p in cell.split(",")]
        if len(parts) != 3:
            raise ConfigError("--grid cells must be h,n,n_out triples")
        cells.append(tuple(parts))
    regime_grid = []
    for item in args.regimes.split(";"):
        regime, _, reset = item.partition(":")
        if regime not in ("stable", "unstable") or reset not in ("on", "off"):
            raise ConfigError("--regimes items must be "
                              "stable|unstable:on|off")
        regime_grid.append((regime, reset == "on"))
    seeds = tuple(int(s) for s in args.seeds.split(","))

    train_ds, test_ds = build_datasets(cfg)

    def run_cell(h, n, n_out, regime, reset, seed):
        cell_cfg = network_config_from(cfg)
        cell_cfg = type(cell_cfg)(**{**cell_cfg.__dict__, "h": h, "n": n,
                                     "n_out": n_out, "regime": regime,
                                     "reset_enabled": reset})
        net = build_network(cell_cfg, seed=seed)
        fit_cfg = FitConfig(epochs=cfg["run"]["epochs"],
                            batch_size=cfg["run"]["batch_size"],
                            groups=param_groups_from(cfg), seed=seed,
                            eval_batch_size=cfg["run"]["eval_batch_size"])
        metrics, _ = fit(net, train_ds, test_ds, fit_cfg)
        return metrics[-1]["test_acc"] if metrics else float("nan")

    threads = cfg["run"]["threads"]
    if threads > 1:
        # precompute cells concurrently, then emit rows in grid order
        jobs = [(h, n, n_out, regime, reset, seed)
                for (h, n, n_out) in cells for (regime, reset) in regime_grid
                for seed in seeds]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda j: _try_cell(run_cell, j), jobs))
        cache = dict(zip(jobs, results))

        def run_cached(h, n, n_out, regime, reset, seed):
            outcome = cache[(h, n, n_out, regime, reset, seed)]
            if isinstance(outcome, Exception):
                raise outcome
            return outcome

        rows = architecture_sweep(cells, regime_grid, run_cached, seeds)
    else:
        rows = architecture_sweep(cells, regime_grid, run_cell, seeds)

    out_path = args.out or "sweep.csv"
    with open(out_path, "w") as fh:
        fh.write(SWEEP_CSV_HEADER + "\n")
        for row in rows:
            fh.write(f"{row['h']},{row['n']},{row['n_out']},{row['regime']},"
                     f"{row['reset']},{row['seed']},{row['status']},"
                     f"{row['test_acc']!r},{row['params_per_layer']}\n")
    print(f"wrote {len(rows)} sweep rows to {out_path}")
    return EXIT_OK


def _try_cell(run_cell, job):
    try:
        return run_cell(*job)
    except Exception as exc:
        return exc


def _overrides_from(args) -> dict:
    pairs = {
        "run.seed": getattr(args, "seed", None),
        "run.epochs": getattr(args, "epochs", None),
        "run.batch_size": getattr(args, "batch_size", None),
        "run.threads": getattr(args, "threads", None),
        "run.outdir": getattr(args, "outdir", None),
        "dataset.seed": getattr(args, "data_seed", None),
        "dataset.limit_train": getattr(args, "limit_train", None),
        "dataset.limit_test": getattr(args, "limit_test", None),
        "dataset.train_images": getattr(args, "train_images", None),
        "dataset.train_labels": getattr(args, "train_labels", None),
        "dataset.test_images": getattr(args, "test_images", None),
        "dataset.test_labels": getattr(args, "test_labels", None),
        "dataset.train_path": getattr(args, "train_path", None),
        "dataset.test_path": getattr(args, "test_path", None),
        "network.regime": getattr(args, "regime", None),
        "network.reset": getattr(args, "reset", None),
        "network.activation": getattr(args, "activation", None),
    }
    return {k: v for k, v in pairs.items() if v is not None}


def _add_common(sub):
    sub.add_argument("--config", default=None, help="INI config file")
    sub.add_argument("--profile", default=None,
                     help="profile: smnist | dvs | mswc | synthetic")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    sub.add_argument("--threads", type=int, default=None,
                     help="batch-level parallelism; 1 = bit-reproducible")
    sub.add_argument("--regime", choices=("stable", "unstable"), default=None)
    sub.add_argument("--reset", choices=("on", "off"), default=None)
    sub.add_argument("--activation",
                     choices=("nonsigned", "signed", "gelu"), default=None)
    sub.add_argument("--outdir", default=None)
    for flag in ("train-images", "train-labels", "test-images", "test-labels",
                 "train-path", "test-path"):
        sub.add_argument(f"--{flag}", dest=flag.replace("-", "_"),
                         default=None)
    sub.add_argument("--limit-train", dest="limit_train", type=int,
                     default=None)
    sub.add_argument("--limit-test", dest="limit_test", type=int, default=None)
    sub.add_argument("--data-seed", dest="data_seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikessm",
        description="Train and analyze multiple-output spiking SSM networks")
    subs = parser.add_subparsers(dest="command", required=True)

    p_train = subs.add_parser("train", help="train a network from a config")
    _add_common(p_train)
    p_train.add_argument("--quiet", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = subs.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--prefix-steps", dest="prefix_steps", default=None,
                        help="comma-separated prefix lengths")
    p_eval.add_argument("--drop-channels", dest="drop_channels", default=None,
                        help="first|last:<count>")
    p_eval.set_defaults(func=cmd_eval)

    p_cost = subs.add_parser("cost", help="print the cost report")
    p_cost.add_argument("--n", type=int, required=True)
    p_cost.add_argument("--nout", type=int, required=True)
    p_cost.add_argument("--h", type=int, required=True)
    p_cost.add_argument("--csv", default=None)
    p_cost.set_defaults(func=cmd_cost)

    p_gen = subs.add_parser("gen-data", help="write a synthetic dataset file")
    p_gen.add_argument("--classes", type=int, required=True)
    p_gen.add_argument("--timesteps", type=int, default=50)
    p_gen.add_argument("--channels", type=int, default=8)
    p_gen.add_argument("--samples-per-class", dest="samples_per_class",
                       type=int, default=100)
    p_gen.add_argument("--noise", type=float, default=0.05)
    p_gen.add_argument("--shared-channels", dest="shared_channels", type=int,
                       default=0)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--sample-seed", dest="sample_seed", type=int,
                       default=None)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen_data)

    p_sweep = subs.add_parser("sweep", help="architecture sweep")
    _add_common(p_sweep)
    p_sweep.add_argument("--grid", required=True,
                         help="semicolon-separated h,n,n_out triples")
    p_sweep.add_argument("--regimes", default="stable:on",
                         help="semicolon-separated regime:reset items")
    p_sweep.add_argument("--seeds", default="0")
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = getattr(args, "threads", None) or 1
    for var in _THREAD_ENV_VARS:
        os.environ.setdefault(var, str(threads))

    from .data import DataFormatError
    from .neuron import DivergenceError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

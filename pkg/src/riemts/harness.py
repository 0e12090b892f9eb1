"""Experiment orchestration: configs, seeds, datasets, the pipeline and result tables.

A realization runs generate -> add noise -> extract features per variant ->
cluster per method -> score. Realization ``i`` draws every random number from
``numpy.random.SeedSequence([master_seed, i])``, so results do not depend on
how realizations are spread over worker processes.
"""

import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .clustering import METHODS, GCTConfig, local_evidence, run_method, clustering_accuracy
from .datagen import (StateSchedule, add_noise_snr, community_network, default_schedule,
                      delays_from_distances, gen_block_state_series, gen_wilson_cowan,
                      load_adjacency, WilsonCowanParams, wilson_cowan_segments)
from .errors import ConfigurationError
from .features import (SPD_VARIANTS, WindowConfig, concatenate, extract_grassmann_sequence,
                       extract_spd_sequence)
from .kernels import gaussian_grid, kernel_from_dict

log = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
VARIANTS = ("OB",) + SPD_VARIANTS
KERNEL_PRESETS = {"multi-synthetic": 376, "multi-wilson-cowan": 76}
OUT_ENV = "RIEMTS_OUT"


# --------------------------------------------------------------------------
# configuration


def kernel_spec(d):
    """Kernel from a config entry; ``{"preset": name}`` selects a multi-kernel grid."""
    if "preset" in d:
        name = d["preset"]
        if name not in KERNEL_PRESETS:
            raise ConfigurationError(f"unknown kernel preset {name!r}; choose from {sorted(KERNEL_PRESETS)}")
        return gaussian_grid(count=KERNEL_PRESETS[name])
    return kernel_from_dict(d)


def default_generator():
    return {"kind": "block-state", "duration": 500, "n_nodes": 10, "weights": [0.6, 0.2, 0.2],
            "theta0": 0.0, "dtheta": None, "hrf": "double-gamma", "tr": 2.0}


@dataclass
class ExperimentConfig:
    generator: dict = field(default_factory=default_generator)
    window: dict = field(default_factory=lambda: WindowConfig().to_dict())
    window_step: int = 1
    kernel: dict = field(default_factory=lambda: {"kind": "linear"})
    variants: list = field(default_factory=lambda: ["kPC", "OB"])
    methods: list = field(default_factory=lambda: list(METHODS))
    clustering: dict = field(default_factory=dict)
    realizations: int = 1
    snr_db: float = 10.0
    seed: int = 0
    scr_sigma: float | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.realizations < 1:
            raise ConfigurationError("realizations must be at least 1")
        if self.window_step < 1:
            raise ConfigurationError("window_step must be at least 1")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigurationError(f"unknown variant {v!r}; choose from {VARIANTS}")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigurationError(f"unknown method {m!r}; choose from {METHODS}")
        if self.generator.get("kind") not in ("block-state", "wilson-cowan"):
            raise ConfigurationError("generator kind must be 'block-state' or 'wilson-cowan'")
        self.window_config()
        self.gct_config()
        kernel_spec(self.kernel)
        return self

    def window_config(self):
        return WindowConfig.from_dict(self.window)

    def n_states(self):
        g = self.generator
        if g["kind"] == "wilson-cowan":
            return int(g.get("n_subjects", 4))
        if "schedule" in g:
            return len(g["schedule"]["states"])
        return 4

    def gct_config(self, seed=None):
        d = dict(self.clustering)
        d.setdefault("K", self.n_states())
        if seed is not None:
            d["seed"] = int(seed)
        return GCTConfig.from_dict(d).validate()

    def to_dict(self):
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "generator": self.generator, "window": self.window, "window_step": self.window_step,
            "kernel": self.kernel, "variants": list(self.variants), "methods": list(self.methods),
            "clustering": self.clustering, "realizations": self.realizations,
            "snr_db": self.snr_db, "seed": self.seed, "scr_sigma": self.scr_sigma,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        version = d.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported config schema version {version}")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        gen = default_generator() if d.get("generator", {}).get("kind", "block-state") == "block-state" else {}
        gen.update(d.get("generator", {}))
        d["generator"] = gen
        if "window" in d:
            w = WindowConfig().to_dict()
            w.update(d["window"])
            d["window"] = w
        if "snr_db" in d and d["snr_db"] in ("inf", "Infinity", None):
            d["snr_db"] = float("inf")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=_json_default)


def _json_default(x):
    if isinstance(x, float) and np.isinf(x):
        return "inf"
    raise TypeError(type(x))


def canonical_json(d):
    return json.dumps(d, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(config):
    d = config.to_dict() if isinstance(config, ExperimentConfig) else config
    return hashlib.sha256(canonical_json(d).encode()).hexdigest()


def realization_seeds(master_seed, index):
    """Independent integer seeds for the generate, noise and cluster stages."""
    children = np.random.SeedSequence([int(master_seed), int(index)]).spawn(3)
    gen, noise, clus = (int(c.generate_state(1, dtype=np.uint32)[0]) for c in children)
    return {"generate": gen, "noise": noise, "cluster": clus}


# --------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    """Noisy series split into segments (one per subject, or a single one).

    Windows never cross segment boundaries.
    """

    segments: list
    labels: list
    clean_power: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def save(self, path):
        os.makedirs(path, exist_ok=True)
        files = []
        for k, y in enumerate(self.segments):
            name = f"segment_{k:03d}.csv"
            np.savetxt(os.path.join(path, name), y, delimiter=",", fmt="%.17g")
            files.append(name)
        with open(os.path.join(path, "dataset.json"), "w") as fh:
            json.dump({"files": files, "labels": [np.asarray(l).tolist() for l in self.labels],
                       "clean_power": self.clean_power, "meta": self.meta}, fh, indent=1)

    @classmethod
    def load(cls, path):
        try:
            with open(os.path.join(path, "dataset.json")) as fh:
                info = json.load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"no dataset found at {path}") from None
        segs = [np.loadtxt(os.path.join(path, f), delimiter=",", ndmin=2) for f in info["files"]]
        return cls(segs, [np.asarray(l) for l in info["labels"]], info.get("clean_power", []),
                   info.get("meta", {}))


def _block_state_clean(gen, seed):
    if "schedule" in gen:
        schedule = StateSchedule.from_dict(gen["schedule"])
    else:
        schedule = default_schedule(int(gen.get("duration", 500)), int(gen.get("n_nodes", 10)))
    y, labels = gen_block_state_series(
        schedule, dtheta=gen.get("dtheta"), theta0=gen.get("theta0", 0.0),
        weights=tuple(gen.get("weights", (0.6, 0.2, 0.2))), seed=seed,
        hrf=gen.get("hrf", "double-gamma"), tr=gen.get("tr", 2.0),
    )
    return [y], [labels]


def wilson_cowan_networks(gen):
    """Adjacency and delay matrices for each subject, from files or generated."""
    if "adjacency" in gen:
        out = []
        for entry in gen["adjacency"]:
            if isinstance(entry, str):
                out.append(load_adjacency(entry))
            else:
                out.append(load_adjacency(entry["weights"], distances=entry.get("distances"),
                                          delays=entry.get("delays")))
        return out
    rng = np.random.default_rng(int(gen.get("network_seed", 0)))
    nets = []
    for _ in range(int(gen.get("n_subjects", 4))):
        b, dist = community_network(int(gen.get("n_nodes", 20)), int(gen.get("n_communities", 4)),
                                    rng, p_in=gen.get("p_in", 0.8), p_out=gen.get("p_out", 0.05),
                                    scale=gen.get("scale", 1.0))
        nets.append((b, delays_from_distances(dist, dt=gen.get("dt", 1e-3))))
    return nets


def _wilson_cowan_clean(gen, seed):
    nets = wilson_cowan_networks(gen)
    rng = np.random.default_rng(seed)
    extra = {k: gen[k] for k in ("alpha", "sigma2", "zeta_x", "theta_x", "zeta_y", "theta_y",
                                 "dt", "x0", "y0") if k in gen}
    segs, labels = [], []
    for s, (b, d) in enumerate(nets):
        mu = np.zeros(len(b))
        mu[0] = gen.get("mu", 1.25)
        params = WilsonCowanParams(b, d, mu, **extra)
        y = gen_wilson_cowan(params, int(gen.get("sim_samples", 5000)), seed=rng)
        y = wilson_cowan_segments(y, int(gen.get("n_initial", 500)), int(gen.get("n_oscillation", 500)))
        segs.append(y)
        labels.append(np.full(y.shape[1], s))
    return segs, labels


def generate_dataset(config, index):
    """Clean series for realization ``index`` with noise at ``config.snr_db``."""
    seeds = realization_seeds(config.seed, index)
    gen = config.generator
    if gen["kind"] == "block-state":
        clean, labels = _block_state_clean(gen, seeds["generate"])
    else:
        clean, labels = _wilson_cowan_clean(gen, seeds["generate"])
    noise_rng = np.random.default_rng(seeds["noise"])
    noisy = [add_noise_snr(y, config.snr_db, noise_rng) for y in clean]
    meta = {"realization": index, "master_seed": config.seed, "seeds": seeds,
            "config_hash": config_hash(config), "generator": gen, "snr_db": config.snr_db}
    return Dataset(noisy, labels, [float(np.mean(y ** 2)) for y in clean], meta), clean


def extract_features(dataset, config, variant):
    """Feature sequence of ``variant`` over all segments of a dataset."""
    step = config.window_step
    seqs = []
    for y, lab in zip(dataset.segments, dataset.labels):
        if variant == "OB":
            seqs.append(extract_grassmann_sequence(y, config.window_config(), lab, step=step))
        else:
            seqs.append(extract_spd_sequence(y, kernel_spec(config.kernel), variant,
                                             config.window_config().tau_w, lab, step=step))
    seq = seqs[0] if len(seqs) == 1 else concatenate(seqs)
    seq.meta.update({"variant": variant, **{k: dataset.meta[k] for k in
                                            ("realization", "master_seed", "seeds", "config_hash")
                                            if k in dataset.meta}})
    return seq


def cluster_features(seq, config, methods=None, seed=None):
    """Labels per method for one feature sequence, sharing distances and local evidence."""
    methods = config.methods if methods is None else methods
    if seed is None:
        seed = seq.meta.get("seeds", {}).get("cluster", 0)
    cfg = config.gct_config(seed)
    dist = seq.manifold.pairwise_distances(seq.points)
    evidence = None
    out = {}
    for m in methods:
        if m in ("gct", "smc") and evidence is None and cfg.K > 1:
            evidence = local_evidence(seq, cfg, dist)
        out[m] = run_method(m, seq, cfg, dist, config.scr_sigma, evidence).labels
    return out


# --------------------------------------------------------------------------
# results


@dataclass
class ResultTable:
    """Mean and population std of accuracy per (variant, method).

    ``records`` holds the per-realization accuracies the summary is computed
    from; ``errors`` the causes of failed stages.
    """

    rows: list = field(default_factory=list)
    records: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    config_hash: str = ""

    @classmethod
    def from_records(cls, records, variants, methods, errors=(), config_hash=""):
        rows = []
        for v in variants:
            for m in methods:
                acc = [r["accuracy"] for r in records if r["variant"] == v and r["method"] == m]
                rows.append({
                    "variant": v, "method": m,
                    "mean": float(np.mean(acc)) if acc else float("nan"),
                    "std": float(np.std(acc)) if acc else float("nan"),
                    "n_success": len(acc),
                })
        return cls(rows, sorted(records, key=lambda r: (r["realization"], r["variant"], r["method"])),
                   list(errors), config_hash)

    def row(self, variant, method):
        for r in self.rows:
            if r["variant"] == variant and r["method"] == method:
                return r
        raise KeyError((variant, method))

    def __eq__(self, other):
        return (isinstance(other, ResultTable) and _canon_rows(self.rows) == _canon_rows(other.rows)
                and _canon_rows(self.records) == _canon_rows(other.records)
                and self.config_hash == other.config_hash)

    def format(self):
        lines = [f"{'variant':8s} {'method':8s} {'mean':>8s} {'std':>8s} {'n':>4s}"]
        for r in self.rows:
            lines.append(f"{r['variant']:8s} {r['method']:8s} {r['mean']:8.4f} {r['std']:8.4f} "
                         f"{r['n_success']:4d}")
        return "\n".join(lines)


def _canon_rows(rows):
    return [json.dumps(r, sort_keys=True) for r in rows]


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def emit_results(table, path, timings=None):
    """Write ``results.csv``, ``realizations.csv``, ``figure.csv`` and ``summary.json``."""
    try:
        os.makedirs(path, exist_ok=True)
        with open(os.path.join(path, "results.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "method", "mean", "std", "n_success"])
            for r in table.rows:
                w.writerow([r["variant"], r["method"], _fmt(r["mean"]), _fmt(r["std"]), r["n_success"]])
        with open(os.path.join(path, "realizations.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["realization", "variant", "method", "accuracy"])
            for r in table.records:
                w.writerow([r["realization"], r["variant"], r["method"], _fmt(r["accuracy"])])
        variants = list(dict.fromkeys(r["variant"] for r in table.rows))
        methods = list(dict.fromkeys(r["method"] for r in table.rows))
        with open(os.path.join(path, "figure.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant"] + [f"{m}_{s}" for m in methods for s in ("mean", "std")])
            for v in variants:
                vals = []
                for m in methods:
                    r = table.row(v, m)
                    vals += [_fmt(r["mean"]), _fmt(r["std"])]
                w.writerow([v] + vals)
        with open(os.path.join(path, "summary.json"), "w") as fh:
            json.dump({"config_hash": table.config_hash, "version": __version__,
                       "schema_version": CONFIG_SCHEMA_VERSION, "rows": table.rows,
                       "errors": table.errors}, fh, indent=1)
        if timings is not None:
            with open(os.path.join(path, "timings.json"), "w") as fh:
                json.dump(timings, fh, indent=1)
    except OSError as exc:
        raise OSError(f"could not write results to {path}: {exc}") from exc


def parse_results(path):
    """Inverse of :func:`emit_results`."""
    rows, records = [], []
    with open(os.path.join(path, "results.csv"), newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({"variant": r["variant"], "method": r["method"], "mean": float(r["mean"]),
                         "std": float(r["std"]), "n_success": int(r["n_success"])})
    rpath = os.path.join(path, "realizations.csv")
    if os.path.exists(rpath):
        with open(rpath, newline="") as fh:
            for r in csv.DictReader(fh):
                records.append({"realization": int(r["realization"]), "variant": r["variant"],
                                "method": r["method"], "accuracy": float(r["accuracy"])})
    with open(os.path.join(path, "summary.json")) as fh:
        summary = json.load(fh)
    return ResultTable(rows, records, summary.get("errors", []), summary.get("config_hash", ""))


# --------------------------------------------------------------------------
# pipeline


def run_realization(config, index):
    """All variants and methods for one realization; returns (records, errors, seconds)."""
    t0 = time.perf_counter()
    records, errors = [], []
    try:
        data, _ = generate_dataset(config, index)
    except Exception as exc:  # noqa: BLE001 - a failed realization is reported, not fatal
        log.warning("realization %d: generation failed: %s", index, exc)
        return records, [{"realization": index, "stage": "generate", "error": str(exc)}], \
            time.perf_counter() - t0
    for v in config.variants:
        try:
            seq = extract_features(data, config, v)
            labels = cluster_features(seq, config)
        except Exception as exc:  # noqa: BLE001
            log.warning("realization %d, variant %s failed: %s", index, v, exc)
            errors.append({"realization": index, "stage": f"variant {v}", "error": str(exc)})
            continue
        for m in config.methods:
            records.append({"realization": index, "variant": v, "method": m,
                            "accuracy": clustering_accuracy(labels[m], seq.labels)})
    return records, errors, time.perf_counter() - t0


def _run_one(args):
    cfg_dict, index = args
    return index, run_realization(ExperimentConfig.from_dict(cfg_dict), index)


def run_pipeline(config, jobs=1, timings=None):
    """Run every realization and aggregate accuracies into a :class:`ResultTable`.

    Output is identical for any ``jobs``; results are merged by realization index.
    """
    indices = range(config.realizations)
    if jobs > 1 and config.realizations > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = dict(ex.map(_run_one, [(config.to_dict(), i) for i in indices]))
    else:
        results = {i: run_realization(config, i) for i in indices}
    records, errors = [], []
    for i in indices:
        rec, err, secs = results[i]
        records += rec
        errors += err
        if timings is not None:
            timings[str(i)] = secs
    return ResultTable.from_records(records, config.variants, config.methods, errors,
                                    config_hash(config))

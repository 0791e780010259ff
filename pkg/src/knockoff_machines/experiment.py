"""Monte Carlo FDR and power experiments over samplers and signal amplitudes."""
import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .datagen import DistributionSpec, ResponseSpec, simulate_response
from .errors import ConfigInvalid
from .machine import TrainConfig
from .samplers import SAMPLERS, build_sampler
from .selection import select

log = logging.getLogger(__name__)

# spawn keys separating the random streams of one experiment
_TRAIN_KEY, _FIXED_KEY, _REPLICATE_KEY = 0, 1, 2


@dataclass
class ExperimentConfig:
    distribution: DistributionSpec = field(default_factory=DistributionSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_train: int = 10_000
    samplers: tuple = ("machine", "second-order", "oracle")
    m: int = 150
    amplitudes: tuple = (10.0,)
    alpha: float = 0.1
    q: float = 0.1
    k: int = 30
    random_signs: bool = False
    folds: int = 10
    replicates: int = 100
    seed: int = 0
    mode: str = "fresh-X"
    misspecified_rho: float = 0.0

    def __post_init__(self):
        if self.mode not in ("fresh-X", "fixed-X"):
            raise ConfigInvalid(f"mode must be fresh-X or fixed-X, got {self.mode!r}")
        for name in self.samplers:
            if name not in SAMPLERS:
                raise ConfigInvalid(f"unknown sampler {name!r}")
        if "oracle" in self.samplers and self.distribution.kind not in (
            "ar1-gaussian", "gaussian-mixture", "custom-gaussian"
        ):
            raise ConfigInvalid(f"no oracle sampler exists for {self.distribution.kind}")
        if self.replicates < 1 or self.m < 2 or self.n_train < 8:
            raise ConfigInvalid("need replicates >= 1, m >= 2 and n_train >= 8")
        if not 0 < self.q < 1 or not 0 <= self.alpha <= 1:
            raise ConfigInvalid("need q in (0, 1) and alpha in [0, 1]")
        if self.k > self.distribution.p:
            raise ConfigInvalid("signal count k exceeds p")


@dataclass
class ReplicateRow:
    amplitude: float
    sampler: str
    replicate: int
    fdp: float
    power: float
    selected: int

    FIELDS = ("amplitude", "sampler", "replicate", "fdp", "power", "selected")


@dataclass
class SummaryRow:
    amplitude: float
    sampler: str
    replicates: int
    fdr: float
    fdr_se: float
    power: float
    power_se: float

    FIELDS = ("amplitude", "sampler", "replicates", "fdr", "fdr_se", "power", "power_se")


def _stream(seed, *key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def build_samplers(cfg, prebuilt=None):
    """Fit every sampler named in ``cfg`` on one shared training set.

    ``prebuilt`` maps sampler names to ready objects, e.g. an already
    trained machine, which are used as given.
    """
    prebuilt = dict(prebuilt or {})
    need_data = any(s not in prebuilt and s in ("machine", "second-order", "independent") for s in cfg.samplers)
    X_train = cfg.distribution.sample(cfg.n_train, _stream(cfg.seed, _TRAIN_KEY)) if need_data else None
    out = {}
    for name in cfg.samplers:
        if name in prebuilt:
            out[name] = prebuilt[name]
        else:
            log.info("building sampler %s", name)
            out[name] = build_sampler(name, cfg.distribution, X_train, cfg.train, cfg.misspecified_rho)
    return out


def _replicate(cfg, samplers, a_idx, amplitude, r, X_fixed):
    rng = _stream(cfg.seed, _REPLICATE_KEY, a_idx, r)
    X = X_fixed if X_fixed is not None else cfg.distribution.sample(cfg.m, rng)
    y, support, _ = simulate_response(X, ResponseSpec(cfg.k, amplitude, cfg.random_signs), rng)
    rows = []
    for s_idx, name in enumerate(cfg.samplers):
        srng = _stream(cfg.seed, _REPLICATE_KEY, a_idx, r, s_idx + 1)
        Xk = samplers[name].knockoffs(X, srng)
        res = select(X, Xk, y, cfg.alpha, cfg.q, cfg.folds, srng, truth=support)
        rows.append(ReplicateRow(amplitude, name, r, res.fdp, res.power, len(res.selected)))
    return rows


def run_experiment(cfg, samplers=None, threads=1):
    """Per-replicate selection outcomes, sorted by (amplitude, sampler, replicate).

    In fresh-X mode each replicate draws new features; in fixed-X mode one
    feature matrix is drawn once and only the response (and the knockoff
    noise) changes between replicates. Each replicate has its own random
    stream keyed by its position, so results do not depend on ``threads``.
    """
    samplers = samplers if samplers is not None else build_samplers(cfg)
    X_fixed = None
    if cfg.mode == "fixed-X":
        X_fixed = cfg.distribution.sample(cfg.m, _stream(cfg.seed, _FIXED_KEY))
    jobs = [(a_idx, a, r) for a_idx, a in enumerate(cfg.amplitudes) for r in range(cfg.replicates)]

    def work(job):
        return _replicate(cfg, samplers, *job, X_fixed)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(work, jobs))
    else:
        chunks = [work(j) for j in jobs]
    order = {name: i for i, name in enumerate(cfg.samplers)}
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda t: (t.amplitude, order[t.sampler], t.replicate))
    return rows


def summarize(rows):
    """Mean FDP (the empirical FDR) and power with standard errors."""
    groups = {}
    for row in rows:
        groups.setdefault((row.amplitude, row.sampler), []).append(row)
    out = []
    for (amp, name), grp in groups.items():
        fdp = np.array([g.fdp for g in grp])
        power = np.array([g.power for g in grp])
        n = len(grp)
        se = (lambda v: float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
        out.append(SummaryRow(amp, name, n, float(fdp.mean()), se(fdp), float(power.mean()), se(power)))
    return out


def write_rows(path_or_fh, rows, fields, comment=None):
    own = isinstance(path_or_fh, str) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "w", newline="", encoding="utf-8") if own else path_or_fh
    try:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(row, f) for f in fields)])
    finally:
        if own:
            fh.close()

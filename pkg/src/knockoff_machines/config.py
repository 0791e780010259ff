"""INI configuration files.

Every key is optional; missing keys take the defaults below. Lists are
comma separated. Example::

    [run]
    seed = 1

    [data]
    kind = ar1-gaussian
    p = 50
    rho = 0.5
    n_train = 4000

    [train]
    iterations = 20000
    hidden = 100
    layers = 3

    [selection]
    amplitudes = 5, 10, 15

    [experiment]
    samplers = machine, second-order, oracle
    replicates = 200
"""
import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import DistributionSpec
from .errors import ConfigInvalid, KnockoffError
from .experiment import ExperimentConfig
from .losses import DEFAULT_BANDWIDTHS, KernelSpec, LossWeights
from .machine import TrainConfig

DEFAULTS = {
    "run": {"seed": "0", "threads": "1", "out": "out"},
    "data": {
        "kind": "ar1-gaussian", "p": "100", "rho": "0.5", "rhos": "0.3, 0.5, 0.7", "nu": "3",
        "L": "30", "n_train": "10000", "path": "", "has_header": "false", "covariance": "",
    },
    "train": {
        "iterations": "100000", "lr": "0.001", "momentum": "0.9", "batch_fraction": "0.25",
        "gamma": "1", "lambda": "1", "delta": "1", "lambda1": "1", "lambda2": "1", "lambda3": "1",
        "bandwidths": ", ".join(str(b) for b in DEFAULT_BANDWIDTHS), "hidden": "", "layers": "6",
        "eval_every": "100", "holdout_fraction": "0", "clip_norm": "10", "estimator": "biased",
        "decorrelation": "sdp",
    },
    "selection": {
        "m": "150", "amplitudes": "10", "alpha": "0.1", "q": "0.1", "k": "30",
        "random_signs": "false", "folds": "10",
    },
    "experiment": {
        "samplers": "machine, second-order, oracle", "replicates": "100", "mode": "fresh-X",
        "misspecified_rho": "0",
    },
    "diagnostics": {"samplers": "second-order, oracle", "replicates": "100", "n": "1000"},
}


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _strings(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


@dataclass
class Config:
    """Parsed configuration; ``digest`` identifies the effective settings."""

    parser: configparser.ConfigParser
    source: str = None
    digest: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    def get(self, section, key):
        return self.parser.get(section, key)

    def _typed(self, getter, section, key):
        try:
            return getter(section, key)
        except ValueError as exc:
            raise ConfigInvalid(f"[{section}] {key}: {exc}") from None

    def int(self, section, key):
        return self._typed(self.parser.getint, section, key)

    def float(self, section, key):
        return self._typed(self.parser.getfloat, section, key)

    def bool(self, section, key):
        return self._typed(self.parser.getboolean, section, key)

    @property
    def seed(self):
        return self.int("run", "seed")

    def distribution(self):
        kind = self.get("data", "kind")
        cov = self.get("data", "covariance")
        Sigma = None
        if cov:
            try:
                Sigma = np.loadtxt(cov, delimiter=",", ndmin=2)
            except OSError as exc:
                raise ConfigInvalid(f"cannot read covariance file {cov}: {exc}") from None
        try:
            return DistributionSpec(
                kind=kind, p=self.int("data", "p"), rho=self.float("data", "rho"),
                rhos=_floats(self.get("data", "rhos")), nu=self.float("data", "nu"),
                L=self.int("data", "L"), Sigma=Sigma,
            )
        except KnockoffError as exc:
            raise ConfigInvalid(str(exc)) from None

    def train_config(self, seed=None):
        hidden = self.get("train", "hidden")
        try:
            return TrainConfig(
                iterations=self.int("train", "iterations"), lr=self.float("train", "lr"),
                momentum=self.float("train", "momentum"),
                batch_fraction=self.float("train", "batch_fraction"),
                weights=LossWeights(
                    self.float("train", "gamma"), self.float("train", "lambda"), self.float("train", "delta"),
                    self.float("train", "lambda1"), self.float("train", "lambda2"), self.float("train", "lambda3"),
                ),
                kernel=KernelSpec(_floats(self.get("train", "bandwidths"))),
                hidden=int(hidden) if hidden else None, layers=self.int("train", "layers"),
                seed=self.seed if seed is None else seed, eval_every=self.int("train", "eval_every"),
                holdout_fraction=self.float("train", "holdout_fraction"),
                clip_norm=self.float("train", "clip_norm"), estimator=self.get("train", "estimator"),
                decorrelation=self.get("train", "decorrelation"),
            )
        except KnockoffError as exc:
            raise ConfigInvalid(str(exc)) from None
        except ValueError as exc:
            raise ConfigInvalid(f"[train] {exc}") from None

    def experiment_config(self, seed=None):
        try:
            return ExperimentConfig(
                distribution=self.distribution(), train=self.train_config(seed),
                n_train=self.int("data", "n_train"),
                samplers=_strings(self.get("experiment", "samplers")), m=self.int("selection", "m"),
                amplitudes=_floats(self.get("selection", "amplitudes")), alpha=self.float("selection", "alpha"),
                q=self.float("selection", "q"), k=self.int("selection", "k"),
                random_signs=self.bool("selection", "random_signs"), folds=self.int("selection", "folds"),
                replicates=self.int("experiment", "replicates"), seed=self.seed if seed is None else seed,
                mode=self.get("experiment", "mode"),
                misspecified_rho=self.float("experiment", "misspecified_rho"),
            )
        except ConfigInvalid:
            raise
        except KnockoffError as exc:
            raise ConfigInvalid(str(exc)) from None

    def provenance(self):
        return f"config {self.digest} knockoff-machines {__version__}"


def _build(parser, source):
    unknown = [s for s in parser.sections() if s not in DEFAULTS]
    if unknown:
        raise ConfigInvalid(f"unknown section(s) {unknown} in {source}")
    for section, values in DEFAULTS.items():
        if not parser.has_section(section):
            parser.add_section(section)
        for key in parser[section]:
            if key not in {k.lower() for k in values}:
                raise ConfigInvalid(f"unknown key [{section}] {key} in {source}")
        for key, value in values.items():
            if not parser.has_option(section, key):
                parser.set(section, key, value)
    canon = "\n".join(
        f"{s}.{k}={parser.get(s, k)}" for s in sorted(DEFAULTS) for k in sorted(parser[s])
    )
    digest = hashlib.sha256(canon.encode()).hexdigest()[:16]
    return Config(parser, source, digest)


def load_config(path=None):
    """Parse ``path`` (or only defaults when ``None``)."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is None:
        return _build(parser, "<defaults>")
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config file not found: {path}")
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigInvalid(f"cannot parse {path}: {exc}") from None
    return _build(parser, str(path))


def parse_config(text):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalid(f"cannot parse config text: {exc}") from None
    return _build(parser, "<string>")

"""Experiment configuration: an INI file mirroring :class:`ExperimentConfig`.

Example::

    [experiment]
    dataset = runs/sim_mid      ; corpus directory
    noise = over0.3             ; training label file (labels_<noise>.json)
    eval_labels = clean         ; clean | noisy
    method = bundl              ; bundl | cel | selfadapt | nal
    output = runs/out

    [train]
    learning_rate = 0.001
    max_epochs = 30
    z0 = 0.001                  ; a number, or "estimated"
    z1 = estimated
    seed = 0

    [cv]
    n_folds = 5
    n_repeats = 1
    seed = 0
    lr_grid =                   ; comma separated, empty = train.learning_rate only

Every key is optional; missing keys keep their defaults. The resolved
configuration is written into each report so a run can be repeated from the
report alone.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .baselines import METHODS
from .evaluation import CVSpec
from .labelnoise import NoiseSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


@dataclass
class ExperimentConfig:
    dataset: str = ""
    noise: str = "clean"
    eval_labels: str = "clean"
    method: str = "bundl"
    output: str = ""
    train: TrainConfig = field(default_factory=TrainConfig)
    cv: CVSpec = field(default_factory=CVSpec)

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {sorted(METHODS)}")
        if self.eval_labels not in ("clean", "noisy"):
            raise ConfigError("eval_labels must be 'clean' or 'noisy'")
        try:
            NoiseSpec.parse(self.noise)
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.cv.n_folds < 2 or self.cv.n_repeats < 1:
            raise ConfigError("cv needs n_folds >= 2 and n_repeats >= 1")
        if not 0 < self.cv.val_fraction < 1:
            raise ConfigError("cv.val_fraction must lie in (0, 1)")
        return self

    def to_dict(self):
        return {
            "dataset": self.dataset,
            "noise": self.noise,
            "eval_labels": self.eval_labels,
            "method": self.method,
            "output": self.output,
            "train": self.train.to_dict(),
            "cv": self.cv.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        train = TrainConfig.from_dict(d.pop("train", {}))
        cv = cv_from_dict(d.pop("cv", {}))
        unknown = set(d) - {"dataset", "noise", "eval_labels", "method", "output"}
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(train=train, cv=cv, **{k: str(v) for k, v in d.items()}).validate()


def cv_from_dict(d):
    kw = {}
    for k, v in d.items():
        if k in ("n_folds", "n_repeats", "seed", "smooth_width"):
            kw[k] = int(v)
        elif k == "val_fraction":
            kw[k] = float(v)
        elif k == "with_transition":
            kw[k] = v if isinstance(v, bool) else _BOOL[str(v).strip().lower()]
        elif k == "transition_on":
            if v not in ("train", "test"):
                raise ConfigError("cv.transition_on must be 'train' or 'test'")
            kw[k] = v
        elif k == "lr_grid":
            if isinstance(v, str):
                v = [x for x in v.replace(" ", "").split(",") if x]
            kw[k] = tuple(float(x) for x in v)
        else:
            raise ConfigError(f"unknown cv option {k!r}")
    return CVSpec(**kw)


def load_config(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    d = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    for section in ("train", "cv"):
        if parser.has_section(section):
            d[section] = {k: v for k, v in parser[section].items() if v != ""}
    extra = set(parser.sections()) - {"experiment", "train", "cv"}
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    try:
        return ExperimentConfig.from_dict(d)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None

"""Experiment configuration files.

Configs are INI files with four sections::

    [run]
    workers = 40
    rounds = 200
    alpha = 0.1
    batch_size = 100
    seed = 1
    target_loss = 0.38

    [timing]
    mu = 0.0001

    [scheme]
    kind = stsyn
    K = 35
    U = 20

    [objective]
    kind = synthetic-logistic
    n_samples = 4000
    dim = 20

Keys are case sensitive. Unknown sections or keys, bad values and missing
required keys raise :class:`~stsyn.errors.ConfigError` naming the key.
The canonical form (sorted sections and keys, ``repr`` floats, unset keys
omitted) is what gets hashed and written next to every trace.
"""
import configparser
import dataclasses
import hashlib

from .data import DATASET_KINDS, DatasetSpec
from .errors import ConfigError
from .simulator import ExperimentConfig
from .strategies import SchemeSpec


def _opt_float(s):
    return None if s.lower() in ("", "none") else float(s)


def _opt_int(s):
    return None if s.lower() in ("", "none") else int(s)


def _opt_str(s):
    return None if s.lower() in ("", "none") else s


# section -> key -> (parser, destination); destination is (object, field)
SCHEMA = {
    "run": {
        "workers": (int, ("run", "workers")),
        "rounds": (int, ("run", "rounds")),
        "alpha": (float, ("run", "alpha")),
        "batch_size": (int, ("run", "batch_size")),
        "seed": (int, ("run", "seed")),
        "eval_every": (int, ("run", "eval_every")),
        "target_loss": (_opt_float, ("run", "target_loss")),
        "target_accuracy": (_opt_float, ("run", "target_accuracy")),
        "timing_seed": (_opt_int, ("run", "timing_seed")),
        "batch_seed": (_opt_int, ("run", "batch_seed")),
    },
    "timing": {
        "mu": (float, ("run", "mu")),
    },
    "scheme": {
        "kind": (str, ("scheme", "kind")),
        "K": (_opt_int, ("scheme", "K")),
        "U": (_opt_int, ("scheme", "U")),
        "sample_size": (_opt_int, ("scheme", "sample_size")),
        "tau0": (int, ("scheme", "tau0")),
        "gamma": (float, ("scheme", "gamma")),
        "K0": (int, ("scheme", "K0")),
        "growth": (float, ("scheme", "growth")),
        "interval": (float, ("scheme", "interval")),
    },
    "objective": {
        "kind": (str, ("dataset", "kind")),
        "n_samples": (int, ("dataset", "n_samples")),
        "dim": (int, ("dataset", "dim")),
        "seed": (int, ("dataset", "seed")),
        "noise": (float, ("dataset", "noise")),
        "scale": (float, ("dataset", "scale")),
        "feature_scale": (float, ("dataset", "feature_scale")),
        "path": (_opt_str, ("dataset", "path")),
        "label_path": (_opt_str, ("dataset", "label_path")),
        "format": (_opt_str, ("dataset", "format")),
        "loss": (str, ("dataset", "loss")),
        "positive_class": (_opt_float, ("dataset", "positive_class")),
    },
}
REQUIRED = (("run", "workers"), ("scheme", "kind"))


def parse_config(text):
    """Build an :class:`ExperimentConfig` from INI text."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", f"unparseable config: {exc}") from exc
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
    for section, key in REQUIRED:
        if not parser.has_option(section, key):
            raise ConfigError(f"{section}.{key}", "missing required key")

    fields = {"run": {}, "scheme": {}, "dataset": {}}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            conv, (obj, name) = SCHEMA[section][key]
            try:
                fields[obj][name] = conv(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}", f"bad value {raw!r}") from exc

    ds = fields["dataset"]
    if ds.get("kind", DatasetSpec.kind) not in DATASET_KINDS:
        raise ConfigError("objective.kind", f"must be one of {DATASET_KINDS}")
    if ds.get("kind") == "file" and not ds.get("path"):
        raise ConfigError("objective.path", "required when kind = file")
    if ds.get("loss", "logistic") not in ("logistic", "quadratic"):
        raise ConfigError("objective.loss", "must be logistic or quadratic")
    cfg = ExperimentConfig(
        scheme=SchemeSpec(**fields["scheme"]),
        dataset=DatasetSpec(**ds),
        **fields["run"],
    )
    return cfg.validate()


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg):
    """Canonical INI text for ``cfg``."""
    sources = {"run": cfg, "scheme": cfg.scheme, "dataset": cfg.dataset}
    lines = []
    for section in sorted(SCHEMA):
        lines.append(f"[{section}]")
        for key in sorted(SCHEMA[section]):
            _, (obj, name) = SCHEMA[section][key]
            value = getattr(sources[obj], name)
            if value is None:
                continue
            lines.append(f"{key} = {_fmt(value)}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg):
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()


def config_dict(cfg):
    return dataclasses.asdict(cfg)

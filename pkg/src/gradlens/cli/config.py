"""Experiment configuration files.

The format is INI-like, one ``key = value`` per line, grouped in sections::

    # comment
    [experiment]
    seed = 3
    out = runs/imprint

    [data]
    source = synthetic        # or a directory of .ppm/.pgm files
    shape = 8x8x3
    class_count = 4

    [attack]
    kind = imprint            # none | imprint | trap | linear
    suite = major-rotation
    batch_size = 8
    neurons = 64

    [sweep]
    batch_sizes = 4, 16
    neurons = 16, 64

    [utility]
    epochs = 10

Unknown sections or keys, duplicate keys and malformed values are errors.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..defense import SUITE_NAMES
from ..errors import ConfigError, ParseError
from ..flsim import ATTACK_KINDS

COMMANDS = ("attack", "sweep", "utility", "gallery")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(",", " ").split())


def _shape(text: str) -> tuple[int, int, int]:
    parts = tuple(int(p) for p in text.lower().replace("x", " ").split())
    if len(parts) == 2:
        parts = parts + (1,)
    if len(parts) != 3:
        raise ValueError("shape must be HxW or HxWxC")
    return parts


@dataclass
class ExperimentConfig:
    command: str = "attack"
    seed: int = 0
    out: str = "gradlens-out"
    trials: int = 10
    workers: int = 1
    eps_act: float = 1e-12
    psnr_cap: float = 300.0
    # data
    source: str = "synthetic"
    shape: tuple[int, int, int] = (8, 8, 3)
    class_count: int = 4
    # attack
    attack: str = "imprint"
    suite: str = "none"
    batch_size: int = 8
    neurons: int = 64
    users: int = 1
    selected: int = 1
    learning_rate: float = 0.1
    calibration_size: int = 512
    trap_sigma: float = 1.0
    trap_rho: float = 0.5
    trap_margin: float = 0.05
    linear_bias: float = 20.0
    # sweep
    sweep_batch_sizes: tuple[int, ...] = (4, 16)
    sweep_neurons: tuple[int, ...] = (16, 64)
    # utility
    epochs: int = 10
    utility_learning_rate: float = 0.1
    train_count: int = 256
    test_count: int = 128
    hidden: int = 32
    train_batch_size: int = 16

    @property
    def input_dim(self) -> int:
        h, w, c = self.shape
        return h * w * c

    def attack_params(self) -> dict:
        return {
            "neurons": self.neurons,
            "calibration_size": self.calibration_size,
            "trap_sigma": self.trap_sigma,
            "trap_rho": self.trap_rho,
            "trap_margin": self.trap_margin,
            "linear_bias": self.linear_bias,
            "eps_act": self.eps_act,
        }

    def validate(self) -> "ExperimentConfig":
        def bad(name, why):
            raise ConfigError(f"invalid {name}: {why}")

        if self.command not in COMMANDS:
            bad("command", f"{self.command!r} not in {', '.join(COMMANDS)}")
        if self.attack not in ATTACK_KINDS:
            bad("attack", f"{self.attack!r} not in {', '.join(ATTACK_KINDS)}")
        if self.suite not in SUITE_NAMES:
            bad("suite", f"{self.suite!r} not in {', '.join(SUITE_NAMES)}")
        if self.batch_size < 1:
            bad("batch_size", "must be >= 1")
        if self.attack == "imprint" and self.neurons < 2:
            bad("neurons", "imprint needs at least 2 neurons")
        if self.neurons < 1:
            bad("neurons", "must be >= 1")
        if min(self.shape) < 1 or self.shape[2] not in (1, 3):
            bad("shape", "dimensions must be positive with 1 or 3 channels")
        if not 1 <= self.selected <= self.users:
            bad("selected", "need 1 <= selected <= users")
        if self.trials < 1:
            bad("trials", "must be >= 1")
        if self.workers < 1:
            bad("workers", "must be >= 1")
        if not self.eps_act > 0:
            bad("eps_act", "must be > 0")
        if not self.psnr_cap > 0:
            bad("psnr_cap", "must be > 0")
        if not self.learning_rate > 0 or not self.utility_learning_rate > 0:
            bad("learning_rate", "must be > 0")
        if not 0 < self.trap_rho < 1:
            bad("trap_rho", "must lie in (0, 1)")
        if not self.trap_sigma > 0:
            bad("trap_sigma", "must be > 0")
        if not self.sweep_batch_sizes or min(self.sweep_batch_sizes) < 1:
            bad("sweep.batch_sizes", "must be a nonempty list of positive sizes")
        if not self.sweep_neurons or min(self.sweep_neurons) < 2:
            bad("sweep.neurons", "must be a nonempty list of counts >= 2")
        if self.epochs < 0:
            bad("epochs", "must be >= 0")
        if self.attack == "linear" and self.batch_size > self.class_count:
            bad("batch_size", "linear attack needs unique labels, so batch_size <= class_count")
        for name in ("calibration_size", "train_count", "test_count", "hidden", "train_batch_size", "class_count"):
            if getattr(self, name) < 1:
                bad(name, "must be >= 1")
        return self


# (section, key) -> (field name, converter)
_SCHEMA = {
    ("experiment", "command"): ("command", str),
    ("experiment", "seed"): ("seed", int),
    ("experiment", "out"): ("out", str),
    ("experiment", "trials"): ("trials", int),
    ("experiment", "workers"): ("workers", int),
    ("experiment", "eps_act"): ("eps_act", float),
    ("experiment", "psnr_cap"): ("psnr_cap", float),
    ("data", "source"): ("source", str),
    ("data", "shape"): ("shape", _shape),
    ("data", "class_count"): ("class_count", int),
    ("attack", "kind"): ("attack", str),
    ("attack", "suite"): ("suite", str),
    ("attack", "batch_size"): ("batch_size", int),
    ("attack", "neurons"): ("neurons", int),
    ("attack", "users"): ("users", int),
    ("attack", "selected"): ("selected", int),
    ("attack", "learning_rate"): ("learning_rate", float),
    ("attack", "calibration_size"): ("calibration_size", int),
    ("attack", "trap_sigma"): ("trap_sigma", float),
    ("attack", "trap_rho"): ("trap_rho", float),
    ("attack", "trap_margin"): ("trap_margin", float),
    ("attack", "linear_bias"): ("linear_bias", float),
    ("sweep", "batch_sizes"): ("sweep_batch_sizes", _ints),
    ("sweep", "neurons"): ("sweep_neurons", _ints),
    ("utility", "epochs"): ("epochs", int),
    ("utility", "learning_rate"): ("utility_learning_rate", float),
    ("utility", "train_count"): ("train_count", int),
    ("utility", "test_count"): ("test_count", int),
    ("utility", "hidden"): ("hidden", int),
    ("utility", "batch_size"): ("train_batch_size", int),
}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of each (section, key), for error messages."""
    where, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif "=" in s and not s.startswith(("#", ";")):
            where.setdefault((section, s.split("=", 1)[0].strip().lower()), no)
    return where


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(
        strict=True, interpolation=None, inline_comment_prefixes=("#",), delimiters=("=",)
    )
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ParseError(f"duplicate key {exc.option!r} in [{exc.section}]", line=exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ParseError(f"duplicate section [{exc.section}]", line=exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("key outside of any [section]", line=exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ParseError("malformed line", line=line) from None

    lines = _key_lines(text)
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if (section, key) not in _SCHEMA:
                raise ParseError(f"unknown key {key!r} in [{section}]", line=line)
            name, conv = _SCHEMA[(section, key)]
            try:
                values[name] = conv(raw.strip())
            except ValueError as exc:
                raise ParseError(f"bad value for {section}.{key}: {exc}", line=line) from None
    return ExperimentConfig(**values)


def load_config(path: str | Path | None, overrides: dict | None = None) -> ExperimentConfig:
    """Read ``path`` (if given), apply non-None ``overrides`` and validate."""
    cfg = ExperimentConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        cfg = parse_config(p.read_text(), str(p))
    changes = {k: v for k, v in (overrides or {}).items() if v is not None}
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(changes) - fields
    if unknown:
        raise ConfigError(f"unknown override(s): {', '.join(sorted(unknown))}")
    return dataclasses.replace(cfg, **changes).validate()

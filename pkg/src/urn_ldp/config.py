"""Flat ``section.key = value`` experiment files.

Example::

    # reference matrix, linear drawing rule
    model.h11 = 2
    model.h12 = 4
    model.h21 = 3
    model.h22 = 6
    model.skew = identity
    model.y1 = 1
    model.y2 = 1
    analysis.n_grid = 50, 200, 500
    analysis.eps = 0.05, 0.1
    analysis.trials = 100000
    analysis.seed = 12345
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .model import FAMILIES, ReplacementMatrix, SkewSpec, UrnConfig

SECTIONS = ("model", "analysis", "sa", "output")
_INT = re.compile(r"^[+-]?\d+$")


class ConfigError(ValueError):
    """Malformed or incomplete configuration (CLI exit code 2)."""


def parse_number(text, key="value"):
    text = text.strip()
    try:
        return int(text) if _INT.match(text) else float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None


def parse_text(text):
    """Parse the key-value text into a flat dict of raw strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key or key.split(".", 1)[0] not in SECTIONS:
            raise ConfigError(f"line {lineno}: key {key!r} must start with one of {SECTIONS}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls(parse_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None

    def has(self, key):
        return key in self.raw

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def number(self, key, default=None):
        if key not in self.raw:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        return parse_number(self.raw[key], key)

    def integer(self, key, default=None):
        v = self.number(key, default)
        if not isinstance(v, int):
            raise ConfigError(f"{key}: expected an integer, got {v!r}")
        return v

    def numbers(self, key, default=None):
        if key not in self.raw:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return list(default)
        return [parse_number(t, key) for t in self.raw[key].split(",") if t.strip()]

    def flag(self, key, default=False):
        if key not in self.raw:
            return default
        v = self.raw[key].strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {v!r}")

    def set(self, key, value):
        self.raw[key] = str(value)

    # model section

    def matrix(self):
        return ReplacementMatrix(*(self.number(f"model.{k}") for k in ("h11", "h12", "h21", "h22")))

    def skew(self):
        fam = self.get("model.skew", "identity").strip().lower()
        if fam not in FAMILIES:
            raise ConfigError(f"model.skew: unknown family {fam!r}")
        concave = self.flag("model.skew.concave", None) if self.has("model.skew.concave") else None
        try:
            if fam == "identity":
                return SkewSpec.identity()
            if fam in ("power", "mirror_power"):
                return SkewSpec(fam, p=self.number("model.skew.p"), concave_declared=concave)
            knots = []
            for item in self.get("model.skew.knots", "").split(","):
                if not item.strip():
                    continue
                if ":" not in item:
                    raise ConfigError("model.skew.knots: expected 'y:f' pairs")
                y, v = item.split(":", 1)
                knots.append((parse_number(y, "knot"), parse_number(v, "knot")))
            return SkewSpec.table(knots, concave_declared=concave)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"model.skew: {exc}") from None

    def urn(self):
        try:
            return UrnConfig(self.matrix(), self.skew(), self.number("model.y1"), self.number("model.y2"))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

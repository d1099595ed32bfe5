"""Experiment configuration: INI file sections, flag overrides and validation."""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from typing import Optional

from .errors import ValidationError

SCENARIOS = ("ideal-carpet", "depths", "widths", "temperature", "tdhf", "coherence", "scaling-sweep")


def _floats(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _ints(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).replace(";", ",").split(",") if v.strip())


@dataclass
class ExperimentConfig:
    """Flat parameter set; ``section`` metadata only groups keys in the file.

    Times are in units of the revival time.  Key names are unique so each
    one can be overridden by a command-line flag of the same name.
    """

    scenario: str = field(default="ideal-carpet", metadata={"section": "experiment"})
    out_dir: str = field(default="out", metadata={"section": "experiment"})
    prefix: str = field(default="", metadata={"section": "experiment"})
    seed: int = field(default=12345, metadata={"section": "experiment"})
    workers: int = field(default=1, metadata={"section": "experiment"})
    image_scale: str = field(default="percentile", metadata={"section": "experiment"})

    trap: str = field(default="subbox", metadata={"section": "idealgas"})
    N: int = field(default=100, metadata={"section": "idealgas"})
    D: float = field(default=0.21, metadata={"section": "idealgas"})
    omega: float = field(default=1e4, metadata={"section": "idealgas"})
    center: float = field(default=0.5, metadata={"section": "idealgas"})
    T: float = field(default=0.0, metadata={"section": "idealgas"})
    temperatures: tuple = field(default=(0.5, 1.0, 2.0, 4.0), metadata={"section": "idealgas", "parse": _floats})
    K_max: int = field(default=0, metadata={"section": "idealgas"})
    p_max: int = field(default=8, metadata={"section": "idealgas"})
    n_times: int = field(default=400, metadata={"section": "idealgas"})
    carpet_points: int = field(default=1000, metadata={"section": "idealgas"})
    carpet_span: float = field(default=1.0, metadata={"section": "idealgas"})

    g: float = field(default=16.0, metadata={"section": "meanfield"})
    n_atoms: int = field(default=24, metadata={"section": "meanfield"})
    n_points: int = field(default=400, metadata={"section": "meanfield"})
    dt: float = field(default=1e-7, metadata={"section": "meanfield"})
    t_end: float = field(default=0.15, metadata={"section": "meanfield"})
    sample_every: int = field(default=0, metadata={"section": "meanfield"})
    sample_interval: float = field(default=0.004, metadata={"section": "meanfield"})

    g_values: tuple = field(default=(8.0, 16.0, 24.0, 32.0), metadata={"section": "coherence", "parse": _floats})
    per_component: tuple = field(default=(12,), metadata={"section": "coherence", "parse": _ints})
    search_cells: int = field(default=3, metadata={"section": "coherence"})
    drop_fraction: float = field(default=0.9, metadata={"section": "coherence"})

    def validate(self) -> "ExperimentConfig":
        errs = {}
        if self.scenario not in SCENARIOS:
            errs["scenario"] = f"must be one of {', '.join(SCENARIOS)}"
        if self.trap not in ("subbox", "harmonic"):
            errs["trap"] = "must be subbox or harmonic"
        if self.N < 1:
            errs["N"] = "must be a positive integer"
        if not 0 < self.D <= 1:
            errs["D"] = "must lie in (0, 1]"
        if self.T < 0 or any(t < 0 for t in self.temperatures):
            errs["T"] = "temperatures must be nonnegative"
        if self.n_points < 16 or self.n_points % 2:
            errs["n_points"] = "must be an even integer >= 16"
        if self.scenario in ("tdhf", "coherence", "scaling-sweep"):
            for name, n in [("n_atoms", self.n_atoms)] + [("per_component", 2 * v) for v in self.per_component]:
                if n < 2 or n % 2:
                    errs[name] = f"needs an even number of atoms, got {n}"
                elif n // 2 > self.n_points / 8:
                    errs[name] = f"{n // 2} atoms per component exceed n_points/8"
        if self.dt <= 0:
            errs["dt"] = "must be positive"
        if self.t_end <= 0:
            errs["t_end"] = "must be positive"
        if self.image_scale not in ("linear", "percentile", "percentile-clipped"):
            errs["image_scale"] = "must be linear or percentile-clipped"
        if self.n_times < 2:
            errs["n_times"] = "must be at least 2"
        if errs:
            msg = "; ".join(f"{k}: {v}" for k, v in errs.items())
            raise ValidationError(f"invalid configuration: {msg}", errs)
        return self

    @classmethod
    def keys(cls) -> list:
        return [f.name for f in fields(cls)]

    def update(self, values: dict) -> "ExperimentConfig":
        """New config with string or typed values coerced to field types."""
        errs, out = {}, {}
        ftypes = {f.name: f for f in fields(self)}
        for k, v in values.items():
            if v is None:
                continue
            if k not in ftypes:
                errs[k] = "unknown key"
                continue
            f = ftypes[k]
            try:
                out[k] = _coerce(f, v)
            except (TypeError, ValueError) as exc:
                errs[k] = f"cannot parse {v!r}: {exc}"
        if errs:
            raise ValidationError("; ".join(f"{k}: {v}" for k, v in errs.items()), errs)
        return dataclasses.replace(self, **out)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for f in fields(self):
            sec = f.metadata["section"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            cp.set(sec, f.name, str(v))
        import io

        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _coerce(f, v):
    if "parse" in f.metadata:
        return f.metadata["parse"](v)
    typ = type(f.default)
    if typ is bool:
        return str(v).lower() in ("1", "true", "yes", "on")
    if typ is int and isinstance(v, str):
        return int(float(v)) if "e" in v.lower() else int(v)
    return typ(v)


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Defaults, then the INI file (any section), then explicit overrides."""
    cfg = ExperimentConfig()
    if path:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        if not cp.read(path):
            raise ValidationError(f"cannot read config file {path}", {"config": "unreadable"})
        values = {}
        for sec in cp.sections():
            values.update(dict(cp.items(sec)))
        cfg = cfg.update(values)
    if overrides:
        cfg = cfg.update(overrides)
    return cfg.validate()

"""Command-line driver: one scenario per invocation, files out, one summary line.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure (partial
artifacts are kept).
"""
from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import coherence as co
from . import meanfield as mf
from .config import SCENARIOS, ExperimentConfig, load_config
from .core import TREV, Harmonic, SpaceGrid, SubBox
from .errors import CarpetError, DomainError, NotEquilibratedError, NumericError, PropagationDiverged, ValidationError
from .idealgas import (
    contribution_depth_direct,
    depth_report,
    harmonic_state,
    make_carpet,
    spectral_state,
)
from .io import atomic_write_text, render_heatmap, write_carpet, write_csv, write_matrix
from .structures import GENERIC_TIME, fermi_wavevector, fine_grid_for, structure_snapshot, temperature_width_scan


class Outputs:
    def __init__(self, cfg: ExperimentConfig):
        self.dir = Path(cfg.out_dir)
        self.prefix = cfg.prefix or cfg.scenario
        self.cfg = cfg
        self.files = []

    def path(self, suffix: str) -> Path:
        return self.dir / f"{self.prefix}{suffix}"

    def csv(self, suffix, columns, rows):
        p = self.path(suffix)
        write_csv(p, columns, rows)
        self.files.append(p)

    def carpet(self, suffix, carpet):
        p = self.path(suffix + ".carpet.bin")
        write_carpet(p, carpet)
        self.files.append(p)
        self.image(suffix, carpet.density)

    def matrix(self, suffix, m):
        p = self.path(suffix + ".bin")
        write_matrix(p, m)
        self.files.append(p)

    def image(self, suffix, m):
        p = self.path(suffix + ".png")
        render_heatmap(m, p, scale=self.cfg.image_scale)
        self.files.append(p)

    def echo(self):
        p = self.path(".config.echo")
        atomic_write_text(p, self.cfg.to_ini())
        self.files.append(p)


def _ideal_state(cfg: ExperimentConfig):
    if cfg.trap == "harmonic":
        return harmonic_state(Harmonic(cfg.omega, cfg.center), cfg.N)
    return spectral_state(SubBox(cfg.D), cfg.N, cfg.T, K_max=cfg.K_max or None)


def _ideal_carpet(cfg, out):
    state = _ideal_state(cfg)
    grid = SpaceGrid(cfg.carpet_points)
    times = np.linspace(0.0, cfg.carpet_span * TREV, cfg.n_times)
    carpet = make_carpet(state, times, grid, workers=cfg.workers,
                         meta={"N": cfg.N, "D": state.D, "T": cfg.T, "trap": cfg.trap})
    out.carpet("", carpet)
    d1 = contribution_depth_direct(state, 1)
    return {"d_1": d1, "rows": len(times), "cols": grid.n_points + 1}


def _depths(cfg, out):
    if cfg.trap != "subbox":
        raise ValidationError("depths needs trap = subbox", {"trap": "depths compares against the sub-box closed form"})
    state = spectral_state(SubBox(cfg.D), cfg.N, cfg.T, K_max=cfg.K_max or None)
    grid = fine_grid_for(state)
    ps = [p for p in range(-cfg.p_max, cfg.p_max + 1) if p != 0]
    reps = [depth_report(state, p, grid) for p in ps]
    out.csv(".csv", ["p", "d_direct", "d_sinc", "d_fourier"], [(r.p, r.d_direct, r.d_sinc, r.d_fourier) for r in reps])
    worst = max(max(abs(r.d_direct - r.d_sinc), abs(r.d_direct - r.d_fourier), abs(r.d_sinc - r.d_fourier)) for r in reps)
    return {"d_1": next(r.d_direct for r in reps if r.p == 1), "max_route_gap": worst}


def _widths(cfg, out):
    state = _ideal_state(cfg)
    grid = fine_grid_for(state)
    kF = fermi_wavevector(SubBox(cfg.D), cfg.N) if cfg.trap == "subbox" else float("nan")
    rows = []
    for p in range(1, cfg.p_max + 1):
        t = GENERIC_TIME * TREV / p
        s = structure_snapshot(state, p, t, grid)
        rows.append((p, t, s.position, s.depth, s.width, s.width * 2 * kF))
    out.csv(".csv", ["p", "t", "position", "depth", "fwhm", "fwhm_times_2kF"], rows)
    return {"fwhm_times_2kF_p1": rows[0][5]}


def _temperature(cfg, out):
    rows = temperature_width_scan(SubBox(cfg.D), cfg.N, cfg.temperatures, K_max=cfg.K_max or None)
    out.csv(".csv", ["T", "mu", "depth", "d_direct", "fwhm", "fwhm_ratio", "censored"],
            [(r.T, r.mu, r.depth, r.d_direct, r.width, r.ratio, int(r.censored)) for r in rows])
    hot = rows[-1]
    return {"T_max": hot.T, "fwhm_ratio": hot.ratio, "depth_shift": hot.d_direct - rows[0].d_direct}


def _sample_every(cfg):
    if cfg.sample_every > 0:
        return cfg.sample_every
    return max(1, int(round(cfg.sample_interval * TREV / cfg.dt)))


def _tdhf_run(cfg, out, n_atoms, g, tag="", keep_carpets=True):
    grid = SpaceGrid(cfg.n_points)
    state = mf.init_separated(n_atoms, grid, g=g)
    se = _sample_every(cfg)
    n_steps = int(round(cfg.t_end * TREV / cfg.dt))
    n_steps -= n_steps % se
    if n_steps == 0:
        raise ValidationError("t_end shorter than one sampling interval", {"t_end": "too short"})
    rec = co.CoherenceRecorder(search=cfg.search_cells)
    try:
        res = mf.run(state, state.t + n_steps * cfg.dt, dt=cfg.dt, sample_every=se,
                     on_sample=rec, keep_carpets=keep_carpets)
    except PropagationDiverged as err:
        if err.partial is not None:
            _write_run(out, err.partial, rec.trace(), tag)
        raise
    trace = rec.trace()
    _write_run(out, res, trace, tag)
    return res, trace


def _write_run(out, res, trace, tag):
    for comp, carpet in res.carpets.items():
        out.carpet(f"{tag}.{comp}", carpet)
    log = res.log
    out.csv(f"{tag}.conservation.csv", ["t", "norm", "kinetic", "interaction", "energy"],
            zip(log.times, log.norm, log.kinetic, log.interaction, log.energy))
    ks = res.kinetic["plus"]
    out.csv(f"{tag}.kinetic.csv", ["t"] + [f"T_{n + 1}" for n in range(ks.values.shape[0])],
            [(t, *col) for t, col in zip(ks.times, ks.values.T)])
    out.csv(f"{tag}.coherence.csv", ["t", "G", "u0"], zip(trace.times, trace.G, trace.u0))


def _t_dec(trace, cfg):
    try:
        return co.decoherence_time(trace, drop_fraction=cfg.drop_fraction)
    except (NotEquilibratedError, CarpetError):
        return float("nan")


def _tdhf(cfg, out):
    res, trace = _tdhf_run(cfg, out, cfg.n_atoms, cfg.g)
    return {"norm_drift": res.log.norm_drift, "energy_drift": res.log.energy_drift, "t_dec": _t_dec(trace, cfg)}


def _coherence(cfg, out):
    res, trace = _tdhf_run(cfg, out, cfg.n_atoms, cfg.g)
    cmap = co.g1_map(res.state, "plus")
    out.matrix(".g1", cmap.values)
    out.image(".g1", cmap.modulus)
    t_dec = _t_dec(trace, cfg)
    return {"G_0": float(trace.G[min(1, len(trace.G) - 1)]), "G_inf": trace.G_inf, "t_dec": t_dec,
            "energy_drift": res.log.energy_drift}


def _kinetic_window(res, t_dec):
    ks = res.kinetic["plus"]
    start = t_dec if np.isfinite(t_dec) else ks.times[-1] / 2
    return ks, (start, ks.times[-1])


def _scaling_sweep(cfg, out):
    rows = []
    for per in cfg.per_component:
        for g in cfg.g_values:
            res, trace = _tdhf_run(cfg, out, 2 * per, g, tag=f".n{per}.g{g:g}", keep_carpets=False)
            t_dec = _t_dec(trace, cfg)
            ks, window = _kinetic_window(res, t_dec)
            mu, var, sk = mf.kinetic_stats(ks, window)
            rows.append((per, g, t_dec, mu, var, sk, res.log.energy_drift))
    out.csv(".csv", ["per_component", "g", "t_dec", "mu_T", "var_T", "skew_T", "energy_drift"], rows)
    summary = {}
    arr = np.array(rows, dtype=float)
    fits = []
    for per in cfg.per_component:
        sel = (arr[:, 0] == per) & np.isfinite(arr[:, 2])
        if sel.sum() >= 3:
            f = co.fit_power_law(arr[sel, 1], arr[sel, 2])
            fits.append(("t_dec~g", per, f.exponent, f.prefactor, f.r2))
            summary[f"t_dec_exponent_n{per}"] = f.exponent
    for g in cfg.g_values:
        sel = arr[:, 1] == g
        if sel.sum() >= 3:
            f = co.fit_power_law(arr[sel, 0], arr[sel, 3])
            fits.append(("mu_T~N", g, f.exponent, f.prefactor, f.r2))
            summary[f"mu_T_exponent_g{g:g}"] = f.exponent
    if fits:
        out.csv(".fits.csv", ["fit", "fixed", "exponent", "prefactor", "r2"], fits)
    return summary


_DISPATCH = {
    "ideal-carpet": _ideal_carpet,
    "depths": _depths,
    "widths": _widths,
    "temperature": _temperature,
    "tdhf": _tdhf,
    "coherence": _coherence,
    "scaling-sweep": _scaling_sweep,
}


def run_scenario(cfg: ExperimentConfig) -> tuple[dict, list]:
    """Run one scenario, returning the summary numbers and written files."""
    cfg.validate()
    out = Outputs(cfg)
    out.echo()
    summary = _DISPATCH[cfg.scenario](cfg, out)
    return summary, out.files


def _format_summary(scenario, summary):
    parts = []
    for k, v in summary.items():
        parts.append(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}")
    return f"{scenario}: " + " ".join(parts)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fermicarpet", description="Quantum-carpet experiments for released Fermi gases.")
    ap.add_argument("--config", help="INI file; every key may also be given as a flag")
    ap.add_argument("scenario_pos", nargs="?", choices=SCENARIOS, metavar="SCENARIO",
                    help=f"one of {', '.join(SCENARIOS)}")
    for key in ExperimentConfig.keys():
        ap.add_argument(f"--{key}", default=argparse.SUPPRESS, metavar="VALUE")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = vars(ap.parse_args(argv))
    path = args.pop("config", None)
    pos = args.pop("scenario_pos", None)
    if pos is not None:
        args.setdefault("scenario", pos)
    try:
        cfg = load_config(path, args)
    except ValidationError as err:
        for field, msg in err.fields.items():
            print(f"error: {field}: {msg}", file=sys.stderr)
        if not err.fields:
            print(f"error: {err}", file=sys.stderr)
        return 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            summary, files = run_scenario(cfg)
    except ValidationError as err:
        for field, msg in (err.fields or {"config": str(err)}).items():
            print(f"error: {field}: {msg}", file=sys.stderr)
        return 2
    except DomainError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3
    print(_format_summary(cfg.scenario, summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Run configuration, artifact writers and the ``mrfm-cat`` command line.

Configuration files are INI text. A ``[run]`` section names the mode and an
optional preset; the ``[params]``, ``[drive]``, ``[grid]``, ``[integrator]``,
``[collapse]`` and ``[sweep]`` sections override individual preset values::

    [run]
    preset = fig3
    tau_end = 60
    out = results/fig3

    [params]
    coupling = 0.05

Amplitude snapshots can be streamed to a binary file. Layout, all
little-endian::

    header  16 bytes  b"MRFMCAT\\0", uint32 version (=1), uint32 reserved (=0)
    record  float64 tau, uint32 N, 4 zero bytes,
            N complex128 spin-up amplitudes, N complex128 spin-down amplitudes

so a record occupies ``16 + 32 N`` bytes. A ``<stream>.partial`` marker
exists while the stream is open and is removed on a clean close.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import math
import os
import struct
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import cat_analysis as ca
from . import classical_engine as ce
from . import collapse_mc as cm
from . import drive as drv
from . import observables as obs
from .integrator import StiffnessError, Tolerances
from .quantum_engine import (CoherentInit, Health, Propagator, SpinorFockState, TruncationError,
                             coherent_state)

OUTPUT_ROOT_ENV = "MRFM_CAT_OUTPUT_ROOT"
SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_HEALTH = 3
EXIT_IO = 4

MODES = ("quantum", "classical", "jumps", "sweep")

TRAJECTORY_COLUMNS = ("tau", "z", "p_z", "S_x", "S_y", "S_z", "P11", "P22", "R1", "R2", "norm")
CLASSICAL_COLUMNS = ("tau", "z", "p_z", "E0", "S_x", "S_y", "S_z")
CAT_COLUMNS = ("tau", "n_peaks", "positions", "amplitudes", "areas", "separation",
               "amplitude_ratio", "area_ratio", "minor_side")
DENSITY_COLUMNS = ("z", "P", "P_up", "P_down")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class StreamFormatError(ValueError):
    """Snapshot stream is not in the expected binary layout."""


def fmt(x) -> str:
    """17 significant digits, round-trip exact for float64."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (tuple, list)):
        return " ".join(fmt(v) for v in x)
    if x is None:
        return ""
    return str(x)


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover - source checkout
        return "0+unknown"


# -------------------------------------------------------------- configuration

@dataclass(frozen=True)
class RunConfig:
    mode: str = "quantum"
    preset: str | None = None
    rabi: float = 40.0
    coupling: float = 0.03
    spin_count: float = 1.0
    basis_size: int = 2000
    z0: float = -20.0
    p0: float = 0.0
    spin_theta: float = 0.0
    spin_phi: float = 0.0
    drive: drv.DriveProfile = field(default_factory=lambda: drv.preset("fig3"))
    tau_end: float = 100.0
    stride: float = 0.08
    grid: obs.SpatialGrid = field(default_factory=obs.SpatialGrid)
    tolerances: Tolerances = field(default_factory=Tolerances)
    picture: str = "interaction"
    eq12_verbatim: bool = False
    pin_sz: bool = False
    schedule: cm.CollapseSchedule = field(default_factory=cm.CollapseSchedule)
    members: int = 1
    smooth_collapse: bool = True
    prominence: float = ca.DEFAULT_PROMINENCE
    density_every: int = 25
    write_stream: bool = False
    sweep_parameter: str | None = None
    sweep_values: tuple = ()
    out_dir: str = "mrfm_cat_output"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"run.mode: unknown mode {self.mode!r} (expected one of {', '.join(MODES)})")
        for name in ("tau_end", "stride"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"run.{name}: must be positive")
        if self.basis_size < 2:
            raise ConfigError("params.basis_size: must be at least 2")
        if self.spin_count < 1:
            raise ConfigError("params.spin_count: must be >= 1")
        if self.rabi < 0 or self.coupling < 0:
            raise ConfigError("params: rabi and coupling must be non-negative")
        if self.picture not in ("interaction", "raw"):
            raise ConfigError("integrator.picture: must be 'interaction' or 'raw'")
        if self.members < 1:
            raise ConfigError("collapse.members: must be >= 1")
        if self.density_every < 0:
            raise ConfigError("run.density_every: must be >= 0")
        if self.mode == "sweep":
            if not self.sweep_parameter or not self.sweep_values:
                raise ConfigError("sweep: mode 'sweep' needs sweep.parameter and sweep.values")
            if self.sweep_parameter not in SWEEPABLE:
                raise ConfigError(f"sweep.parameter: {self.sweep_parameter!r} is not sweepable")

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["drive"] = dataclasses.asdict(self.drive)
        d["grid"] = dataclasses.asdict(self.grid)
        d["tolerances"] = dataclasses.asdict(self.tolerances)
        d["schedule"] = dataclasses.asdict(self.schedule)
        return json.loads(json.dumps(d, default=_jsonable))

    @property
    def alpha(self) -> complex:
        return CoherentInit.from_means(self.z0, self.p0).alpha

    def child(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


SWEEPABLE = ("rabi", "coupling", "spin_count", "basis_size", "z0", "p0", "tau_end", "stride", "seed")

PRESETS = {
    "fig2": dict(mode="classical", rabi=37.0, coupling=2.8e-7, spin_count=2.9e9,
                 z0=6.7e4, p0=6.7e4, drive=drv.preset("fig2"), tau_end=500.0),
    "fig3": dict(mode="quantum", rabi=40.0, coupling=0.03, spin_count=1.0, basis_size=2000,
                 z0=-20.0, p0=0.0, drive=drv.preset("fig3"), tau_end=100.0),
    "fig4": dict(mode="quantum", rabi=400.0, coupling=0.3, spin_count=1.0, basis_size=2000,
                 z0=-20.0, p0=0.0, drive=drv.preset("fig4"), tau_end=100.0),
}

_SECTIONS = {
    "run": {"mode": str, "preset": str, "tau_end": float, "stride": float, "seed": int,
            "out": str, "density_every": int, "stream": bool, "prominence": float},
    "params": {"rabi": float, "coupling": float, "spin_count": float, "basis_size": int,
               "z0": float, "p0": float, "alpha_re": float, "alpha_im": float,
               "spin_theta": float, "spin_phi": float, "pin_sz": bool},
    "drive": {"preset": str, "ramp_offset": float, "ramp_slope": float, "ramp_end": float,
              "modulation_amplitude": float, "modulation_phase_origin": float},
    "grid": {"z_min": float, "z_max": float, "points": int},
    "integrator": {"rtol": float, "atol": float, "picture": str, "eq12_verbatim": bool},
    "collapse": {"decoherence_time": float, "lifetimes": str, "rng_seed": int,
                 "members": int, "smooth": bool},
    "sweep": {"parameter": str, "values": str},
}


def preset_config(name: str, **overrides) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r} (known: {', '.join(sorted(PRESETS))})")
    return RunConfig(preset=name, **{**PRESETS[name], **overrides})


def _convert(section, key, raw, kind):
    try:
        if kind is bool:
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot read {raw!r} as {kind.__name__}") from None


def _floats(section, key, raw):
    try:
        return tuple(float(v) for v in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{section}.{key}: expected a list of numbers, got {raw!r}") from None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Build a :class:`RunConfig` from INI text."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    values = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        spec = _SECTIONS[section]
        for key, raw in cp.items(section):
            if key not in spec:
                raise ConfigError(f"{source}: unknown key {section}.{key}")
            values[(section, key)] = _convert(section, key, raw, spec[key])

    get = values.get
    preset = get(("run", "preset"))
    if preset and preset not in PRESETS:
        raise ConfigError(f"run.preset: unknown preset {preset!r}")
    base = dict(PRESETS[preset], preset=preset) if preset else {}

    for key in ("mode", "tau_end", "stride", "seed", "density_every", "prominence"):
        if ("run", key) in values:
            base[key] = values[("run", key)]
    if ("run", "out") in values:
        base["out_dir"] = values[("run", "out")]
    if ("run", "stream") in values:
        base["write_stream"] = values[("run", "stream")]

    for key in ("rabi", "coupling", "spin_count", "basis_size", "z0", "p0", "spin_theta", "spin_phi", "pin_sz"):
        if ("params", key) in values:
            base[key] = values[("params", key)]
    if ("params", "alpha_re") in values or ("params", "alpha_im") in values:
        if ("params", "z0") in values or ("params", "p0") in values:
            raise ConfigError("params: give either alpha_re/alpha_im or z0/p0, not both")
        a = complex(get(("params", "alpha_re"), 0.0), get(("params", "alpha_im"), 0.0))
        base["z0"], base["p0"] = math.sqrt(2) * a.real, math.sqrt(2) * a.imag

    profile = base.get("drive", drv.preset("fig3"))
    if ("drive", "preset") in values:
        try:
            profile = drv.preset(values[("drive", "preset")])
        except KeyError:
            raise ConfigError(f"drive.preset: unknown drive preset {values[('drive', 'preset')]!r}") from None
    fields = {f.name for f in dataclasses.fields(drv.DriveProfile)}
    drive_over = {k: v for (s, k), v in values.items() if s == "drive" and k in fields}
    if drive_over:
        profile = dataclasses.replace(profile, **drive_over)
    base["drive"] = profile

    grid_over = {k: v for (s, k), v in values.items() if s == "grid"}
    if grid_over:
        try:
            base["grid"] = dataclasses.replace(obs.SpatialGrid(), **grid_over)
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None

    tol_over = {k: v for (s, k), v in values.items() if s == "integrator" and k in ("rtol", "atol")}
    if tol_over:
        try:
            base["tolerances"] = dataclasses.replace(Tolerances(), **tol_over)
        except ValueError as exc:
            raise ConfigError(f"integrator: {exc}") from None
    for key in ("picture", "eq12_verbatim"):
        if ("integrator", key) in values:
            base[key] = values[("integrator", key)]

    sched = {}
    if ("collapse", "decoherence_time") in values:
        sched["decoherence_time"] = values[("collapse", "decoherence_time")]
    if ("collapse", "lifetimes") in values:
        sched["lifetimes"] = _floats("collapse", "lifetimes", values[("collapse", "lifetimes")])
    sched["rng_seed"] = values.get(("collapse", "rng_seed"), base.get("seed", 0))
    try:
        base["schedule"] = cm.CollapseSchedule(**sched)
    except ValueError as exc:
        raise ConfigError(f"collapse: {exc}") from None
    if ("collapse", "members") in values:
        base["members"] = values[("collapse", "members")]
    if ("collapse", "smooth") in values:
        base["smooth_collapse"] = values[("collapse", "smooth")]

    if ("sweep", "parameter") in values:
        base["sweep_parameter"] = values[("sweep", "parameter")]
    if ("sweep", "values") in values:
        base["sweep_values"] = _floats("sweep", "values", values[("sweep", "values")])

    try:
        return RunConfig(**base)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), source=str(path))


def resolve_out_dir(config: RunConfig, override=None) -> Path:
    out = Path(override) if override is not None else Path(config.out_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


# ---------------------------------------------------------- snapshot streams

STREAM_MAGIC = b"MRFMCAT\0"
STREAM_VERSION = 1
_HEADER = struct.Struct("<8sII")
_RECORD_HEAD = struct.Struct("<dI4x")
_C128 = np.dtype("<c16")


def record_size(n: int) -> int:
    return _RECORD_HEAD.size + 2 * n * _C128.itemsize


class SnapshotStreamWriter:
    """Append-only writer of amplitude snapshots."""

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        self.marker = self.path.with_name(self.path.name + ".partial")
        self.marker.touch()
        exists = append and self.path.exists() and self.path.stat().st_size > 0
        self._fh = open(self.path, "ab" if exists else "wb")
        if not exists:
            self._fh.write(_HEADER.pack(STREAM_MAGIC, STREAM_VERSION, 0))
        self.count = 0

    def write(self, state: SpinorFockState):
        n = state.size
        self._fh.write(_RECORD_HEAD.pack(float(state.tau), n))
        self._fh.write(np.ascontiguousarray(state.a, dtype=_C128).tobytes())
        self._fh.write(np.ascontiguousarray(state.b, dtype=_C128).tobytes())
        self.count += 1

    def close(self):
        self._fh.close()
        self.marker.unlink(missing_ok=True)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:  # leave the marker behind
            self._fh.close()
        return False


def emit_snapshot_stream(sink, records) -> int:
    """Write ``records`` (SpinorFockStates) to ``sink``; returns the record count."""
    with SnapshotStreamWriter(sink) as w:
        for state in records:
            w.write(state)
    return w.count


def read_snapshot_stream(path):
    """Yield the SpinorFockStates stored in a snapshot stream."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise StreamFormatError("stream shorter than its header")
        magic, version, _ = _HEADER.unpack(head)
        if magic != STREAM_MAGIC:
            raise StreamFormatError(f"bad magic {magic!r}")
        if version != STREAM_VERSION:
            raise StreamFormatError(f"unsupported stream version {version}")
        while True:
            rh = fh.read(_RECORD_HEAD.size)
            if not rh:
                return
            if len(rh) != _RECORD_HEAD.size:
                raise StreamFormatError("truncated record header")
            tau, n = _RECORD_HEAD.unpack(rh)
            body = fh.read(2 * n * _C128.itemsize)
            if len(body) != 2 * n * _C128.itemsize:
                raise StreamFormatError(f"truncated record at tau={tau}")
            amps = np.frombuffer(body, dtype=_C128).astype(np.complex128)
            yield SpinorFockState(amps[:n], amps[n:], tau)


# ------------------------------------------------------------------- writers

def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"# schema {SCHEMA_VERSION}"])
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path):
    """``(columns, rows)`` of a CSV written by :func:`write_csv` (values as strings)."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        first = next(r)
        if not first or not first[0].startswith("# schema"):
            raise ValueError(f"{path}: missing schema line")
        columns = next(r)
        return columns, list(r)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def quantum_row(state: SpinorFockState, initial_norm: float):
    z, p, sx, sy, sz = obs.means(state)
    p11, p22 = obs.populations(state)
    r1, r2 = obs.correlations(state)
    return (state.tau, z, p, sx, sy, sz, p11, p22, r1, r2, state.norm() - initial_norm)


def cat_row(r: ca.CatReport):
    return (r.tau, r.n_peaks, r.peak_positions, r.peak_amplitudes, r.peak_areas,
            r.separation_d, r.amplitude_ratio, r.area_ratio, r.minor_side)


PLOT_HEADER = '''"""Plot script generated by mrfm-cat. Needs numpy and matplotlib."""
import glob
import os
import numpy as np
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def load(name):
    return np.genfromtxt(os.path.join(HERE, name), delimiter=",", names=True, skip_header=1)

'''

PLOT_SCRIPTS = {
    "plot_density.py": PLOT_HEADER + '''
files = sorted(glob.glob(os.path.join(HERE, "density_*.csv")))
fig, ax = plt.subplots(figsize=(6, 8))
for k, f in enumerate(files):
    d = np.genfromtxt(f, delimiter=",", names=True, skip_header=1)
    tau = float(os.path.basename(f)[8:-4])
    ax.plot(d["z"], d["P"] / d["P"].max() + k, lw=0.8)
    ax.text(d["z"][-1], k, f"{tau:g}", fontsize=6)
ax.set_xlabel("z")
ax.set_ylabel("P(z), offset per snapshot")
fig.savefig(os.path.join(HERE, "density.png"), dpi=150)
''',
    "plot_populations.py": PLOT_HEADER + '''
d = load("trajectory.csv")
fig, ax = plt.subplots()
ax.plot(d["tau"], d["P11"], label="P11")
ax.plot(d["tau"], d["P22"], label="P22")
ax.set_xlabel("tau")
ax.legend()
fig.savefig(os.path.join(HERE, "populations.png"), dpi=150)
''',
    "plot_mean_z.py": PLOT_HEADER + '''
d = load("trajectory.csv")
fig, ax = plt.subplots()
ax.plot(d["tau"], d["z"])
ax.set_xlabel("tau")
ax.set_ylabel("<z>")
fig.savefig(os.path.join(HERE, "mean_z.png"), dpi=150)
''',
    "plot_classical.py": PLOT_HEADER + '''
d = load("classical.csv")
fig, axes = plt.subplots(3, 2, figsize=(8, 9), sharex=True)
for ax, name in zip(axes.flat, ("z", "p_z", "E0", "S_x", "S_y", "S_z")):
    ax.plot(d["tau"], d[name], lw=0.6)
    ax.set_ylabel(name)
for ax in axes[-1]:
    ax.set_xlabel("tau")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "classical.png"), dpi=150)
''',
}


def write_plot_scripts(out: Path, names):
    for name in names:
        (out / name).write_text(PLOT_SCRIPTS[name])


# --------------------------------------------------------------------- runs

class HealthError(RuntimeError):
    """A numerical health check failed."""


def initial_state(config: RunConfig) -> SpinorFockState:
    init = CoherentInit(config.alpha, config.spin_theta, config.spin_phi)
    return coherent_state(init, config.basis_size)


def _run_quantum(config: RunConfig, out: Path) -> dict:
    state0 = initial_state(config)
    prop = Propagator(config.drive, config.rabi, config.coupling, tolerances=config.tolerances,
                      picture=config.picture, eq12_verbatim=config.eq12_verbatim)
    writer = SnapshotStreamWriter(out / "snapshots.bin") if config.write_stream else None
    rows = [quantum_row(state0, state0.norm())]
    reports = [ca.detect_peaks(obs.density(state0, config.grid), config.prominence)]
    if writer:
        writer.write(state0)

    def dump_density(state):
        snap = obs.density(state, config.grid, warn=False)
        write_csv(out / f"density_{state.tau:08.3f}.csv", DENSITY_COLUMNS,
                  zip(snap.z, snap.p_total, snap.p_up, snap.p_down))
        return snap

    if config.density_every:
        dump_density(state0)
    traj_health = Health()
    for k, state in enumerate(prop.iterate(state0, config.tau_end, config.stride, traj_health), start=1):
        rows.append(quantum_row(state, state0.norm()))
        if config.density_every and k % config.density_every == 0:
            snap = dump_density(state)
        else:
            snap = obs.density(state, config.grid, warn=False)
        reports.append(ca.detect_peaks(snap, config.prominence))
        if writer:
            writer.write(state)
    if writer:
        writer.close()

    write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, rows)
    write_csv(out / "cat_series.csv", CAT_COLUMNS, (cat_row(r) for r in reports))
    series = ca.splitting_series(reports)
    write_json(out / "cat_cycles.json", {
        "first_split": series.first_split, "period": series.period,
        "cycle_interval": series.cycle_interval, "max_separation": series.max_separation,
        "cycles": [dataclasses.asdict(c) for c in series.cycles]})
    write_plot_scripts(out, ("plot_density.py", "plot_populations.py", "plot_mean_z.py"))
    return {"final_norm_drift": traj_health.max_norm_drift, "tail_mass": traj_health.max_tail_mass,
            "steps_accepted": traj_health.steps_accepted, "steps_rejected": traj_health.steps_rejected}


def _run_classical(config: RunConfig, out: Path) -> dict:
    params = ce.ClassicalParams(config.rabi, config.coupling, config.spin_count, config.drive,
                                pin_sz=config.pin_sz)
    s = (0.5 * math.sin(config.spin_theta) * math.cos(config.spin_phi),
         0.5 * math.sin(config.spin_theta) * math.sin(config.spin_phi),
         0.5 * math.cos(config.spin_theta))
    traj = ce.evolve_classical(ce.ClassicalState(config.z0, config.p0, s), params, config.tau_end,
                               stride=config.stride, tolerances=config.tolerances)
    cols = traj.columns()
    write_csv(out / "classical.csv", CLASSICAL_COLUMNS, zip(*(cols[c] for c in CLASSICAL_COLUMNS)))
    write_plot_scripts(out, ("plot_classical.py",))
    return {"spin_length_drift": traj.spin_length_drift(), "steps_accepted": traj.steps}


def _run_jumps(config: RunConfig, out: Path) -> dict:
    state0 = initial_state(config)
    kwargs = dict(init=state0, drive=config.drive, rabi=config.rabi, coupling=config.coupling,
                  schedule=config.schedule, tau_end=config.tau_end, stride=config.stride,
                  grid=config.grid, prominence_floor=config.prominence,
                  smooth=config.smooth_collapse, tolerances=config.tolerances,
                  eq12_verbatim=config.eq12_verbatim)
    runs = cm.run_ensemble(config.members, **kwargs)
    ref_taus = np.asarray(runs[0].taus)
    zsum = np.zeros_like(ref_taus)
    for run in runs:
        d = out / f"member_{run.member:04d}"
        d.mkdir(parents=True, exist_ok=True)
        rows = [(t, *m, *pp) for t, m, pp in zip(run.taus, run.means, run.populations)]
        write_csv(d / "trajectory.csv", ("tau", "z", "p_z", "S_x", "S_y", "S_z", "P11", "P22"), rows)
        write_json(d / "jumps.json", {"checksum": run.checksum(),
                                      "jumps": [j.as_dict() for j in run.jumps]})
        # jump snapshots can shift the sampling grid by rounding only
        zsum += np.interp(ref_taus, run.taus, [m[0] for m in run.means])
    summary = cm.summarize(runs)
    write_csv(out / "ensemble_summary.csv", tuple(summary.as_dict()),
              [tuple(summary.as_dict().values())])
    areas = [min(j.peak_areas) / sum(j.peak_areas) for r in runs for j in r.jumps]
    counts, edges = np.histogram(areas, bins=20, range=(0.0, 0.5))
    write_csv(out / "minor_area_histogram.csv", ("lo", "hi", "count"), zip(edges[:-1], edges[1:], counts))
    write_csv(out / "ensemble_mean_z.csv", ("tau", "z"), zip(ref_taus, zsum / len(runs)))
    return {"final_norm_drift": max(r.health.max_norm_drift for r in runs),
            "tail_mass": max(r.health.max_tail_mass for r in runs),
            "jumps": summary.jumps, "checksums": [r.checksum() for r in runs]}


def _run_sweep(config: RunConfig, out: Path) -> dict:
    kind = int if config.sweep_parameter in ("basis_size", "seed") else float
    base_mode = PRESETS[config.preset]["mode"] if config.preset else "quantum"
    rows, children = [], []
    for value in config.sweep_values:
        v = kind(value)
        name = f"{config.sweep_parameter}={v!r}"
        child = config.child(mode=base_mode, sweep_parameter=None, sweep_values=(),
                             out_dir=str(out / name), **{config.sweep_parameter: v})
        status, manifest = execute(child, out / name)
        children.append(name)
        rows.append((name, v, status, json.dumps(manifest.get("health", {}), default=_jsonable)))
    write_csv(out / "sweep_summary.csv", ("child", "value", "exit_status", "health"), rows)
    return {"children": children, "failed": sum(1 for r in rows if r[2] != EXIT_OK)}


_RUNNERS = {"quantum": _run_quantum, "classical": _run_classical, "jumps": _run_jumps, "sweep": _run_sweep}


def execute(config: RunConfig, out: Path | None = None):
    """Run ``config`` and write its artifacts; returns ``(exit_status, manifest)``."""
    out = Path(out) if out is not None else resolve_out_dir(config)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return EXIT_IO, {"error": {"type": type(exc).__name__, "message": str(exc)}}
    started = time.time()
    status, error, health = EXIT_OK, None, {}
    try:
        health = _RUNNERS[config.mode](config, out)
        if config.mode == "sweep" and health.get("failed"):
            status = EXIT_HEALTH
    except (TruncationError, StiffnessError, HealthError, FloatingPointError) as exc:
        status, error = EXIT_HEALTH, exc
    except (ConfigError, ValueError) as exc:
        status, error = EXIT_CONFIG, exc
    except OSError as exc:
        status, error = EXIT_IO, exc
    manifest = {
        "schema": SCHEMA_VERSION,
        "code_version": code_version(),
        "config": config.echo(),
        "started": started,
        "finished": time.time(),
        "exit_status": status,
        "health": health,
    }
    if error is not None:
        manifest["error"] = {"type": type(error).__name__, "message": str(error)}
        try:
            write_json(out / "error.json", {**manifest["error"], "exit_status": status})
        except OSError:
            pass
    try:
        write_json(out / "manifest.json", manifest)
    except OSError:
        return EXIT_IO, manifest
    return status, manifest


def run(config: RunConfig, out=None) -> int:
    return execute(config, out)[0]


def replay(stream, out=None, grid: obs.SpatialGrid | None = None,
           prominence: float = ca.DEFAULT_PROMINENCE) -> list:
    """Recompute observables and peak reports from a stored amplitude stream."""
    grid = grid or obs.SpatialGrid()
    rows, reports = [], []
    initial = None
    for state in read_snapshot_stream(stream):
        initial = state.norm() if initial is None else initial
        rows.append(quantum_row(state, initial))
        reports.append(ca.detect_peaks(obs.density(state, grid, warn=False), prominence))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, rows)
        write_csv(out / "cat_series.csv", CAT_COLUMNS, (cat_row(r) for r in reports))
    return reports


def write_preset(name: str, path) -> Path:
    """Write the INI text of a compiled-in preset."""
    cfg = preset_config(name)
    d = cfg.drive
    text = [
        "[run]", f"preset = {name}", f"mode = {cfg.mode}", f"tau_end = {fmt(cfg.tau_end)}",
        f"stride = {fmt(cfg.stride)}", f"seed = {cfg.seed}", f"out = {name}", "",
        "[params]", f"rabi = {fmt(cfg.rabi)}", f"coupling = {fmt(cfg.coupling)}",
        f"spin_count = {fmt(cfg.spin_count)}", f"basis_size = {cfg.basis_size}",
        f"z0 = {fmt(cfg.z0)}", f"p0 = {fmt(cfg.p0)}", "",
        "[drive]", f"ramp_offset = {fmt(d.ramp_offset)}", f"ramp_slope = {fmt(d.ramp_slope)}",
        f"ramp_end = {fmt(d.ramp_end)}", f"modulation_amplitude = {fmt(d.modulation_amplitude)}",
        f"modulation_phase_origin = {fmt(d.modulation_phase_origin)}", "",
    ]
    path = Path(path)
    if path.suffix != ".ini":
        path.mkdir(parents=True, exist_ok=True)
        path = path / f"{name}.ini"
    path.write_text("\n".join(text))
    return path


# ---------------------------------------------------------------------- CLI

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mrfm-cat", description="Spin-cantilever cat-state simulations.")
    sub = ap.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("run", help="run a configuration file")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p = sub.add_parser("preset", help="write a preset configuration, optionally run it")
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--out", required=True, help="directory for the config and results")
    p.add_argument("--execute", action="store_true", help="also run the preset")
    p = sub.add_parser("sweep", help="run a sweep configuration")
    p.add_argument("config")
    p.add_argument("--out")
    p = sub.add_parser("replay", help="re-analyse a stored snapshot stream")
    p.add_argument("stream")
    p.add_argument("--analyze", action="store_true", help="write observables and peak series")
    p.add_argument("--out", default=None)
    return ap


def _fail(status, exc):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_status": status}),
          file=sys.stderr)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb in ("run", "sweep"):
            cfg = load_config(args.config)
            if args.verb == "sweep" and cfg.mode != "sweep":
                raise ConfigError("sweep: config does not define a sweep (set mode = sweep)")
            status, manifest = execute(cfg, resolve_out_dir(cfg, args.out))
            if status != EXIT_OK and "error" in manifest:
                print(json.dumps({**manifest["error"], "exit_status": status}), file=sys.stderr)
            return status
        if args.verb == "preset":
            path = write_preset(args.name, args.out)
            print(path)
            if args.execute:
                cfg = load_config(path)
                return execute(cfg, resolve_out_dir(cfg, Path(args.out) / args.name))[0]
            return EXIT_OK
        if args.verb == "replay":
            out = args.out
            if args.analyze and out is None:
                out = Path(args.stream).with_suffix("").name + "_replay"
            reports = replay(args.stream, resolve_out_dir(RunConfig(), out) if args.analyze else None)
            cats = sum(1 for r in reports if r.n_peaks >= 2)
            print(json.dumps({"records": len(reports), "cat_snapshots": cats}))
            return EXIT_OK
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except StreamFormatError as exc:
        return _fail(EXIT_IO, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    return EXIT_OK  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

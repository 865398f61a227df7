"""``dnls`` command line: subcommands, INI run configuration, CSV/SVG output
and the parameter sweep."""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import DnlsError, DomainError, EvenField, ModelParams, make_grid

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
SUBCOMMANDS = ("groundstate", "functionals", "spectrum", "special", "evolve", "classify",
               "envelope", "sweep")
SWEEPABLE = ("omega", "A", "eps", "N")

# key -> converter; every key a config file may set
KEYS = {
    "gamma": float, "p": float, "omega": float, "L": float, "N": int,
    "out": str, "workers": int, "seed": int,
    "A": float, "k": int, "t0": float, "t1": float, "dt": float, "record_every": float,
    "R": float, "init": str, "direction": str, "horizon": float, "input": str,
    "omega_min": float, "omega_max": float, "n_omega": int,
    "command": str, "axis": str, "values": str, "svg": bool,
}
DEFAULTS = {"L": 30.0, "N": 3000, "workers": 1, "seed": 0, "A": 1.0, "k": 3,
            "dt": 1e-3, "record_every": 0.05, "direction": "forward", "init": "qstate",
            "svg": True}
REQUIRED = ("gamma", "p", "omega")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def params(self) -> ModelParams:
        return ModelParams(self["gamma"], self["p"], self["omega"])

    def resolved(self) -> dict:
        return {"command": self.command, **{k: self.values[k] for k in sorted(self.values)}}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.resolved(), sort_keys=True).encode()).hexdigest()[:12]


# --- configuration -----------------------------------------------------------

def _convert(key: str, raw, where: str = ""):
    conv = KEYS[key]
    try:
        if conv is bool:
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return conv(raw)
    except ValueError:
        raise ConfigError(f"{where}invalid value for {key}: {raw!r}") from None


def read_ini(path: str | os.PathLike) -> dict:
    """``key = value`` lines (an optional ``[section]`` header is ignored)."""
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    body = text if text.lstrip().startswith("[") else "[run]\n" + text
    offset = 0 if text.lstrip().startswith("[") else 1
    try:
        cp.read_string(body, source=str(path))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        where = f" (line {line - offset})" if line else ""
        raise ConfigError(f"parse error in {path}{where}: {exc.message.splitlines()[0]}") from None
    out = {}
    lines = body.splitlines()
    for section in cp.sections():
        for key, raw in cp.items(section):
            if key not in KEYS:
                lineno = next((i for i, ln in enumerate(lines, 1 - offset)
                               if ln.split("=")[0].strip() == key), None)
                raise ConfigError(f"unknown key {key!r} in {path} (line {lineno})")
            out[key] = _convert(key, raw, f"{path}: ")
    return out


def _validate(cfg: RunConfig) -> None:
    v = cfg.values
    for key in REQUIRED:
        if v.get(key) is None:
            raise ConfigError(f"missing required parameter: {key}")
    if v["gamma"] >= 0:
        raise ConfigError("gamma must be negative")
    if not v["p"] > 5:
        raise ConfigError("p must exceed 5")
    if not v["omega"] > 0:
        raise ConfigError("omega must be positive")
    if not v["L"] > 0:
        raise ConfigError("L must be positive")
    if v["N"] < 16:
        raise ConfigError("N must be at least 16")
    if v.get("workers", 1) < 1:
        raise ConfigError("workers must be at least 1")
    if v.get("direction") not in ("forward", "backward"):
        raise ConfigError("direction must be forward or backward")
    if v.get("dt") is not None and not v["dt"] > 0:
        raise ConfigError("dt must be positive")
    if cfg.command == "sweep":
        if v.get("axis") not in SWEEPABLE:
            raise ConfigError(f"axis must be one of {', '.join(SWEEPABLE)}")
        if not v.get("values"):
            raise ConfigError("missing required parameter: values")
        if v.get("command") not in SUBCOMMANDS[:-1]:
            raise ConfigError("sweep needs command = one of " + ", ".join(SUBCOMMANDS[:-1]))


def parse_config(command: str, path: str | None = None, flags: dict | None = None) -> RunConfig:
    """Merge defaults, an INI file and explicit flags (flags win) and validate."""
    values = dict(DEFAULTS)
    if path:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        values.update(read_ini(path))
    for key, raw in (flags or {}).items():
        if raw is None:
            continue
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _convert(key, raw)
    cfg = RunConfig(command, values)
    _validate(cfg)
    return cfg


# --- output --------------------------------------------------------------------

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(h, "") for h in header]
            w.writerow([fmt(x) for x in row])
    return path


def write_summary(path: Path, items: dict) -> Path:
    return write_csv(path, ["quantity", "value"], list(items.items()))


def write_field(path: Path, f: EvenField) -> Path:
    v = np.asarray(f.values, dtype=complex)
    return write_csv(path, ["x", "re", "im"], zip(f.grid.x, v.real, v.imag))


def read_field(path: str | os.PathLike, params: ModelParams) -> EvenField:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["x", "re", "im"]:
        raise ConfigError(f"{path}: field CSV needs header x,re,im")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    x = data[:, 0]
    N = len(x) - 1
    grid = make_grid(params, float(x[-1]), N)
    if not np.allclose(x, grid.x, rtol=0, atol=1e-9 * max(1.0, grid.L)):
        raise ConfigError(f"{path}: nodes are not an even grid on [0, L]")
    return EvenField(grid, data[:, 1] + 1j * data[:, 2])


def svg_lines(path: Path, series: list[tuple[np.ndarray, np.ndarray]], xlabel: str, ylabel: str,
              width: int = 640, height: int = 420) -> Path:
    """Minimal SVG: each series is a polyline; single points become dots."""
    xs = np.concatenate([s[0] for s in series])
    ys = np.concatenate([s[1] for s in series])
    x0, x1 = float(np.min(xs)), float(np.max(xs))
    y0, y1 = float(np.min(ys)), float(np.max(ys))
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0
    pad = 50

    def tx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def ty(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colours = ["#1f4e79", "#b22222", "#2e7d32", "#6a1b9a", "#ef6c00"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="13">{xlabel}</text>',
        f'<text x="14" y="{height / 2}" font-size="13" transform="rotate(-90 14 {height / 2})"'
        f' text-anchor="middle">{ylabel}</text>',
    ]
    for i, (sx, sy) in enumerate(series):
        col = colours[i % len(colours)]
        pts = " ".join(f"{tx(a):.2f},{ty(b):.2f}" for a, b in zip(sx, sy))
        if len(sx) > 1:
            parts.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{pts}"/>')
        for a, b in zip(sx, sy):
            parts.append(f'<circle cx="{tx(a):.2f}" cy="{ty(b):.2f}" r="2.5" fill="{col}"/>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
    return path


def run_dir(cfg: RunConfig) -> Path:
    if cfg.get("out"):
        d = Path(cfg["out"])
    else:
        root = Path(os.environ.get("DNLS_OUT", "dnls_out"))
        d = root / f"{cfg.command}-{cfg.digest()}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_manifest(d: Path, cfg: RunConfig, outputs: list[str], status: str = "ok",
                   error: str | None = None) -> Path:
    man = {
        "version": __version__,
        "config": cfg.resolved(),
        "seed": cfg.get("seed", 0),
        "status": status,
        "outputs": sorted(outputs),
    }
    if error:
        man["error"] = error
    path = d / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return path


# --- subcommands -------------------------------------------------------------------
# each returns (summary row for sweeps, list of files written)

def _grid(cfg: RunConfig):
    return make_grid(cfg.params, cfg["L"], cfg["N"])


def _gs(cfg: RunConfig, discrete: bool = True):
    from .groundstate import ground_state

    return ground_state(cfg.params, _grid(cfg), discrete=discrete)


def cmd_groundstate(cfg: RunConfig, d: Path):
    from .groundstate import elliptic_residual, gn_identity, ground_state

    gs = ground_state(cfg.params, _grid(cfg))
    interior, robin = elliptic_residual(gs)
    summary = {**gs.summary(), "residual_interior": interior, "residual_robin": robin,
               "gn_max_deviation": gn_identity(gs).max_deviation}
    write_summary(d / "summary.csv", summary)
    write_field(d / "Q.csv", gs.profile)
    return summary, ["summary.csv", "Q.csv"]


def cmd_functionals(cfg: RunConfig, d: Path):
    from .functionals import report

    if cfg.get("input"):
        u = read_field(cfg["input"], cfg.params)
    else:
        u = _gs(cfg).profile
    row = report(u, cfg.params).as_row()
    write_csv(d / "functionals.csv", list(row), [row])
    return row, ["functionals.csv"]


def _spectrum(cfg: RunConfig):
    from .spectral import assemble, solve_spectrum

    gs = _gs(cfg)
    return gs, solve_spectrum(assemble(gs), gs)


def cmd_spectrum(cfg: RunConfig, d: Path):
    from .spectral import decay_check

    gs, spec = _spectrum(cfg)
    summary = {"e_omega": spec.e_omega, "mu1": spec.mu1, "mu2": spec.mu2,
               "residual_plus": spec.residuals[0], "residual_minus": spec.residuals[1],
               "pairing": spec.pairing, "e_block": spec.e_block,
               "decay": decay_check(spec, gs)}
    write_summary(d / "summary.csv", summary)
    write_field(d / "Y1.csv", spec.Y1)
    write_field(d / "Y2.csv", spec.Y2)
    return summary, ["summary.csv", "Y1.csv", "Y2.csv"]


def _series(cfg: RunConfig):
    from .special import build_series, t0_for

    gs, spec = _spectrum(cfg)
    series = build_series(cfg["A"], cfg["k"], spec, gs)
    t0 = cfg.get("t0")
    if t0 is None:
        t0 = t0_for(series) if cfg["A"] else 0.0
    return gs, spec, series, t0


def cmd_special(cfg: RunConfig, d: Path):
    from .special import seed_and_residual

    gs, spec, series, t0 = _series(cfg)
    seed = seed_and_residual(series, t0)
    files = ["summary.csv", "seed.csv"]
    for j, z in enumerate(series.Z, start=1):
        write_field(d / f"Z{j}.csv", z)
        files.append(f"Z{j}.csv")
    summary = {"A": series.A, "k": series.k, "t0": t0, "e_omega": series.e_omega,
               "slope": seed.slope, "target_slope": -(series.k + 1) * series.e_omega,
               "vandermonde_defect": series.vandermonde_defect}
    write_summary(d / "summary.csv", summary)
    write_field(d / "seed.csv", seed.field)
    return summary, files


def _initial(cfg: RunConfig):
    """Resolve ``init`` into ``(field, start time, ground state)``."""
    init = cfg["init"]
    params = cfg.params
    if init == "qstate":
        gs = _gs(cfg)
        return gs.profile, cfg.get("t0") or 0.0, gs
    if init == "seed":
        from .special import seed_and_residual

        gs, _, series, t0 = _series(cfg)
        seed = seed_and_residual(series, t0)
        return seed.field * np.exp(1j * params.omega * t0), t0, gs
    if init.startswith("seed:"):
        from .special import build_series, seed_and_residual

        try:
            A, k, t0 = init[5:].split(",")
            A, k, t0 = float(A), int(k), float(t0)
        except ValueError:
            raise ConfigError("init seed needs seed:A,k,t0") from None
        gs, spec = _spectrum(cfg)
        seed = seed_and_residual(build_series(A, k, spec, gs), t0)
        return seed.field * np.exp(1j * params.omega * t0), t0, gs
    if init.startswith("threshold:"):
        from .functionals import generate_threshold_data

        try:
            path, eps, sign = init[10:].split(",")
            eps, sign = float(eps), int(sign)
        except ValueError:
            raise ConfigError("init threshold needs threshold:dirfile,eps,sign") from None
        direction = read_field(path, params)
        from .groundstate import ground_state

        gs = ground_state(params, direction.grid, discrete=True)
        sample = generate_threshold_data(direction, eps, sign, params, gs=gs)
        return sample.field, cfg.get("t0") or 0.0, gs
    u = read_field(init, params)
    from .groundstate import ground_state

    return u, cfg.get("t0") or 0.0, ground_state(params, u.grid, discrete=True)


def _trajectory_rows(traj):
    return [s.row() for s in traj.samples]


def cmd_evolve(cfg: RunConfig, d: Path):
    from .evolve import TRAJECTORY_COLUMNS, TruncationBreached, evolve

    u0, t0, gs = _initial(cfg)
    t1 = cfg.get("t1")
    if t1 is None:
        t1 = t0 + (cfg.get("horizon") or 1.0)
    try:
        traj = evolve(u0, cfg.params, (t0, t1), cfg["dt"], cfg["record_every"], gs=gs,
                      R=cfg.get("R"))
        error = None
    except TruncationBreached as exc:
        traj, error = exc.trajectory, str(exc)
    write_csv(d / "trajectory.csv", TRAJECTORY_COLUMNS, _trajectory_rows(traj))
    write_field(d / "final.csv", traj.final)
    summary = {"status": traj.status, "t_final": traj.t_final, "steps": traj.steps,
               "min_dt": traj.min_dt}
    if error:
        raise DnlsError(error)
    return summary, ["trajectory.csv", "final.csv"]


def cmd_classify(cfg: RunConfig, d: Path):
    from .evolve import TRAJECTORY_COLUMNS, classify

    u0, t0, gs = _initial(cfg)
    horizon = cfg.get("horizon") or 5.0
    res = classify(u0, cfg.params, horizon, cfg["direction"], dt0=cfg["dt"],
                   record_every=cfg["record_every"], gs=gs, t_start=t0, R=cfg.get("R"))
    row = res.row(cfg["init"])
    write_csv(d / "classify.csv", ["init", "verdict", "final_t", "rate"], [row])
    write_csv(d / "trajectory.csv", TRAJECTORY_COLUMNS, _trajectory_rows(res.trajectory))
    return row, ["classify.csv", "trajectory.csv"]


def cmd_envelope(cfg: RunConfig, d: Path):
    from .envelope import curve, tangency_and_convexity

    g, p = cfg["gamma"], cfg["p"]
    if cfg.get("omega_min") is not None and cfg.get("omega_max") is not None:
        omegas = np.geomspace(cfg["omega_min"], cfg["omega_max"], cfg.get("n_omega") or 20)
    else:
        omegas = np.array([cfg["omega"]])
    pts = curve(g, p, omegas)
    slope = {}
    for branch in ("low", "high"):
        sub = [pt for pt in pts if pt.branch == branch]
        if len(sub) >= 5:
            rep = tangency_and_convexity(sub)
            slope.update(dict(zip(rep.omega, rep.slope)))
    rows = [{"omega": pt.omega, "branch": pt.branch, "M": pt.M, "E": pt.E,
             "slope": slope.get(pt.omega, float("nan")), "target_slope": -0.5 * pt.omega}
            for pt in pts]
    header = ["omega", "branch", "M", "E", "slope", "target_slope"]
    write_csv(d / "envelope.csv", header, rows)
    files = ["envelope.csv"]
    if cfg.get("svg", True):
        series = [(np.array([pt.M for pt in pts]), np.array([pt.E for pt in pts]))]
        # a few tangent lines C_omega: E = r - omega M / 2
        m = series[0][0]
        for pt in pts[:: max(1, len(pts) // 4)]:
            mm = np.linspace(m.min(), m.max(), 2)
            series.append((mm, pt.r - 0.5 * pt.omega * mm))
        svg_lines(d / "envelope.svg", series, "M", "E")
        files.append("envelope.svg")
    return (rows[0] if len(rows) == 1 else {"points": len(rows)}), files


COMMANDS = {
    "groundstate": cmd_groundstate,
    "functionals": cmd_functionals,
    "spectrum": cmd_spectrum,
    "special": cmd_special,
    "evolve": cmd_evolve,
    "classify": cmd_classify,
    "envelope": cmd_envelope,
}


def execute(cfg: RunConfig) -> tuple[dict, Path]:
    """Run one subcommand into its directory; the manifest is written even on failure."""
    d = run_dir(cfg)
    try:
        summary, files = COMMANDS[cfg.command](cfg, d)
    except (DnlsError, ConfigError) as exc:
        write_manifest(d, cfg, [p.name for p in d.iterdir() if p.name != "manifest.json"],
                       "error", str(exc))
        raise
    write_manifest(d, cfg, files)
    return summary, d


# --- sweep ---------------------------------------------------------------------------

def _sweep_one(args):
    command, values, root = args
    cfg = RunConfig(command, values)
    cfg.values["out"] = str(Path(root) / f"{command}-{cfg.digest()}")
    try:
        _validate(cfg)
        summary, _ = execute(cfg)
        return summary, ""
    except (DnlsError, ConfigError, ValueError) as exc:
        return {}, f"{type(exc).__name__}: {exc}"


def sweep(base: RunConfig, axis: str, values: list) -> tuple[list[dict], Path]:
    d = run_dir(base)
    jobs = []
    for v in values:
        vals = {k: x for k, x in base.values.items() if k not in ("axis", "values", "command", "out")}
        vals[axis] = _convert(axis, v)
        jobs.append((base["command"], vals, str(d)))
    workers = base.get("workers", 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    keys = []
    for summary, _ in results:
        keys += [k for k in summary if k not in keys and k != axis]
    rows = []
    for (_, vals, _), (summary, err) in zip(jobs, results):
        rows.append({axis: vals[axis], **summary, "error": err})
    write_csv(d / "sweep.csv", [axis] + keys + ["error"], rows)
    write_manifest(d, base, ["sweep.csv"])
    return rows, d


# --- argument parsing -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dnls", description=__doc__)
    ap.add_argument("--version", action="version", version=f"dnls {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI file with key = value lines")
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--p", type=float)
        sp.add_argument("--omega", type=float)
        sp.add_argument("--L", type=float)
        sp.add_argument("--N", type=int)
        sp.add_argument("--out", help="run directory (default $DNLS_OUT/<command>-<hash>)")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--seed", type=int)
        if name == "functionals":
            sp.add_argument("--in", dest="input", help="field CSV (x,re,im)")
        if name in ("special", "evolve", "classify"):
            sp.add_argument("--A", type=float)
            sp.add_argument("--k", type=int)
            sp.add_argument("--t0", type=float)
        if name in ("evolve", "classify"):
            sp.add_argument("--init", help="qstate | seed | FILE | seed:A,k,t0 | threshold:dirfile,eps,sign")
            sp.add_argument("--t1", type=float)
            sp.add_argument("--dt", type=float)
            sp.add_argument("--record-every", dest="record_every", type=float)
            sp.add_argument("--R", type=float)
            sp.add_argument("--horizon", type=float)
        if name == "classify":
            sp.add_argument("--direction", choices=("forward", "backward"))
        if name == "envelope":
            sp.add_argument("--omega-min", dest="omega_min", type=float)
            sp.add_argument("--omega-max", dest="omega_max", type=float)
            sp.add_argument("--n-omega", dest="n_omega", type=int)
            sp.add_argument("--no-svg", dest="svg", action="store_const", const=False)
        if name == "sweep":
            sp.add_argument("--command", choices=SUBCOMMANDS[:-1])
            sp.add_argument("--axis", choices=SWEEPABLE)
            sp.add_argument("--values", help="comma-separated axis values")
            # pass-through options of the swept command
            for opt, typ in (("A", float), ("k", int), ("t0", float), ("dt", float),
                             ("horizon", float), ("init", str), ("R", float)):
                sp.add_argument(f"--{opt}", type=typ)
            sp.add_argument("--record-every", dest="record_every", type=float)
            sp.add_argument("--direction", choices=("forward", "backward"))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("subcommand", "config")}
    try:
        cfg = parse_config(args.subcommand, args.config, flags)
        if cfg.command == "sweep":
            values = [v.strip() for v in cfg["values"].split(",") if v.strip()]
            rows, d = sweep(cfg, cfg["axis"], values)
            print(d / "sweep.csv")
            return 0
        summary, d = execute(cfg)
    except (ConfigError, DomainError) as exc:
        print(f"dnls: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DnlsError as exc:
        print(f"dnls: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(d)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line front end: ``nvodmr {lines,map,fit,dipolar,acoustic}``.

Every run writes its outputs plus ``manifest.json`` (config hash, resolved
config, seed, versions, kernel backend and output checksums) into ``--out``.
Outputs carry no timestamps, so the same config and seed reproduce them
byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import constants as const
from .config import ConfigError, RunConfig, load_config, parse_config, preset_text, to_model_value
from .dipolar import EnsembleDensity, dipolar_report, lattice_sum_mc
from .fit import (
    AcousticModel,
    ArcModel,
    FitProblem,
    GslacModel,
    NvGeometryModel,
    PeakSet,
    extract_peaks,
    fit_parameters,
    fit_untagged,
)
from .geometry import FieldConfiguration, compensate_misalignment
from .kernels import BACKEND
from .lines import (
    LineFamily,
    SweepGrid,
    acoustic_comb,
    arc_family,
    families_by_key,
    flip_flip_line,
    flip_flop_lines,
    fractional_lines,
    gslac_line,
    nv_transitions,
    p1_transitions,
    sound_speed,
)
from .spectrum import (
    OdmrMap,
    class_setting,
    export_map_csv,
    export_map_pgm,
    export_map_sidecar,
    read_map_csv,
    synthesize_map,
)
from .spin import NvParameters, P1Parameters

LINE_COLUMNS = ["field_T", "freq_Hz", "class", "orientation", "i", "j", "weight"]


# --- building blocks ----------------------------------------------------------


def nv_params(cfg: RunConfig) -> NvParameters:
    return NvParameters(
        const.TWO_PI * cfg["nv.d"], const.TWO_PI * cfg["nv.e"], const.TWO_PI * cfg["nv.gamma_e"]
    )


def p1_params(cfg: RunConfig) -> P1Parameters:
    return P1Parameters(
        gamma_e=const.TWO_PI * cfg["nv.gamma_e"],
        gamma_n=const.TWO_PI * cfg["p1.gamma_n"],
        quadrupole_q=const.TWO_PI * cfg["p1.q"],
        hyperfine_par=const.TWO_PI * cfg["p1.a_par"],
        hyperfine_perp=const.TWO_PI * cfg["p1.a_perp"],
    )


def sweep_grid(cfg: RunConfig) -> SweepGrid:
    template = FieldConfiguration(
        b_coil1=cfg["coil.side1"], b_coil2=cfg["coil.side2"],
        theta_mis=cfg["geometry.theta"], phi_mis=cfg["geometry.phi"],
    )
    return SweepGrid(
        cfg["sweep.start"], cfg["sweep.stop"], cfg["sweep.points"], template,
        cfg["coil.compensation"], cfg["coil.compensate_at"], cfg["coil.main_scale"],
    )


def build_families(cfg: RunConfig) -> list[LineFamily]:
    """Every line family enabled in the config, with per-class weights applied."""
    grid = sweep_grid(cfg)
    nv = nv_params(cfg)
    fams: list[LineFamily] = []
    if cfg["lines.nv"]:
        base = nv_transitions(grid, cfg["lines.orientations"], nv, cfg["lines.nv_pairs"])
        fams += base
        for l in cfg["lines.nv_fractions"]:
            fams += [fractional_lines(f, l) for f in base]
    gslac = None
    if cfg["lines.gslac"]:
        gslac = gslac_line(grid.fields, cfg["lines.psi"], nv)
        fams.append(gslac)
        fams += [fractional_lines(gslac, l) for l in cfg["lines.gslac_fractions"]]
    if cfg["lines.flip_flip"]:
        if gslac is not None:
            fams.append(flip_flip_line(gslac))
        else:
            fams += [flip_flip_line(f) for f in list(fams)
                     if f.kind == "nv_single" and f.level_pair == (-1, 0)]
    if cfg["lines.p1"]:
        for o in cfg["lines.p1_orientations"]:
            fams += p1_transitions(grid, o, p1_params(cfg), cfg["lines.p1_order"])
    if cfg["lines.flip_flop"]:
        known = families_by_key(fams)
        for a, b in cfg["lines.flip_flop"]:
            missing = [k for k in (a, b) if k not in known]
            if missing:
                raise ConfigError(f"lines.flip_flop: no family {missing[0]!r}; available: {sorted(known)}")
            fams.append(flip_flop_lines(known[a], known[b]))
    if cfg["acoustic.enabled"]:
        fams += acoustic_comb(cfg["acoustic.f_a"], cfg["acoustic.n_max"], grid.fields)
    if cfg["arc.enabled"]:
        fams += [arc_family(cfg["arc.f_arc"], cfg["arc.b_arc"], n, cfg["arc.b_center"], grid)
                 for n in cfg["arc.n"]]
    families_by_key(fams)  # reject duplicates
    return [f.with_weight(class_setting(cfg.weights, f, f.weight)) for f in fams]


def write_lines_csv(families, path: Path) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LINE_COLUMNS)
        for fam in families:
            i, j = (fam.level_pair if fam.level_pair else ("", ""))
            for b, f in zip(fam.fields, fam.freqs):
                w.writerow([repr(float(b)), repr(float(f)), fam.class_tag, fam.orientation or "",
                            i, j, repr(float(fam.weight))])
    return path


def family_manifest(families) -> list[dict]:
    return [
        {
            "key": f.key,
            "class": f.class_tag,
            "orientation": f.orientation,
            "level_pair": list(f.level_pair) if f.level_pair else None,
            "weight": f.weight,
            "n_samples": int(f.fields.size),
            "n_flagged": int(f.flags.sum()) if f.flags is not None else 0,
        }
        for f in families
    ]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_json(obj, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path


def write_manifest(out: Path, command: str, cfg: RunConfig, seed: int, files, extra=None) -> Path:
    manifest = {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.canonical(),
        "config_source": cfg.source,
        "seed": seed,
        "versions": {
            "nvodmr": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "kernel_backend": BACKEND,
        "files": {p.name: _sha256(p) for p in files},
    }
    manifest.update(extra or {})
    return write_json(manifest, out / "manifest.json")


# --- subcommands --------------------------------------------------------------


def cmd_lines(cfg: RunConfig, out: Path, seed: int) -> list[Path]:
    fams = build_families(cfg)
    files = [write_lines_csv(fams, out / "lines.csv")]
    write_manifest(out, "lines", cfg, seed, files, {"families": family_manifest(fams)})
    return files


def synthesize_from_config(cfg: RunConfig, seed: int) -> tuple[OdmrMap, list[LineFamily]]:
    fams = build_families(cfg)
    fields = sweep_grid(cfg).fields
    freqs = np.linspace(cfg["map.freq_start"], cfg["map.freq_stop"], cfg["map.freq_points"])
    widths = dict(cfg.widths)
    if widths:
        # classes without an explicit width use map.linewidth
        odmr = synthesize_map(
            fams, fields, freqs, _with_default(widths, fams, cfg["map.linewidth"]), clip=cfg["map.clip"]
        )
    else:
        odmr = synthesize_map(fams, fields, freqs, cfg["map.linewidth"], clip=cfg["map.clip"])
    if cfg["map.noise"] > 0:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        noisy = np.clip(odmr.intensity + rng.normal(0.0, cfg["map.noise"], odmr.intensity.shape), 0.0, None)
        peak = noisy.max()
        odmr = OdmrMap(fields, freqs, noisy / peak if peak > 0 else noisy)
    return odmr, fams


def _with_default(widths: dict, fams, default: float) -> dict:
    table = dict(widths)
    for f in fams:
        if class_setting(widths, f, None) is None:
            table[f.key] = default
    return table


def cmd_map(cfg: RunConfig, out: Path, seed: int) -> list[Path]:
    odmr, fams = synthesize_from_config(cfg, seed)
    files = [
        export_map_csv(odmr, out / "map.csv"),
        export_map_pgm(odmr, out / "map.pgm"),
        write_lines_csv(fams, out / "lines.csv"),
    ]
    extra = {"families": family_manifest(fams)}
    sidecar = {
        "families": extra["families"], "seed": seed, "config_sha256": cfg.digest(),
        "linewidth_Hz": cfg["map.linewidth"], "width": dict(sorted(cfg.widths.items())),
    }
    files.append(export_map_sidecar(odmr, out / "map.json", sidecar))
    write_manifest(out, "map", cfg, seed, files, extra)
    return files


def fit_model(cfg: RunConfig):
    """Model instance, its starting values and bounds from the config."""
    name = cfg["fit.model"]
    if name == "nv_geometry":
        side1, side2 = cfg["coil.side1"], cfg["coil.side2"]
        compensation = cfg["coil.compensation"]
        if compensation == "fixed":
            # the coil currents of the measurement are fixed numbers; they were
            # set for the configured geometry, not for each trial geometry
            d1, d2 = compensate_misalignment(
                cfg["coil.compensate_at"] * cfg["coil.main_scale"],
                FieldConfiguration(theta_mis=cfg["geometry.theta"], phi_mis=cfg["geometry.phi"]),
            )
            side1, side2, compensation = side1 + d1, side2 + d2, "none"
        model = NvGeometryModel(
            cfg["lines.orientations"], cfg["lines.nv_pairs"], compensation, cfg["coil.compensate_at"],
            const.TWO_PI * cfg["nv.gamma_e"],
            theta_deg=math.degrees(cfg["geometry.theta"]), phi_deg=math.degrees(cfg["geometry.phi"]),
            d_hz=cfg["nv.d"], e_hz=cfg["nv.e"], coil1_t=side1, coil2_t=side2,
            main_scale=cfg["coil.main_scale"],
        )
    elif name == "gslac":
        model = GslacModel(
            cfg["lines.gslac_fractions"], cfg["lines.flip_flip"], const.TWO_PI * cfg["nv.gamma_e"],
            psi_deg=math.degrees(cfg["lines.psi"]), d_hz=cfg["nv.d"],
        )
    elif name == "acoustic":
        model = AcousticModel(cfg["acoustic.n_max"], f_a_hz=cfg["acoustic.f_a"])
    else:
        model = ArcModel(cfg["arc.n"], f_arc_hz=cfg["arc.f_arc"], b_arc_t=cfg["arc.b_arc"],
                         b_center_t=cfg["arc.b_center"])
    free, initial, bounds = [], {}, {}
    for key in cfg["fit.free"]:
        param = to_model_value(key, 0.0)[0]
        if param not in model.names:
            raise ConfigError(f"fit.free: {key!r} is not a parameter of the {name} model")
        free.append(param)
    for key, value in cfg.fit_init.items():
        param, v = to_model_value(key, value)
        if param not in model.names:
            raise ConfigError(f"fit.init.{key}: not a parameter of the {name} model")
        initial[param] = v
    for key in set(cfg.fit_lower) | set(cfg.fit_upper):
        param = to_model_value(key, 0.0)[0]
        lo, hi = model.bounds[param]
        if key in cfg.fit_lower:
            lo = to_model_value(key, cfg.fit_lower[key])[1]
        if key in cfg.fit_upper:
            hi = to_model_value(key, cfg.fit_upper[key])[1]
        bounds[param] = (lo, hi)
    return model, free, initial, bounds


def cmd_fit(cfg: RunConfig, out: Path, seed: int, map_path=None, peaks_path=None) -> list[Path]:
    model, free, initial, bounds = fit_model(cfg)
    if peaks_path is not None:
        peaks = PeakSet.read_csv(peaks_path)
        source = {"peaks": str(peaks_path), "peaks_sha256": _sha256(Path(peaks_path))}
    else:
        if map_path is not None:
            odmr = read_map_csv(map_path)
            source = {"map": str(map_path), "map_sha256": _sha256(Path(map_path))}
        else:
            odmr, _ = synthesize_from_config(cfg, seed)
            source = {"map": "synthesized from config"}
        peaks = extract_peaks(odmr, cfg["map.threshold"], cfg["map.min_separation"])
    kw = dict(seed=seed, n_restarts=cfg["fit.restarts"], n_bootstrap=cfg["fit.bootstrap"])
    if peaks.tags and all(t is not None for t in peaks.tags):
        result = fit_parameters(FitProblem(peaks, model, tuple(free), initial, bounds), **kw)
        used = peaks
    else:
        result, used = fit_untagged(
            peaks, model, free, initial, bounds, cfg["fit.tolerance"], cfg["fit.exclusion"],
            cfg["fit.rounds"], **kw,
        )
    report = result.report()
    report.update({"model": cfg["fit.model"], "n_peaks_extracted": len(peaks), "input": source})
    files = [write_json(report, out / "fit.json"), used.to_csv(out / "peaks.csv")]
    write_manifest(out, "fit", cfg, seed, files)
    return files


def cmd_dipolar(cfg: RunConfig, out: Path, seed: int) -> list[Path]:
    density = EnsembleDensity(cfg["dipolar.rho"] / 1e6, cfg["dipolar.spin"])
    report = dipolar_report(density, cfg["dipolar.f_a"], cfg["dipolar.p1"])
    if cfg["dipolar.mc"]:
        mc = lattice_sum_mc(density, cfg["dipolar.n_defects"], seed, cfg["dipolar.trials"])
        report["mc_sum_r6"] = mc.mean
        report["mc_stderr"] = mc.stderr
        report["mc_over_reff6"] = mc.mean / report["sum_r6"]
    files = [write_json(report, out / "dipolar.json")]
    write_manifest(out, "dipolar", cfg, seed, files)
    return files


def cmd_acoustic(cfg: RunConfig, out: Path, seed: int) -> list[Path]:
    f_a = cfg["acoustic.f_a"]
    comb = acoustic_comb(f_a, cfg["acoustic.n_max"], (cfg["sweep.start"], cfg["sweep.stop"]))
    report = {
        "f_a_Hz": f_a,
        "thickness_m": cfg["acoustic.thickness"],
        "sound_speed": sound_speed(f_a, cfg["acoustic.thickness"]),
        "comb_Hz": [float(f.freqs[0]) for f in comb],
    }
    files = [write_json(report, out / "acoustic.json"), write_lines_csv(comb, out / "lines.csv")]
    write_manifest(out, "acoustic", cfg, seed, files)
    return files


COMMANDS = {
    "lines": cmd_lines,
    "map": cmd_map,
    "fit": cmd_fit,
    "dipolar": cmd_dipolar,
    "acoustic": cmd_acoustic,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvodmr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value unit file (overrides the preset)")
        p.add_argument("--preset", help="bundled figure preset, e.g. fig2")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        if name == "fit":
            src = p.add_mutually_exclusive_group()
            src.add_argument("--map", type=Path, help="map CSV to extract peaks from")
            src.add_argument("--peaks", type=Path, help="peak CSV (field_T, freq_Hz, amplitude, tag)")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = parse_config("", "<defaults>")
    if args.preset:
        cfg = parse_config(preset_text(args.preset), f"preset:{args.preset}")
    if args.config:
        cfg = load_config(args.config, cfg if args.preset else None)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        seed = cfg["seed"] if args.seed is None else args.seed
        args.out.mkdir(parents=True, exist_ok=True)
        extra = {}
        if args.command == "fit":
            extra = {"map_path": args.map, "peaks_path": args.peaks}
        files = COMMANDS[args.command](cfg, args.out, seed, **extra)
    except ConfigError as exc:
        print(f"nvodmr: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"nvodmr: {exc}", file=sys.stderr)
        return 1
    for path in files:
        print(path)
    print(args.out / "manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Execute configured runs and scans, writing CSV/JSON bundles with manifests."""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import __version__
from .bandstructure import band_structure, system_from_bands
from .config import RunConfig
from .dynamics import (
    adiabatic_energies,
    adiabatic_frames,
    current,
    current_split,
    houston_energy,
    propagate_adiabatic,
    propagate_bloch,
)
from .errors import ConfigError, InvalidParameterError, NumericError
from .predict import (
    crossing_parameter,
    ionization_saddles,
    merge_threshold,
    multiband_cutoff_caps,
    lz_rate,
    multilevel_plateau_bounds,
    second_plateau_strength,
    sfa_current,
    two_level_cutoff,
)
from .spectral import extract_plateaus, gabor_transform, harmonic_spectrum

RECIPES = ("fig1", "fig3a", "fig3e", "fig7", "argon", "fig2-scan", "fig4-scan")


class StageError(NumericError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


def recipe_text(name):
    if name not in RECIPES:
        raise ConfigError(f"unknown recipe {name!r}; choose from {', '.join(RECIPES)}")
    return resources.files("mlhhg.recipes").joinpath(f"{name}.cfg").read_text()


def load_config(source):
    """Config from a recipe name, a config file, or a run manifest."""
    source = str(source)
    if source in RECIPES:
        return RunConfig.from_text(recipe_text(source), f"recipe:{source}")
    if source.endswith(".json"):
        with open(source) as fh:
            manifest = json.load(fh)
        if "config_text" not in manifest:
            raise ConfigError("JSON input is not a run manifest", None, source)
        return RunConfig.from_text(manifest["config_text"], source)
    return RunConfig.from_file(source)


def _fmt(x):
    # shortest string that round-trips, locale independent
    return repr(float(x))


def write_csv(path, header, columns):
    """RFC 4180 CSV, CRLF line ends, round-trippable floats."""
    columns = [np.asarray(c) for c in columns]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\r\n")
        for row in zip(*columns):
            fh.write(",".join(_fmt(v) for v in row) + "\r\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(obj))


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def predict_report(system, pulse, bands=None, valence=0, conduction=1, energy=None):
    """Closed-form predictions for one system and pulse, as a JSON-ready dict."""
    with warnings.catch_warnings():
        # two-level systems get their own entry below
        warnings.simplefilter("ignore")
        out = {"bounds": multilevel_plateau_bounds(system, pulse.A0, pulse.omega).to_dict()}
    w = system.energies
    mu = abs(float(system.couplings[0, 1]))
    if system.n_levels == 2 and mu > 0:
        low, cut = two_level_cutoff(w[1] - w[0], mu * pulse.A0)
        out["two_level"] = {
            "onset_order": low / pulse.omega, "cutoff_order": cut / pulse.omega,
            "crossing_parameter": crossing_parameter(w[1] - w[0], mu * pulse.A0),
            "lz_rate": lz_rate(w[1] - w[0], pulse.omega, mu * pulse.A0),
        }
    if system.n_levels >= 4:
        try:
            out["merge_threshold"] = merge_threshold(system, pulse.omega).to_dict()
            out["second_plateau_strength"] = {
                b: second_plateau_strength(system, pulse, barrier=b).to_dict()
                for b in ("linear", "exact")
            }
        except InvalidParameterError as exc:
            out["second_plateau_strength"] = {"skipped": str(exc)}
    if bands is not None and conduction < bands.n_bands:
        caps = multiband_cutoff_caps(bands, pulse.A0, valence)
        out["band_cutoffs"] = {
            "conduction": [c + 1 for c in caps.conduction],
            "instantaneous_order": caps.instantaneous / pulse.omega,
            "cap_order": caps.cap / pulse.omega,
        }
        out["saddles"] = ionization_saddles(bands, pulse, (0, 1), valence, conduction, energy).to_dict()
    return out


def plateau_summary(system, pulse, spectrum, expected=None, max_order=None):
    """Extracted plateaus next to the closed-form predictions."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = extract_plateaus(spectrum, expected, max_order=max_order)
        predicted = multilevel_plateau_bounds(system, pulse.A0, pulse.omega)
    out = {"extracted": report.to_dict(), "predicted": predicted.to_dict()}
    w = system.energies
    mu = abs(float(system.couplings[0, 1]))
    if system.n_levels == 2:
        low, cut = two_level_cutoff(w[1] - w[0], mu * pulse.A0)
        out["two_level"] = {"onset_order": low / pulse.omega, "cutoff_order": cut / pulse.omega}
        if mu * pulse.A0 > 0:
            out["two_level"]["lz_rate"] = lz_rate(w[1] - w[0], pulse.omega, mu * pulse.A0)
    if system.n_levels >= 4 and mu > 0 and system.couplings[2, 3] != 0 and pulse.A0 > 0:
        out["second_plateau_strength"] = second_plateau_strength(system, pulse).to_dict()
    if system.n_levels >= 4 and len(report.plateaus) >= 1:
        onset2 = predicted.onsets[1] / pulse.omega
        first = report.plateaus[0]
        # no drop between the plateaus: the first run reaches into the second window
        out["merged"] = bool(first.cutoff >= onset2)
        if len(report.plateaus) >= 2:
            out["median_gap_decades"] = first.median_log - report.plateaus[1].median_log
    return out


@dataclass
class RunResult:
    directory: str
    manifest: dict
    summary: dict


def _stage(name, timings, fn, *args, **kwargs):
    start = time.perf_counter()
    try:
        return fn(*args, **kwargs)
    except NumericError as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - start


def _run_stages(cfg, directory):
    timings = {}
    files = []
    summary = {}
    system = cfg.system()
    an = cfg.sections["analysis"]
    prop = cfg.sections["propagation"]
    resolved = {
        "system": {
            "label": system.label,
            "energies": system.energies,
            "couplings": system.couplings,
            "k0": system.k0,
        }
    }

    def out(name):
        files.append(name)
        return os.path.join(directory, name)

    need_bands = an["bands"] or "houston_levels" in an or an["sfa"]
    bands = None
    if need_bands:
        nb = max(an["n_bands"], an["sfa_conduction"] + 1)
        bands = _stage("bands", timings, band_structure, cfg.potential(), an["n_k"], nb,
                       cfg.sections["system"]["plane_waves"], an["band_couplings"])
        write_csv(out("bands.csv"), ["k"] + [f"e{n + 1}" for n in range(nb)],
                  [bands.k] + [bands.energies[:, n] for n in range(nb)])
        if an["band_couplings"]:
            write_json(out("band_couplings.json"), {
                "k": bands.k, "couplings": bands.couplings,
                "convention": "real eigenvectors, largest coefficient positive",
            })

    if "houston_levels" in an:
        A = np.linspace(0.0, cfg.potential().zone_edge, 201)
        houston = houston_energy(bands, 0.0, A, 3)
        cols, header, errors = [A], ["A"], {}
        for n in range(3):
            cols.append(houston[:, n])
            header.append(f"houston{n + 1}")
        for N in an["houston_levels"]:
            sysN = system_from_bands(cfg.potential(), N, 0.0, 0, cfg.sections["system"]["plane_waves"])
            E = adiabatic_energies(sysN, A)
            m = min(3, N)
            errors[str(N)] = np.max(np.abs(E[:, :m] - houston[:, :m]), axis=0)
            for n in range(m):
                cols.append(E[:, n])
                header.append(f"N{N}_level{n + 1}")
        write_csv(out("houston.csv"), header, cols)
        summary["houston_max_error"] = errors

    if not cfg.has_pulse():
        return files, summary, resolved, timings
    pulse = cfg.pulse()
    resolved["pulse"] = {"A0": pulse.A0, "omega": pulse.omega, "n_cycles": pulse.n_cycles,
                         "shape": pulse.shape, "E0": pulse.E0}
    predictions = _stage("predict", timings, predict_report, system, pulse, bands,
                         an["sfa_valence"], an["sfa_conduction"], an.get("saddle_energy"))
    write_json(out("predict.json"), predictions)
    if an["sfa"]:
        js = _stage("sfa", timings, sfa_current, bands, pulse, an["sfa_valence"], an["sfa_conduction"])
        write_csv(out("sfa_current.csv"), ["t", "j"], [js.t, js.j])
        sp = harmonic_spectrum(js, pulse, an["window"])
        keep = sp.order <= an.get("max_order", sp.order[-1])
        write_csv(out("sfa_spectrum.csv"), ["order", "intensity"], [sp.order[keep], sp.intensity[keep]])
        write_json(out("sfa_saddles.json"), predictions.get("saddles"))
    if prop["basis"] == "none":
        return files, summary, resolved, timings

    bases = ["bloch", "adiabatic"] if prop["basis"] == "both" else [prop["basis"]]
    trajectories = {}
    for basis in bases:
        fn = propagate_bloch if basis == "bloch" else propagate_adiabatic
        tr = _stage(f"propagate-{basis}", timings, fn, system, pulse, prop["steps_per_cycle"],
                    prop["samples_per_cycle"])
        trajectories[basis] = tr
    main = trajectories[bases[0]]
    resolved["steps_per_cycle"] = main.steps_per_cycle
    resolved["dt"] = main.dt
    summary["max_norm_error"] = max(float(np.max(np.abs(tr.norm - 1))) for tr in trajectories.values())

    j = current(main)
    cols, header = [j.t, j.j], ["t", "j"]
    if "adiabatic" in trajectories:
        split = current_split(trajectories["adiabatic"])
        cols += [split.j_intra, split.j_inter]
        header += ["j_intra", "j_inter"]
        if "bloch" in trajectories:
            jb = current(trajectories["bloch"]).j
            ja = current(trajectories["adiabatic"]).j
            summary["basis_difference"] = float(np.max(np.abs(jb - ja)) / np.max(np.abs(jb)))
    write_csv(out("current.csv"), header, cols)
    if prop["save_trajectory"]:
        C = main.amplitudes
        traj_header, traj_cols = ["t"], [main.t]
        for n in range(C.shape[1]):
            traj_header += [f"re_c{n + 1}", f"im_c{n + 1}"]
            traj_cols += [C[:, n].real, C[:, n].imag]
        write_csv(out("trajectory.csv"), traj_header + header[1:], traj_cols + cols[1:])

    spectrum = _stage("spectrum", timings, harmonic_spectrum, j, pulse, an["window"])
    keep = spectrum.order <= an.get("max_order", spectrum.order[-1])
    write_csv(out("spectrum.csv"), ["order", "intensity"],
              [spectrum.order[keep], spectrum.intensity[keep]])
    summary["plateaus"] = plateau_summary(system, pulse, spectrum, an.get("plateaus"),
                                          an.get("max_order"))
    write_json(out("plateaus.json"), summary["plateaus"])

    if an["wavelet"]:
        lo, hi, count = an.get("wavelet_energies", (0.5 * (system.energies[1] - system.energies[0]),
                                                    float(np.ptp(adiabatic_energies(system, pulse.A0))),
                                                    128))
        energies = np.linspace(lo, hi, int(count))
        idx = np.arange(0, j.t.size, an["wavelet_stride"])
        tf = _stage("wavelet", timings, gabor_transform, j.t, j.j, energies, idx)
        write_csv(out("wavelet.csv"), ["t"] + [_fmt(e) for e in energies],
                  [tf.t] + [tf.magnitude[r] for r in range(energies.size)])
        frames = adiabatic_frames(system, pulse, tf.t)
        diffs = frames.energies[:, 1:] - frames.energies[:, :1]
        write_csv(out("overlay.csv"), ["t"] + [f"E{n + 2}-E1" for n in range(diffs.shape[1])],
                  [tf.t] + [diffs[:, n] for n in range(diffs.shape[1])])

    return files, summary, resolved, timings


def run(cfg, out_root="runs"):
    """Run one configuration into ``out_root/<name>-<hash>``; returns RunResult."""
    if isinstance(cfg, (str, os.PathLike)):
        cfg = load_config(cfg)
    digest = cfg.content_hash()
    name = cfg.sections["output"].get("name", "run")
    directory = os.path.join(out_root, f"{name}-{digest[:12]}")
    os.makedirs(directory, exist_ok=True)
    files, summary, resolved, timings = _run_stages(cfg, directory)
    manifest = {
        "tool": "mlhhg",
        "version": __version__,
        "content_hash": digest,
        "config": cfg.canonical(),
        "config_text": cfg.to_text(),
        "resolved": resolved,
        "summary": summary,
        "files": {f: _sha256(os.path.join(directory, f)) for f in sorted(files)},
    }
    write_json(os.path.join(directory, "manifest.json"), manifest)
    write_json(os.path.join(directory, "timings.json"), timings)
    return RunResult(directory, _clean(manifest), summary)


def _scan_point(args):
    index, cfg, out_root = args
    try:
        result = run(cfg, out_root)
        return index, "ok", None, result.directory, result.summary
    except (NumericError, ValueError) as exc:
        return index, "failed", f"{type(exc).__name__}: {exc}", None, None


def scan(cfg, out_root="runs", threads=1):
    """Run every scan point; returns (rows, failed_fraction, directory)."""
    if isinstance(cfg, (str, os.PathLike)):
        cfg = load_config(cfg)
    spec = cfg.scan_spec()
    if spec is None:
        raise ConfigError("config has no [scan] section", None, cfg.path)
    name = cfg.sections["output"].get("name", "scan")
    directory = os.path.join(out_root, f"{name}-{cfg.content_hash()[:12]}")
    os.makedirs(directory, exist_ok=True)
    jobs = [(i, cfg.with_value(spec.parameter, v), os.path.join(directory, "points"))
            for i, v in enumerate(spec.values)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_scan_point, jobs))
    else:
        results = [_scan_point(job) for job in jobs]
    results.sort(key=lambda r: r[0])
    rows = []
    for (index, status, error, point_dir, summary), value in zip(results, spec.values):
        row = {"index": index, spec.parameter: value, "status": status, "error": error,
               "directory": os.path.relpath(point_dir, directory) if point_dir else None}
        if summary:
            pl = summary.get("plateaus", {})
            row["extracted"] = pl.get("extracted", {}).get("plateaus", [])
            row["predicted"] = pl.get("predicted", {}).get("plateaus", [])
            for key in ("merged", "median_gap_decades", "two_level", "second_plateau_strength"):
                if key in pl:
                    row[key] = pl[key]
        rows.append(row)
    failed = sum(r["status"] != "ok" for r in rows) / len(rows)
    write_json(os.path.join(directory, "scan.json"), {
        "parameter": spec.parameter, "values": list(spec.values), "failed_fraction": failed,
        "rows": rows, "config_text": cfg.to_text(), "version": __version__,
    })
    _scan_csv(os.path.join(directory, "scan.csv"), spec.parameter, rows)
    return rows, failed, directory


def _scan_csv(path, parameter, rows):
    header = [parameter, "ok", "cutoff1_order", "predicted_cutoff1_order", "cutoff2_order",
              "predicted_cutoff2_order", "median1_log10", "median2_log10", "merged"]
    cols = [[] for _ in header]
    for r in rows:
        ext = r.get("extracted", [])
        pred = r.get("predicted", [])

        def pick(seq, i, key):
            return seq[i][key] if len(seq) > i and seq[i].get(key) is not None else float("nan")

        vals = [r[parameter], 1.0 if r["status"] == "ok" else 0.0,
                pick(ext, 0, "cutoff_order"), pick(pred, 0, "cutoff_order"),
                pick(ext, 1, "cutoff_order"), pick(pred, 1, "cutoff_order"),
                pick(ext, 0, "median_log10_intensity"), pick(ext, 1, "median_log10_intensity"),
                float(r["merged"]) if "merged" in r else float("nan")]
        for c, v in zip(cols, vals):
            c.append(v)
    write_csv(path, header, cols)

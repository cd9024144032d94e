"""Command-line driver.

Every subcommand resolves to a run configuration and writes a bundle
(CSV/JSON files plus manifest.json) under ``--out``.  The stage-specific
subcommands accept either ``--config`` or system and pulse flags.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import random
import sys

import numpy as np

from . import __version__
from .errors import ConfigError, InvalidParameterError, NumericError, ValidationError
from .runner import RECIPES, StageError, dumps, load_config, run, scan

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


@contextlib.contextmanager
def no_rng():
    """Make the global numpy and stdlib samplers raise, and check afterwards
    that numpy's global random state was not advanced."""

    def forbidden(*args, **kwargs):
        raise RuntimeError("random number generation used under --seedless")

    names = ("seed", "rand", "randn", "random", "random_sample", "normal", "uniform", "choice",
             "integers", "randint", "shuffle", "permutation")
    targets = [(np.random, n) for n in names] + [
        (random, n) for n in ("random", "seed", "uniform", "gauss", "choice", "shuffle", "randint")
    ]
    saved = [(m, n, getattr(m, n)) for m, n in targets if hasattr(m, n)]
    before = np.random.get_state()[1].copy()
    for module, name, _ in saved:
        setattr(module, name, forbidden)
    try:
        yield
    finally:
        for module, name, value in saved:
            setattr(module, name, value)
    if not np.array_equal(before, np.random.get_state()[1]):
        raise RuntimeError("global random state changed under --seedless")


def _add_physics(p):
    g = p.add_argument_group("system and pulse (ignored with --config)")
    g.add_argument("--config", help="config file, recipe name or run manifest")
    g.add_argument("--system", default="builtin:table1",
                   help="builtin:table1|builtin:table1-5|builtin:argon|builtin:two-level|bands|<file>")
    g.add_argument("--levels", type=int)
    g.add_argument("--omega0", type=float, help="two-level splitting (au)")
    g.add_argument("--mu", type=float, help="two-level coupling (au)")
    carrier = g.add_mutually_exclusive_group()
    carrier.add_argument("--omega", type=float, help="carrier frequency (au)")
    carrier.add_argument("--wavelength-nm", type=float)
    amp = g.add_mutually_exclusive_group()
    amp.add_argument("--A0", type=float, help="peak vector potential (au)")
    amp.add_argument("--E0", type=float, help="peak field (au)")
    amp.add_argument("--rabi", type=float, help="peak Rabi frequency mu12 A0 (au)")
    g.add_argument("--intensity", type=float, help="peak intensity (W/cm^2), converted to E0")
    g.add_argument("--n-cycles", type=int)
    g.add_argument("--shape", choices=("cos4", "cw"))


def _base_sections(args):
    """Config sections from --config or from flags."""
    if args.config:
        cfg = load_config(args.config)
        return {name: dict(items) for name, items in cfg.canonical().items()}
    system = {"source": args.system}
    for key in ("levels", "omega0", "mu"):
        if getattr(args, key) is not None:
            system[key] = getattr(args, key)
    pulse = {}
    for key in ("omega", "wavelength_nm", "A0", "E0", "rabi", "n_cycles", "shape"):
        if getattr(args, key, None) is not None:
            pulse[key] = getattr(args, key)
    if args.intensity is not None:
        from .units import intensity_to_field

        if "E0" in pulse or "A0" in pulse or "rabi" in pulse:
            raise ConfigError("--intensity conflicts with another amplitude flag")
        pulse["E0"] = float(intensity_to_field(args.intensity))
    return {"system": system, "pulse": pulse}


def _format(value):
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, (list, tuple)):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _config(sections, path="<command line>"):
    from .config import RunConfig

    lines = []
    for name, items in sections.items():
        items = {k: v for k, v in items.items() if v is not None}
        if not items:
            continue
        lines.append(f"[{name}]")
        lines += [f"{k} = {_format(v)}" for k, v in items.items()]
    return RunConfig.from_text("\n".join(lines) + "\n", path)


def _with(sections, section, **values):
    out = {k: dict(v) for k, v in sections.items()}
    out.setdefault(section, {}).update(values)
    return out


def cmd_bands(args):
    sections = {
        "system": {"source": "bands", "V0": args.V0, "a0": args.a0, "plane_waves": args.plane_waves},
        "propagation": {"basis": "none"},
        "analysis": {"bands": True, "n_k": args.n_k, "n_bands": args.n_bands,
                     "band_couplings": args.couplings},
        "output": {"name": "bands"},
    }
    return _finish(run(_config(sections), args.out))


def _stage_command(args, name, propagation=None, analysis=None):
    sections = _base_sections(args)
    if propagation:
        sections = _with(sections, "propagation", **propagation)
    if analysis:
        sections = _with(sections, "analysis", **analysis)
    sections = _with(sections, "output", name=sections.get("output", {}).get("name", name))
    return _finish(run(_config(sections, args.config or "<command line>"), args.out))


def cmd_propagate(args):
    prop = {"save_trajectory": True}
    if args.basis:
        prop["basis"] = args.basis
    return _stage_command(args, "propagate", prop)


def cmd_spectrum(args):
    analysis = {}
    if args.window:
        analysis["window"] = args.window
    if args.plateaus is not None:
        analysis["plateaus"] = args.plateaus
    return _stage_command(args, "spectrum", None, analysis)


def cmd_wavelet(args):
    analysis = {"wavelet": True}
    if args.energies:
        analysis["wavelet_energies"] = args.energies
    return _stage_command(args, "wavelet", None, analysis)


def cmd_predict(args):
    analysis = {}
    if args.bands:
        analysis.update(bands=True, sfa_valence=args.valence, sfa_conduction=args.conduction)
    if args.energy is not None:
        analysis["saddle_energy"] = args.energy
    return _stage_command(args, "predict", {"basis": "none"}, analysis)


def cmd_sfa(args):
    analysis = {"sfa": True, "sfa_valence": args.valence, "sfa_conduction": args.conduction}
    return _stage_command(args, "sfa", {"basis": "none"}, analysis)


def cmd_run(args):
    return _finish(run(load_config(args.source), args.out))


def cmd_scan(args):
    rows, failed, directory = scan(load_config(args.source), args.out, args.threads)
    for r in rows:
        flag = f" merged={r['merged']}" if "merged" in r else ""
        print(f"{r['index']:3d} {r['status']:6s}{flag}" + (f"  {r['error']}" if r["error"] else ""))
    print(directory)
    limit = load_config(args.source).scan_spec().max_failed_fraction
    if failed > limit:
        print(f"error: {failed:.0%} of scan points failed (limit {limit:.0%})", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_verify(args):
    import os

    from .acceptance import verify

    result = verify()
    text = dumps(result)
    if args.out_file:
        os.makedirs(os.path.dirname(os.path.abspath(args.out_file)), exist_ok=True)
        with open(args.out_file, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for r in result["criteria"]:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['id']}: {r['name']}", file=sys.stderr)
    return EXIT_OK


def _finish(result):
    print(result.directory)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="mlhhg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mlhhg {__version__}")
    parser.add_argument("--out", default="runs", help="output root directory (default: runs)")
    parser.add_argument("--threads", type=int, default=1, help="scan worker processes")
    parser.add_argument("--seedless", action="store_true",
                        help="fail if any random number generator is used")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bands", help="band structure of the Mathieu-type solid")
    p.add_argument("--V0", type=float, default=0.37)
    p.add_argument("--a0", type=float, default=8.0)
    p.add_argument("--n-k", type=int, default=513)
    p.add_argument("--n-bands", type=int, default=5)
    p.add_argument("--plane-waves", type=int, default=64)
    p.add_argument("--couplings", action="store_true", help="also write momentum matrices")
    p.set_defaults(func=cmd_bands)

    p = sub.add_parser("propagate", help="time series of amplitudes and current")
    _add_physics(p)
    p.add_argument("--basis", choices=("bloch", "adiabatic", "both"))
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("spectrum", help="harmonic spectrum and plateaus")
    _add_physics(p)
    p.add_argument("--window", choices=("envelope", "none", "hann"))
    p.add_argument("--plateaus", type=int, help="expected plateau count")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("wavelet", help="Gabor time-frequency map with level overlays")
    _add_physics(p)
    p.add_argument("--energies", type=float, nargs=3, metavar=("LO", "HI", "COUNT"))
    p.set_defaults(func=cmd_wavelet)

    p = sub.add_parser("predict", help="closed-form plateau bounds, rates and saddles")
    _add_physics(p)
    p.add_argument("--bands", action="store_true", help="add band cutoffs and saddle tables")
    p.add_argument("--valence", type=int, default=0)
    p.add_argument("--conduction", type=int, default=1)
    p.add_argument("--energy", type=float, help="emission energy for the saddle table (au)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sfa", help="two-band strong-field-approximation current")
    _add_physics(p)
    p.add_argument("--valence", type=int, default=0)
    p.add_argument("--conduction", type=int, default=1)
    p.set_defaults(func=cmd_sfa)

    p = sub.add_parser("run", help="run a config file, recipe or manifest")
    p.add_argument("source", help=f"config path, manifest.json or one of: {', '.join(RECIPES)}")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("scan", help="run every point of a [scan] config")
    p.add_argument("source")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("verify", help="run the acceptance suite, print a JSON report")
    p.add_argument("--report", dest="out_file", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    guard = no_rng() if args.seedless else contextlib.nullcontext()
    try:
        with guard:
            return args.func(args)
    except StageError as exc:
        print(f"error: numerical failure in stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValidationError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

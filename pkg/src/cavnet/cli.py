"""Command-line front end: ``cavnet run | report | verify``.

Exit codes: 0 success, 1 acceptance failure, 2 configuration error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys

import numpy as np

from .config import ConfigError, ScenarioConfig, load_config
from .qdyn import NumericalError

log = logging.getLogger("cavnet")

EXIT_OK, EXIT_ACCEPT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


def artifact_csv(art, cfg: ScenarioConfig) -> str:
    """CSV text: '#' metadata lines, the embedded config, then header and rows."""
    buf = io.StringIO()
    for k, v in art.metadata.items():
        buf.write(f"# {k}: {_fmt(v)}\n")
    for line in cfg.dumps().splitlines():
        if line:
            buf.write(f"# cfg {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(art.columns)
    for r in art.rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def config_from_csv(text: str) -> ScenarioConfig:
    """Recover the scenario embedded in an emitted CSV."""
    from .config import loads

    lines = [ln[len("# cfg "):] for ln in text.splitlines() if ln.startswith("# cfg ")]
    return loads("\n".join(lines))


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace("numerics", "seed", args.seed)
    return cfg


def cmd_run(args) -> int:
    from .figures import make_figure

    cfg = _load(args)
    art = make_figure(args.figure, cfg, args.threads)
    text = artifact_csv(art, cfg)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
        log.info("wrote %s (%d rows)", args.out, len(art.rows))
    return EXIT_OK


def report_text(cfg: ScenarioConfig, threads=None) -> str:
    from .figures import operating_point
    from .spinphoton import emitted_probability

    op = operating_point(cfg, threads)
    p = cfg.module_params()
    c, s = op.cavity, op.sequence
    eta = emitted_probability(p, 8 / p.Gamma)
    lines = [
        f"config {cfg.hash}",
        "cavity",
        f"  g_max/2pi from geometry  {c['g_geometry_over_2pi_hz'] / 1e3:.1f} kHz (model uses {p.g / 6.283185307179586e3:.1f} kHz)",
        f"  cooperativity C          {c['cooperativity']:.3f}   eta0 = C/(C+1) = {c['eta0']:.4f}",
        f"  emission eta             {eta:.4f}",
        f"  FSR                      {c['fsr_hz'] / 1e9:.4f} GHz",
        f"  finesse                  {c['finesse_half']:.0f} (half linewidth), {c['finesse_energy']:.0f} (energy rate)",
        f"  sigma+/- splitting       {c['splitting_hz'] / 1e6:.1f} MHz",
        f"  thermal dg/g             {c['thermal_dg_over_g']:.2e}   k_c v_rms/2pi = {c['kc_vrms_over_2pi_hz'] / 1e3:.2f} kHz",
        "sequence",
        f"  sites in contour         {s['n_sites']}",
        f"  mean t_ent (layout)      {s['t_ent_mean_layout_s'] * 1e6:.3f} us",
        f"  Bell-pair rate           {s['rate_per_s']:.4g} /s   entangled fraction {s['entangled_fraction']:.3f}",
        f"  mean N_r                 {s['nbar_r']:.1f}",
        "budget",
        op.budget.as_text(),
    ]
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    cfg = _load(args)
    sys.stdout.write(report_text(cfg, args.threads))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .acceptance import CRITERIA, run_criterion

    cfg = _load(args)
    numbers = [int(x) for x in args.criteria.split(",")] if args.criteria else [n for n, _, _ in CRITERIA]
    failed = 0
    for n in numbers:
        r = run_criterion(n, cfg, args.threads)
        print(r.line())
        print(r.detail(), flush=True)
        failed += not r.passed
    print(f"{len(numbers) - failed}/{len(numbers)} criteria passed")
    return EXIT_OK if failed == 0 else EXIT_ACCEPT


def build_parser():
    from .figures import FIGURES

    ap = argparse.ArgumentParser(prog="cavnet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="scenario INI file (default: packaged reference point)")
        p.add_argument("--seed", type=int, help="override numerics.seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads for scans and Monte Carlo")

    r = sub.add_parser("run", help="produce the CSV for one figure")
    r.add_argument("figure", choices=sorted(FIGURES), metavar="FIGURE", help=", ".join(FIGURES))
    r.add_argument("--out", help="output path ('-' for stdout)")
    common(r)
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("report", help="cavity, sequence and budget summary")
    common(rp)
    rp.set_defaults(func=cmd_report)

    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--criteria", help="comma-separated subset, e.g. 1,2,9")
    common(v)
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

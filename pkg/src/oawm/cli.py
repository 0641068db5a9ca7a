"""
Command-line entry point.

Subcommands: simulate, calibrate, reconstruct, metrics, budget, sweep, repro,
validate. Every run writes its artifacts plus ``manifest.json`` (scenario
hash, seed, versions, file checksums) into ``--out``; identical scenario and
seed give byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .scenario import Scenario, ScenarioError, load_scenario

logger = logging.getLogger("oawm")

FIGURES = ("fig5a", "fig5b", "fig6", "fig8", "fig9", "fig10b", "fig11")
EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


# --------------------------------------------------------------------------
# artifacts


def _clean(v):
    """JSON-safe copy: numpy to Python, non-finite floats to strings."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


class Artifacts:
    """Collects output files and writes the manifest."""

    def __init__(self, out: Path, sc: Scenario, command: str):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.sc = sc
        self.command = command
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def json(self, name: str, obj: dict) -> Path:
        p = self.path(name)
        body = {"scenario_hash": self.sc.hash, **_clean(obj)}
        p.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return p

    def text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def sidecar(self, name: str, **extra) -> None:
        """Hash sidecar for a non-JSON artifact."""
        self.json(name + ".json", {"file": name, **extra})

    def manifest(self) -> Path:
        files = {}
        for name in sorted(set(self.files)):
            files[name] = hashlib.sha256((self.out / name).read_bytes()).hexdigest()
        import scipy
        import sklearn

        m = dict(tool="oawm", version=__version__, command=self.command,
                 scenario_hash=self.sc.hash, seed=self.sc.seed, scenario=self.sc.values,
                 versions=dict(python=platform.python_version(), numpy=np.__version__,
                               scipy=scipy.__version__, sklearn=sklearn.__version__),
                 files=files)
        p = self.out / "manifest.json"
        p.write_text(json.dumps(_clean(m), indent=2, sort_keys=True) + "\n")
        (self.out / "scenario.ini").write_text(self.sc.to_ini())
        return p


def _write_csv(art: Artifacts, name: str, header, rows) -> None:
    import csv

    p = art.path(name)
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    art.sidecar(name, columns=list(header))


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10g}"
    return str(x)


# --------------------------------------------------------------------------
# plot scripts (data and script are separate artifacts; nothing is rendered)


_PLOT_HEAD = '''"""Plot {csv}. Requires matplotlib; run: python {script}"""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
with open(here / "{csv}", newline="") as fh:
    rows = list(csv.DictReader(fh))
'''

_PLOT_BODY = {
    "budget": '''
groups = sorted({{r["{group}"] for r in rows}}, key=float)
fig, axes = plt.subplots(1, len(groups), figsize=(4 * len(groups), 3.5), squeeze=False)
for ax, g in zip(axes[0], groups):
    sel = [r for r in rows if r["{group}"] == g]
    x = [float(r["{x}"]) for r in sel]
    for col in ("shot", "rf_amp", "adc", "jitter", "ase", "ssbi", "calibration", "total"):
        ax.plot(x, [float(r[col]) for r in sel], "-" if col == "total" else "--", label=col)
    ax.set_xscale("{xscale}")
    ax.set_title("{group} = " + g)
    ax.set_xlabel("{x}")
    ax.set_ylabel("SNDR (dB)")
    ax.set_ylim(10, 70)
axes[0][0].legend(fontsize=7)
fig.tight_layout()
fig.savefig(here / "{stem}.png", dpi=150)
''',
    "xy": '''
cols = [c for c in rows[0] if c != "{x}"]
fig, ax = plt.subplots(figsize=(5, 3.5))
for col in cols:
    ax.plot([float(r["{x}"]) for r in rows], [float(r[col]) for r in rows], "o-", label=col)
ax.set_xscale("{xscale}")
ax.set_xlabel("{x}")
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(here / "{stem}.png", dpi=150)
''',
}


def _plot_script(art: Artifacts, csv_name: str, kind: str, **kw) -> None:
    if not art.sc["outputs"]["plot_script"]:
        return
    stem = csv_name.rsplit(".", 1)[0]
    script = f"plot_{stem}.py"
    body = _PLOT_HEAD.format(csv=csv_name, script=script) + \
        _PLOT_BODY[kind].format(stem=stem, **kw)
    art.text(script, body)


# --------------------------------------------------------------------------
# subcommands


def _records_out(art: Artifacts, rec, stem: str = "records") -> None:
    from .signalkit import SampledWaveform, write_waveform

    for part, X in (("I", rec.I), ("Q", rec.Q)):
        for nu in range(rec.N):
            name = f"{stem}_{part}{nu + 1}.bin"
            write_waveform(art.path(name), SampledWaveform(X[nu].astype(complex), rec.f_s))
    art.json(f"{stem}.json", dict(N=rec.N, sample_rate=rec.f_s, length=rec.I.shape[1],
                                  metadata=rec.metadata))


def cmd_simulate(sc: Scenario, args, art: Artifacts) -> int:
    from .pipelines import simulate
    from .signalkit import write_waveform

    rec, w, info = simulate(sc)
    if sc["outputs"]["waveform"]:
        write_waveform(art.path("input.bin"), w)
        art.sidecar("input.bin", kind="waveform")
        _records_out(art, rec)
    art.json("simulate.json", dict(N=rec.N, samples=rec.I.shape[1], sample_rate=rec.f_s,
                                   U_FS=rec.metadata.get("U_FS"),
                                   clipped_fraction=rec.metadata.get("clipped_fraction"),
                                   pilots=info.get("pilots", []), toggles=rec.metadata["toggles"]))
    return EXIT_OK


def cmd_calibrate(sc: Scenario, args, art: Artifacts) -> int:
    from .calib import save_calibration
    from .frontend import transfer_functions
    from .pipelines import build_system, multishot_calibration

    cal = multishot_calibration(sc)
    save_calibration(art.path("calibration.json"), cal, sc.hash)
    art.files.append("calibration.bin")
    s = build_system(sc, sc["calibration"]["f_FSR"])
    HI, HQ = transfer_functions(s.comb, s.fe, s.adc, None, cal.f_grid)
    e = np.mean(np.abs(cal.H_I - HI) ** 2 + np.abs(cal.H_Q - HQ) ** 2) / \
        np.mean(np.abs(HI) ** 2 + np.abs(HQ) ** 2)
    art.json("calibrate.json", dict(points=len(cal.f_grid), uncertainty_dB=cal.uncertainty_dB,
                                    relative_error_dB=10 * np.log10(e),
                                    gaps=cal.metadata.get("gaps", [])))
    return EXIT_OK


def _load_cal(args):
    if getattr(args, "calibration", None):
        from .calib import load_calibration

        return load_calibration(args.calibration)
    return None


def _spectrum_out(art: Artifacts, spec, stem: str = "stitched") -> None:
    from .metrics import write_spectrum_csv
    from .signalkit import write_spectrum

    if art.sc["outputs"]["csv"]:
        write_spectrum_csv(art.path(f"{stem}_spectrum.csv"), spec)
        art.sidecar(f"{stem}_spectrum.csv", columns=["freq_Hz", "power_dB"])
    if art.sc["outputs"]["waveform"]:
        write_spectrum(art.path(f"{stem}.bin"), spec)
        art.sidecar(f"{stem}.bin", kind="spectrum")


def cmd_reconstruct(sc: Scenario, args, art: Artifacts) -> int:
    from .pipelines import characterize

    run = characterize(sc, _load_cal(args))
    r = run.result
    _spectrum_out(art, r.stitched_spectrum)
    d = r.diagnostics
    art.json("reconstruction.json", dict(
        drift_phi_F=r.drift_estimate.phi_F, drift_tau_LO=r.drift_estimate.tau_LO,
        max_cond=d["max_cond"], n_flagged=d["n_flagged"], or_residuals=d.get("or_residuals"),
        clipped_fraction=d.get("clipped_fraction"), **_run_extras(run)))
    return EXIT_OK


def _run_extras(run) -> dict:
    out = {}
    if "relative_error_dB" in run.extras:
        out["relative_error_dB"] = run.extras["relative_error_dB"]
    if "evm" in run.extras:
        e = run.extras["evm"]
        out["evm"] = dict(evm=e.evm, evm_percent=e.evm_percent, CSNR_dB=e.csnr_dB)
    if run.report is not None:
        out["SINAD_dB"] = run.report.SINAD_dB
        out["ENOB_bits"] = run.report.ENOB_bits
    return out


def cmd_metrics(sc: Scenario, args, art: Artifacts) -> int:
    from .pipelines import characterize

    run = characterize(sc, _load_cal(args))
    if run.report is not None:
        art.text("report.json", run.report.to_json() + "\n")
        art.sidecar("report.json")
        art.text("report.txt", run.report.to_text() + "\n")
        art.sidecar("report.txt")
    art.json("metrics.json", _run_extras(run))
    _spectrum_out(art, run.result.stitched_spectrum)
    return EXIT_OK


def _budget_point(sc: Scenario, args) -> dict:
    from .budget import budget
    from .scenario import build_budget_params

    kw = {"B_opt": args.Bopt} if args.Bopt else {}
    p = build_budget_params(sc, **kw)
    b = budget(p)
    return dict(N=p.N, B_opt=p.B_opt, B=p.B, contributions=b.sources, total_SNDR_dB=b.total_SNDR_dB)


def _fig8(sc, args, art):
    from .budget import sweep_bandwidth
    from .scenario import build_budget_params

    b = sc["budget"]
    grid = np.geomspace(b["B_opt_min"], b["B_opt_max"], b["B_opt_points"])
    t = sweep_bandwidth(b["N_list"], grid, build_budget_params(sc))
    t.write_csv(art.path("fig8_budget_vs_Bopt.csv"))
    art.sidecar("fig8_budget_vs_Bopt.csv", notes=t.notes)
    _plot_script(art, "fig8_budget_vs_Bopt.csv", "budget", group="N", x="B_opt", xscale="log")
    return t


def _fig9(sc, args, art):
    from .budget import sweep_channels
    from .scenario import build_budget_params

    b = sc["budget"]
    blist = [args.Bopt] if args.Bopt else b["B_opt_list"]
    t = sweep_channels(blist, list(range(1, b["N_max"] + 1)), build_budget_params(sc))
    t.write_csv(art.path("fig9_budget_vs_N.csv"))
    art.sidecar("fig9_budget_vs_N.csv", notes=t.notes)
    _plot_script(art, "fig9_budget_vs_N.csv", "budget", group="B_opt", x="N", xscale="log")
    return t


def _fig6(sc, args, art):
    from .budget import adc_sinad_jitter, adc_sinad_thermal

    a = sc["adc"]
    B = np.geomspace(1e9, 200e9, 41)
    rows = [(x, adc_sinad_thermal(x, a["C1"]), adc_sinad_jitter(x, a["tau_j_ADC"])) for x in B]
    _write_csv(art, "fig6_adc_sinad.csv", ("B", "SINAD_thermal_dB", "SINAD_jitter_dB"), rows)
    _plot_script(art, "fig6_adc_sinad.csv", "xy", x="B", xscale="log")


def _fig10b(sc, args, art):
    from .budget import sndr_ase_path_lin, to_db

    b = sc["budget"]
    osnr = (30.0, 35.0, 40.0, 45.0, 50.0)
    grid = np.geomspace(b["B_opt_min"], b["B_opt_max"], b["B_opt_points"])
    rows = [(Bo, *[to_db(sndr_ase_path_lin(o, Bo, b["B_ref"])) for o in osnr]) for Bo in grid]
    _write_csv(art, "fig10b_ase.csv", ("B_opt", *[f"OSNR_{o:g}dB" for o in osnr]), rows)
    _plot_script(art, "fig10b_ase.csv", "xy", x="B_opt", xscale="log")


def _fig11(sc, args, art):
    from .budget import mc_calibration_crosstalk

    b = sc["budget"]
    rows = mc_calibration_crosstalk(b["mc_N"], b["mc_perturbation_dB"], b["mc_trials"], sc.seed,
                                    B=b["mc_B"], f_FSR=b["mc_f_FSR"], duration=b["mc_duration"])
    cols = ("N", "SNDR_freq_dB", "SNDR_drift_dB", "image_dB", "slice_dB", "trials", "failures")
    _write_csv(art, "fig11_calibration_crosstalk.csv", cols,
               [tuple(getattr(r, c) for c in cols) for r in rows])
    _plot_script(art, "fig11_calibration_crosstalk.csv", "xy", x="N", xscale="log")
    return rows


def _fig5a(sc, args, art):
    from .pipelines import characterize, cw_scenario

    over = list(args.set or [])
    run = characterize(cw_scenario(["signal.cw_freq=65.6e9"] + over))
    art.sc = run.scenario
    art.text("fig5a_report.json", run.report.to_json() + "\n")
    art.sidecar("fig5a_report.json")
    art.text("fig5a_report.txt", run.report.to_text() + "\n")
    art.sidecar("fig5a_report.txt")
    from .metrics import write_spectrum_csv

    write_spectrum_csv(art.path("fig5a_spectrum.csv"), run.result.stitched_spectrum,
                       ref_power=float(np.abs(run.result.stitched_spectrum.bins).max() ** 2
                                       * run.result.stitched_spectrum.df))
    art.sidecar("fig5a_spectrum.csv", columns=["freq_Hz", "power_dB"])
    _plot_script(art, "fig5a_spectrum.csv", "xy", x="freq_Hz", xscale="linear")


def _fig5b(sc, args, art):
    from .metrics import CATEGORIES
    from .pipelines import cw_scenario, cw_sweep

    res = cw_sweep(overrides=list(args.set or []))
    art.sc = cw_scenario(list(args.set or []))
    rows = [(f, r.SINAD_dB, *[r.categories[c] for c in CATEGORIES]) for f, r, _ in res]
    _write_csv(art, "fig5b_sinad_vs_frequency.csv", ("f_tone", "SINAD_dB", *CATEGORIES), rows)
    _plot_script(art, "fig5b_sinad_vs_frequency.csv", "xy", x="f_tone", xscale="linear")
    art.json("fig5b_summary.json", dict(mean_SINAD_dB=float(np.mean([r[1] for r in rows])),
                                        min_SINAD_dB=float(np.min([r[1] for r in rows])),
                                        max_SINAD_dB=float(np.max([r[1] for r in rows]))))


_FIG_FN = dict(fig5a=_fig5a, fig5b=_fig5b, fig6=_fig6, fig8=_fig8, fig9=_fig9, fig10b=_fig10b,
               fig11=_fig11)


def cmd_budget(sc: Scenario, args, art: Artifacts) -> int:
    if args.figure:
        if args.figure not in ("fig8", "fig9", "fig11"):
            raise ScenarioError(f"budget supports --figure fig8|fig9|fig11, not {args.figure}")
        _FIG_FN[args.figure](sc, args, art)
    art.json("budget.json", _budget_point(sc, args))
    return EXIT_OK


def cmd_sweep(sc: Scenario, args, art: Artifacts) -> int:
    t8 = _fig8(sc, args, art)
    t9 = _fig9(sc, args, art)
    art.json("sweep.json", dict(notes=t8.notes + t9.notes, rows=len(t8.rows) + len(t9.rows)))
    return EXIT_OK


def cmd_repro(sc: Scenario, args, art: Artifacts) -> int:
    if not args.figure:
        raise ScenarioError(f"repro needs --figure ({'|'.join(FIGURES)})")
    _FIG_FN[args.figure](sc, args, art)
    return EXIT_OK


def validate(sc: Scenario) -> tuple[list, list]:
    """Physics sanity checks; returns (errors, warnings)."""
    errors, warns = [], []
    c, a, s, r = sc["comb"], sc["adc"], sc["signal"], sc["reconstruction"]
    N, fsr, B = c["N"], c["f_FSR"], a["B"]
    if N > 1 and B < fsr / 2:
        errors.append(f"ADC bandwidth B={B:g} Hz is below f_FSR/2={fsr / 2:g} Hz")
    if B > a["f_s"] / 2:
        errors.append(f"ADC bandwidth B={B:g} Hz exceeds f_s/2={a['f_s'] / 2:g} Hz")
    cover = ((N - 1) / 2 * fsr + B)
    if s["kind"] == "random":
        bw = s["bandwidth"] or N * fsr
        lo, hi = s["center"] - bw / 2, s["center"] + bw / 2
    elif s["kind"] == "cw":
        lo = hi = s["cw_freq"]
    else:
        bw = s["qam_symbol_rate"] * (1 + s["rrc_rolloff"])
        lo, hi = s["center"] - bw / 2, s["center"] + bw / 2
    if lo < -cover or hi > cover:
        errors.append(f"signal band [{lo:g}, {hi:g}] Hz exceeds the comb coverage +-{cover:g} Hz")
    if s["sample_rate"] <= 2 * cover:
        errors.append("signal.sample_rate does not cover the acquisition band")
    ratio = s["duration"] * a["f_s"]
    if abs(ratio - round(ratio)) > 1e-6 or abs(s["duration"] * s["sample_rate"]
                                               - round(s["duration"] * s["sample_rate"])) > 1e-6:
        errors.append("signal.duration must hold an integer number of ADC and simulation samples")
    if N > 1 and r["drift"] == "estimate":
        if 2 * B - fsr <= 0:
            warns.append("overlap regions are empty; drift estimation has no redundancy")
        if not s["pilots"] and s["kind"] != "random":
            warns.append("drift estimation on without pilot tones; a narrowband signal may leave "
                         "the overlap regions without energy")
    if len(sc["drift"]["phi_F"]) not in (0, N):
        errors.append(f"drift.phi_F needs {N} entries")
    b = sc["budget"]
    if b["B_opt"] / (2 * b["N"]) > b["B_max"]:
        errors.append("budget point violates the ADC bandwidth cap B_opt/(2N) <= B_max")
    return errors, warns


def cmd_validate(sc: Scenario, args, art: Artifacts | None) -> int:
    errors, warns = validate(sc)
    for w in warns:
        print(f"warning: {w}")
    for e in errors:
        print(f"error: {e}")
    if not errors:
        print(f"ok: scenario {sc.source} (hash {sc.hash[:12]})")
    return EXIT_ERROR if errors else EXIT_OK


COMMANDS = dict(simulate=cmd_simulate, calibrate=cmd_calibrate, reconstruct=cmd_reconstruct,
                metrics=cmd_metrics, budget=cmd_budget, sweep=cmd_sweep, repro=cmd_repro,
                validate=cmd_validate)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oawm", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("--version", action="version", version=f"oawm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--scenario", type=Path, help="scenario file (INI or JSON)")
        sp.add_argument("--seed", type=int, help="master seed (overrides scenario.seed)")
        sp.add_argument("--out", type=Path, default=Path("oawm_out"), help="output directory")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override a scenario value (repeatable)")
        sp.add_argument("--figure", choices=FIGURES, help="figure preset")
        sp.add_argument("--threads", type=int, default=None, help="BLAS/FFT thread limit")
        sp.add_argument("--Bopt", type=float, default=None, help="optical acquisition bandwidth (Hz)")
        sp.add_argument("--calibration", type=Path, help="calibration file from `calibrate`")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set or [])
        if args.seed is not None:
            overrides.append(f"scenario.seed={args.seed}")
        sc = load_scenario(args.scenario, overrides)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "validate":
        return cmd_validate(sc, args, None)
    from threadpoolctl import threadpool_limits

    art = Artifacts(args.out, sc, args.command + (f" --figure {args.figure}" if args.figure else ""))
    try:
        with threadpool_limits(limits=args.threads):
            code = COMMANDS[args.command](sc, args, art)
        art.manifest()
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"wrote {len(set(art.files))} artifacts to {art.out}")
    return code


if __name__ == "__main__":
    sys.exit(main())

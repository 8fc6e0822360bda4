"""Command-line entry point.

Exit codes: 0 success or PASS, 1 evaluation FAIL, 2 input error,
3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

from . import __version__
from .errors import InputError, StatcomEvalError
from .evalpipe import (
    PASS,
    EvalConfig,
    EvaluationReport,
    evaluate,
    load_ems_settings,
    reference_model,
    render_report,
)
from .gaintune import (
    TABLE1,
    calibrate,
    calibration_from_json,
    calibration_to_json,
    fit_gain_reactance,
    gain_from_dqdv,
    probe_dqdv,
)
from .records import read_comtrade, save_comtrade
from .simcore import GridEquivalent, StatcomParams
from .synthgen import EventSpec, gen_event, synth_measured_q

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("statcom_eval")

_MODEL_KEYS = {f.name for f in fields(StatcomParams)} - {"qcm_enabled"}


def _read_json(path: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: expected a JSON object")
    return doc


def load_model_settings(path: str | None) -> tuple[StatcomParams, float, float]:
    """Controller constants plus (v_base_kv, f0) from an optional JSON file."""
    if path is None:
        return StatcomParams(), 230.0, 60.0
    doc = _read_json(path)
    kwargs = {k: float(v) for k, v in doc.items() if k in _MODEL_KEYS}
    try:
        params = StatcomParams(**kwargs)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    return params, float(doc.get("v_base_kv", 230.0)), float(doc.get("f0", 60.0))


def _load_calibration(path: str | None):
    if path is None:
        return TABLE1, fit_gain_reactance(TABLE1)
    return calibration_from_json(Path(path).read_text())


def _parse_l_values(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise InputError(f"--l-values must be comma-separated numbers, got {text!r}") from None


def _eval_config(args) -> EvalConfig:
    kw = {}
    if args.nrmse_max is not None:
        kw["nrmse_max"] = args.nrmse_max
    if args.maxq_rel_max is not None:
        kw["maxq_rel_max"] = args.maxq_rel_max
    if args.prelude_s is not None:
        kw["prelude_s"] = args.prelude_s
    if args.orientation is not None:
        kw["orientation"] = args.orientation
    return EvalConfig(**kw)


# ---------------------------------------------------------------------------
# commands


def cmd_calibrate(args) -> int:
    l_values = _parse_l_values(args.l_values)
    params, v_base, f0 = load_model_settings(args.settings)
    seed = _load_calibration(args.seed_table)[0] if args.seed_table else TABLE1
    table = calibrate(l_values, params, seed_table=seed, v_base_kv=v_base, f0=f0)
    fit = fit_gain_reactance(table, degree=args.degree)
    Path(args.out).write_text(calibration_to_json(table, fit))
    for pt in table.points:
        print(f"L={pt.l_henry:.5f} H  dQ/dV={pt.dqdv:.4f} GVAR/pu  gain={pt.gain:.3f}")
    print(f"fit residual RMS {fit.residual_rms:.3g}; valid gains "
          f"[{fit.valid_gain_range[0]:.3f}, {fit.valid_gain_range[1]:.3f}]")
    return EXIT_OK


def _evaluate_one(cfg_path: str, dat_path: str | None, ems_path: str, fit_path: str | None,
                  cfg: EvalConfig) -> EvaluationReport:
    rec = read_comtrade(cfg_path, dat_path)
    ems = load_ems_settings(Path(ems_path).read_text())
    table, fit = _load_calibration(fit_path)
    return evaluate(rec, ems, fit, table, cfg)


def _write_outputs(rep: EvaluationReport, report: str | None, csv: str | None, plot: str | None):
    if report:
        Path(report).write_text(render_report(rep, "json"))
    if csv:
        Path(csv).write_text(render_report(rep, "csv"))
    if plot:
        Path(plot).write_text(render_report(rep, "svg"))


def cmd_evaluate(args) -> int:
    rep = _evaluate_one(args.recording, args.dat, args.ems, args.fit, _eval_config(args))
    _write_outputs(rep, args.report, args.csv, args.plot)
    gains = ", ".join(f"{a:.2f} -> {b:.2f} at t={t:.1f}s" for t, a, b in rep.gain_trace) or "unchanged"
    print(f"{rep.station_id}: estimated L {rep.estimated_l:.5f} H; gain {gains}")
    print(f"max Q recorded {rep.max_q_meas:.2f} MVAR, simulated {rep.max_q_sim:.2f} MVAR "
          f"({rep.max_q_rel_diff:.2%}); nrmse {rep.nrmse:.2%}; r {rep.pearson_r:.4f}")
    print(rep.verdict)
    return EXIT_OK if rep.verdict == PASS else EXIT_FAIL


def _batch_job(job):
    cfg_path, ems, fit, eval_cfg, out_dir = job
    rep = _evaluate_one(cfg_path, None, ems, fit, eval_cfg)
    stem = Path(out_dir) / Path(cfg_path).stem
    _write_outputs(rep, f"{stem}.report.json", f"{stem}.csv", f"{stem}.svg")
    return cfg_path, rep.verdict, rep.nrmse


def cmd_batch_evaluate(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    eval_cfg = _eval_config(args)
    jobs = [(r, args.ems, args.fit, eval_cfg, str(out_dir)) for r in args.recordings]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_batch_job, jobs))
    else:
        results = [_batch_job(j) for j in jobs]
    for path, verdict, nrmse in results:
        print(f"{path}\t{verdict}\tnrmse={nrmse:.4f}")
    return EXIT_OK if all(v == PASS for _, v, _ in results) else EXIT_FAIL


def cmd_synth(args) -> int:
    spec = EventSpec.from_json(Path(args.spec).read_text())
    rec = gen_event(spec)
    if args.settings:
        ems = load_ems_settings(Path(args.settings).read_text())
        table, fit = _load_calibration(args.fit)
        params, state = reference_model(ems, fit, table, dt=1.0 / rec.sample_rate)
        if args.model_gain is not None:
            params = replace(params, gain=args.model_gain)
        n_cycle = round(rec.sample_rate / rec.fundamental_hz)
        state = replace(state, t=float(rec.times[n_cycle - 1]))
        rec = synth_measured_q(rec, params, v_base_kv=ems.v_base_kv, state=state)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    cfg_path, dat_path = save_comtrade(rec, args.out)
    print(f"wrote {cfg_path} and {dat_path} ({rec.n_samples} samples, {len(rec.channels)} channels)")
    return EXIT_OK


def cmd_probe(args) -> int:
    if not args.l_henry > 0:
        raise InputError("--l-henry must be positive")
    params, v_base, f0 = load_model_settings(args.settings)
    table = _load_calibration(args.table)[0] if args.table else TABLE1
    grid = GridEquivalent("thevenin", l_henry=args.l_henry, v_base_kv=v_base, f0=f0)
    dqdv = probe_dqdv(params, grid)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        gain = gain_from_dqdv(dqdv, table)
    print(f"dqdv {dqdv:.4f} GVAR/pu")
    print(f"gain {gain:.3f}")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="statcom-eval",
        description="Replay fault-recorder events through a STATCOM model and score the response.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="sweep external reactance and fit gain(L)")
    p.add_argument("--l-values", required=True, help="comma-separated reactances in H")
    p.add_argument("--settings", help="controller settings JSON")
    p.add_argument("--seed-table", help="calibration JSON whose table maps dQ/dV to gain")
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--out", required=True, help="output calibration JSON")
    p.set_defaults(func=cmd_calibrate)

    def add_eval_flags(p):
        p.add_argument("--ems", required=True, help="EMS settings JSON")
        p.add_argument("--fit", help="calibration JSON (default: built-in three-point table)")
        p.add_argument("--nrmse-max", type=float)
        p.add_argument("--maxq-rel-max", type=float)
        p.add_argument("--prelude-s", type=float)
        p.add_argument("--orientation", choices=["out_of_device", "into_device"])

    p = sub.add_parser("evaluate", help="evaluate one recording")
    p.add_argument("--recording", required=True, help="cfg file")
    p.add_argument("--dat", help="dat file (default: next to the cfg)")
    add_eval_flags(p)
    p.add_argument("--report", help="write JSON report here")
    p.add_argument("--csv", help="write aligned Q series here")
    p.add_argument("--plot", help="write SVG overlay here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("batch-evaluate", help="evaluate many recordings")
    p.add_argument("recordings", nargs="+", help="cfg files (dat next to each)")
    add_eval_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_batch_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic recording")
    p.add_argument("--spec", required=True, help="event spec JSON")
    p.add_argument("--settings", help="EMS settings JSON; adds simulated current channels")
    p.add_argument("--fit", help="calibration JSON")
    p.add_argument("--model-gain", type=float, help="override the reference model gain")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("probe", help="measure dQ/dV for a Thevenin grid and pick a gain")
    p.add_argument("--l-henry", type=float, required=True)
    p.add_argument("--settings", help="controller settings JSON")
    p.add_argument("--table", help="calibration JSON")
    p.set_defaults(func=cmd_probe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StatcomEvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"error: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

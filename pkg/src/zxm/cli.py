"""Command-line experiment driver.

Every subcommand reads its parameters from built-in defaults, then an optional
JSON ``--config`` file (either a plain parameter object or a run manifest
written by a previous run), then command-line overrides. Results go to a CSV
file (``--out``, stdout when omitted) plus ``<out>.json`` run manifest;
``rll-info`` without ``--out`` prints only its text summary.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

import numpy as np

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


# name: (type, default, is_list, help)
SCHEMAS = {
    "se-sweep": {
        "sources": (str, ["iud", "rll1"], True, "sources: iud or rllD"),
        "m_tx": (int, [1, 2], True, "FTN factors"),
        "m": (int, 1, False, "oversampling factor"),
        "snr_db": (float, [0.0, 10.0, 20.0, 30.0], True, "SNR grid (dB, w.r.t. B90)"),
        "n": (int, 10**6, False, "symbols per point"),
        "b90": (str, "analytic", False, "analytic or periodogram"),
    },
    "ber": {
        "d": (int, 1, False, "minimum runlength"),
        "m_tx": (int, 1, False, "FTN factor"),
        "m": (int, 1, False, "oversampling factor"),
        "esn0_db": (float, [0.0, 5.0, 10.0], True, "Es/N0 grid (dB)"),
        "frames": (int, 20, False, "frames per point"),
        "n_data": (int, 1000, False, "data symbols per rail and frame"),
    },
    "bler": {
        "m_tx": (int, 2, False, "FTN factor"),
        "ms": (int, [1, 2, 3], True, "oversampling factors"),
        "ebn0_db": (float, [7.0, 8.0, 9.0], True, "Eb/N0 grid (dB)"),
        "frames": (int, 200, False, "frames per point"),
        "chunk": (int, 50, False, "frames per task"),
        "ldpc_seed": (int, 1, False, "code construction seed"),
        "interleaver_seed": (int, 7, False, "interleaver seed"),
    },
    "crlb": {
        "ms": (int, [1, 4], True, "oversampling factors"),
        "esn0_db": (float, [-20.0, -10.0, 0.0, 10.0, 20.0, 30.0], True, "Es/N0 grid (dB)"),
        "n_pilots": (int, 100, False, "pilot symbols"),
        "dither": (bool, True, False, "uniform phase dither"),
        "c1": (float, 1.0, False, "high-SNR bound constant (uncalibrated default)"),
        "c2": (float, 1.0, False, "high-SNR bound constant (uncalibrated default)"),
    },
    "ls-mse": {
        "ms": (int, [1, 4], True, "oversampling factors"),
        "esn0_db": (float, [-10.0, 0.0, 10.0, 20.0, 30.0], True, "Es/N0 grid (dB)"),
        "n_pilots": (int, 100, False, "pilot symbols"),
        "trials": (int, 1000, False, "Monte Carlo trials per point"),
        "phi": (float, 0.3, False, "true phase offset (rad)"),
        "c1": (float, 1.0, False, "high-SNR bound constant (uncalibrated default)"),
        "c2": (float, 1.0, False, "high-SNR bound constant (uncalibrated default)"),
    },
    "chi": {
        "esn0_db": (float, [-30.0, 0.0, 15.0], True, "Es/N0 grid (dB)"),
        "n_phi": (int, 32, False, "phase grid points over [0, pi/2)"),
    },
    "cpm-paths": {
        "mcpm": (int, 8, False, "CPM alphabet size"),
        "m": (int, [5], True, "oversampling factors"),
        "nif": (str, ["min"], True, "IF offsets: 'min', integers or fractions like 3/16"),
        "sample_offset": (str, "1", False, "sample placement (k + offset) T/M"),
    },
    "cpm-rate": {
        "mcpm": (int, 4, False, "CPM alphabet size"),
        "m": (int, [1, 2, 3], True, "oversampling factors"),
        "nif": (str, "0", False, "IF offset: 'min', integer or fraction"),
        "esn0_db": (float, [0.0, 10.0, 20.0], True, "Es/N0 grid (dB)"),
        "n": (int, 20000, False, "symbols per point"),
        "filter": (str, "rect", False, "delta or rect"),
    },
    "rll-info": {
        "d": (int, 1, False, "minimum runlength"),
    },
}


def _coerce(name, typ, is_list, value):
    try:
        if is_list:
            if not isinstance(value, (list, tuple)):
                value = [value]
            return [_coerce(name, typ, False, v) for v in value]
        if typ is bool:
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes"):
                    return True
                if value.lower() in ("0", "false", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        if typ is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {name!r}: {value!r}") from None


def resolve_params(command: str, file_params: dict | None, overrides: dict) -> dict:
    schema = SCHEMAS[command]
    params = {k: v[1] for k, v in schema.items()}
    for src in (file_params or {}), overrides:
        unknown = set(src) - set(schema)
        if unknown:
            raise ConfigError(f"unknown parameter(s) for {command}: {sorted(unknown)}")
        for k, v in src.items():
            if v is not None:
                typ, _, is_list, _ = schema[k]
                params[k] = _coerce(k, typ, is_list, v)
    return params


def load_config(path: str, command: str):
    """Returns (params, seed or None) from a parameter file or run manifest."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if "params" in data:  # run manifest
        if data.get("command") not in (None, command):
            raise ConfigError(f"manifest is for {data.get('command')!r}, not {command!r}")
        return data["params"], data.get("seed")
    seed = data.pop("seed", None)
    return data, seed


# --- formatting ---------------------------------------------------------------


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v != v:
            return "nan"
        return format(v, ".17g")
    return str(v)


def write_csv(fh, header, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])


# --- tasks (module level so they can be pickled) -------------------------------


def _task_se(args):
    from .channel import stream
    from .rate import rate_lower_bound, source_fsm, spectral_efficiency
    from .waveform import ChainConfig, average_power, b90_analytic, b90_bandwidth, n0_for_snr_db

    source, m_tx, m, snr_db, n, b90_mode, seed, idx = args
    fsm = source_fsm(source)
    cfg = ChainConfig(m_tx=m_tx, m=m)
    if b90_mode == "analytic":
        b90 = b90_analytic(cfg, fsm)
    else:
        b90 = b90_bandwidth(cfg, fsm, stream(seed, 1, idx))
    n0 = n0_for_snr_db(snr_db, average_power(cfg, fsm), b90)
    est = rate_lower_bound(cfg.replace(n0=n0), fsm, n, stream(seed, 0, idx))
    return (source, m_tx, m, snr_db, est.rate, est.stderr, b90, spectral_efficiency(est.rate, cfg, b90))


def _task_ber(args):
    from .channel import stream, transmit_frame
    from .equalizer import bcjr_equalize, frame_levels, map_detect, preamble_length
    from .rll import build_fsm, sample_dk_sequence
    from .waveform import ChainConfig, build_symbols

    d, m_tx, m, esn0_db, frames, n_data, seed, idx = args
    fsm = build_fsm(d)
    n0 = 1.0 / 10 ** (esn0_db / 10)
    cfg = ChainConfig(m_tx=m_tx, m=m, n0=n0)
    P = preamble_length(cfg)
    sym_err = bit_err = 0
    for f in range(frames):
        rng = stream(seed, idx, f)
        dk = [sample_dk_sequence(fsm, n_data, rng) for _ in range(2)]
        lv = [frame_levels(b, cfg) for b in dk]
        _, frame = transmit_frame(build_symbols(*lv), cfg, rng, method="taps")
        apps = bcjr_equalize(frame, cfg, fsm, n_data, n0)
        for app, b, l in zip(apps, dk, lv):
            sym_err += int(np.sum(map_detect(app) != l[P:P + n_data]))
            bit_err += int(np.sum((app.bit > 0.5) != (b > 0)))
    total = 2 * frames * n_data
    return (esn0_db, m, sym_err / total, bit_err / total, total)


_SYSTEMS = {}


def _task_bler(args):
    from .equalizer import CodedSystem, simulate_bler
    from .ldpc import RegularLdpc
    from .waveform import ChainConfig

    m_tx, m, ebn0_db, first, count, ldpc_seed, il_seed, seed = args
    key = (m_tx, m, ldpc_seed, il_seed)
    if key not in _SYSTEMS:
        _SYSTEMS[key] = CodedSystem(ChainConfig(m_tx=m_tx, m=m), RegularLdpc(seed=ldpc_seed),
                                    interleaver_seed=il_seed)
    point_seed = int(np.random.SeedSequence([seed, m, int(round(ebn0_db * 1000))]).generate_state(1)[0])
    r = simulate_bler(_SYSTEMS[key], ebn0_db, count, point_seed, first_frame=first)
    return (ebn0_db, m, r.errors, r.frames)


def _task_crlb(args):
    from .estimation import EstimationScenario, HighSnrConstants, crlb_phase, crlb_phase_bounds, fisher_info_1bit

    m, esn0_db, n_pilots, dither, c1, c2, seed = args
    sc = EstimationScenario(n_pilots=n_pilots, m=m, esn0_db=esn0_db, dither=dither, pilot_seed=seed)
    F = fisher_info_1bit(sc)
    lin = 10 ** (esn0_db / 10)
    k = HighSnrConstants(c1, c2, calibrated=True)
    return (esn0_db, m, crlb_phase(F), crlb_phase_bounds(lin, n_pilots, m, "low"),
            crlb_phase_bounds(lin, n_pilots, m, "high", k))


def _task_ls(args):
    from .estimation import EstimationScenario, mc_mse

    m, esn0_db, n_pilots, trials, phi, c1, c2, seed = args
    base = _task_crlb((m, esn0_db, n_pilots, True, c1, c2, seed))
    sc = EstimationScenario(n_pilots=n_pilots, m=m, esn0_db=esn0_db, dither=True, phi=phi, pilot_seed=seed)
    r = mc_mse(sc, trials, seed=seed)
    return base + (r.mse, r.ci_lo, r.ci_hi)


def _task_cpm_rate(args):
    from .cpm import CpmConfig, cpm_rate

    mcpm, m, nif, esn0_db, n, filt, seed, idx = args
    cfg = CpmConfig(mcpm, m, nif)
    r = cpm_rate(cfg, esn0_db, n, seed=int(np.random.SeedSequence([seed, idx]).generate_state(1)[0]), filt=filt)
    return (mcpm, m, cfg.n_if, esn0_db, r.rate, r.stderr)


def _run_tasks(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks))


def _parse_nif(s: str, mcpm: int):
    from .cpm import n_if_min

    if s == "min":
        return n_if_min(Fraction(1, mcpm))
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"invalid n_IF {s!r}") from None


# --- subcommand bodies -----------------------------------------------------------


def run_command(command: str, p: dict, seed: int, workers: int, echo=print):
    """Returns (header, rows) for one subcommand."""
    if command == "se-sweep":
        if p["b90"] not in ("analytic", "periodogram"):
            raise ConfigError("b90 must be 'analytic' or 'periodogram'")
        grid = [(s, mt, p["m"], snr) for s in p["sources"] for mt in p["m_tx"] for snr in p["snr_db"]]
        for s, *_ in grid:
            if s != "iud" and not (s.startswith("rll") and s[3:].isdigit()):
                raise ConfigError(f"unknown source {s!r}")
        tasks = [g + (p["n"], p["b90"], seed, i) for i, g in enumerate(grid)]
        rows = _run_tasks(_task_se, tasks, workers)
        rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
        return ["source", "m_tx", "M", "snr_db", "rate_bpcu", "stderr", "B90", "SE"], rows

    if command == "ber":
        tasks = [(p["d"], p["m_tx"], p["m"], e, p["frames"], p["n_data"], seed, i)
                 for i, e in enumerate(p["esn0_db"])]
        rows = _run_tasks(_task_ber, tasks, workers)
        rows.sort(key=lambda r: (r[1], r[0]))
        return ["esn0_db", "M", "ser", "ber", "symbols"], rows

    if command == "bler":
        if p["chunk"] < 1 or p["frames"] < 1:
            raise ConfigError("frames and chunk must be positive")
        tasks = []
        for m in p["ms"]:
            for e in p["ebn0_db"]:
                for first in range(0, p["frames"], p["chunk"]):
                    tasks.append((p["m_tx"], m, e, first, min(p["chunk"], p["frames"] - first),
                                  p["ldpc_seed"], p["interleaver_seed"], seed))
        parts = _run_tasks(_task_bler, tasks, workers)
        acc = {}
        for e, m, err, fr in parts:
            a = acc.setdefault((m, e), [0, 0])
            a[0] += err
            a[1] += fr
        rows = [(e, m, a[0] / a[1], a[1], a[0]) for (m, e), a in acc.items()]
        rows.sort(key=lambda r: (r[1], r[0]))
        return ["ebn0_db", "M", "bler", "frames", "errors"], rows

    if command == "crlb":
        tasks = [(m, e, p["n_pilots"], p["dither"], p["c1"], p["c2"], seed) for m in p["ms"] for e in p["esn0_db"]]
        rows = _run_tasks(_task_crlb, tasks, workers)
        rows.sort(key=lambda r: (r[1], r[0]))
        return ["esn0_db", "M", "crlb", "bound_low", "bound_high"], rows

    if command == "ls-mse":
        tasks = [(m, e, p["n_pilots"], p["trials"], p["phi"], p["c1"], p["c2"], seed)
                 for m in p["ms"] for e in p["esn0_db"]]
        if p["trials"] < 100:
            raise ConfigError("trials must be >= 100")
        rows = _run_tasks(_task_ls, tasks, workers)
        rows.sort(key=lambda r: (r[1], r[0]))
        return ["esn0_db", "M", "crlb", "bound_low", "bound_high", "mse_lse", "ci_lo", "ci_hi"], rows

    if command == "chi":
        from .estimation import chi_loss

        phis = np.arange(p["n_phi"]) * (np.pi / 2) / p["n_phi"]
        rows = [(e, float(ph), chi_loss(e, float(ph))) for e in p["esn0_db"] for ph in phis]
        return ["esn0_db", "phi", "chi"], rows

    if command == "cpm-paths":
        from .cpm import CpmConfig, count_distinguishable_paths, tilted_if

        rows = []
        for nif in p["nif"]:
            n = _parse_nif(nif, p["mcpm"])
            for m in p["m"]:
                cfg = CpmConfig(p["mcpm"], m, n, sample_offset=Fraction(p["sample_offset"]))
                rows.append((p["mcpm"], m, cfg.n_if, tilted_if(cfg), count_distinguishable_paths(cfg).log2_nd))
        rows.sort(key=lambda r: (r[1], r[2]))
        return ["M_cpm", "M", "n_IF", "f_IF", "log2_Nd"], rows

    if command == "cpm-rate":
        if p["filter"] not in ("delta", "rect"):
            raise ConfigError("filter must be 'delta' or 'rect'")
        n = _parse_nif(p["nif"], p["mcpm"])
        grid = [(p["mcpm"], m, n, e) for m in p["m"] for e in p["esn0_db"]]
        tasks = [g + (p["n"], p["filter"], seed, i) for i, g in enumerate(grid)]
        rows = _run_tasks(_task_cpm_rate, tasks, workers)
        rows.sort(key=lambda r: (r[1], r[3]))
        return ["M_cpm", "M", "n_IF", "esn0_db", "rate_bpcu", "stderr"], rows

    if command == "rll-info":
        from .rll import build_fsm, max_entropy_rate

        if p["d"] < 0:
            raise ConfigError("d must be >= 0")
        fsm = build_fsm(p["d"])
        h = max_entropy_rate(fsm)
        echo(f"d = {p['d']}, k = inf")
        echo(f"lambda = {fsm.lam:.10f}")
        echo(f"H_max = {h:.4f} bit/symbol ({h:.12f})")
        echo("transition matrix P:")
        for row in fsm.transitions:
            echo("  " + " ".join(f"{v:.6f}" for v in row))
        return ["d", "lambda", "H_max"], [(p["d"], fsm.lam, h)]

    raise ConfigError(f"unknown command {command!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zxm", description="1-bit oversampled link simulations")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON parameter file or run manifest")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", help="CSV output path (stdout if omitted)")
        sp.add_argument("--workers", type=int, default=None)
        for key, (typ, default, is_list, help_) in schema.items():
            flag = "--" + key.replace("_", "-")
            kw = {"dest": key, "default": None, "help": f"{help_} (default {default})"}
            if typ is bool:
                sp.add_argument(flag, type=str, metavar="{true,false}", **kw)
            elif is_list:
                sp.add_argument(flag, type=str if typ is str else typ, nargs="+", **kw)
            else:
                sp.add_argument(flag, type=typ, **kw)
    return ap


def _workers(arg) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("ZXM_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"invalid ZXM_WORKERS={env!r}") from None
    return 1


def main(argv=None) -> int:
    from .trellis import NumericFailure

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    t0 = time.time()
    try:
        file_params, file_seed = (load_config(args.config, args.command) if args.config else ({}, None))
        overrides = {k: getattr(args, k) for k in SCHEMAS[args.command]}
        params = resolve_params(args.command, file_params, overrides)
        seed = args.seed if args.seed is not None else (file_seed if file_seed is not None else 0)
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        workers = _workers(args.workers)
        text_only = args.command == "rll-info" and args.out is None
        quiet = args.out is None and not text_only
        header, rows = run_command(args.command, params, seed, workers,
                                   echo=(lambda s: print(s, file=sys.stderr)) if quiet else print)
    except ConfigError as exc:
        print(f"zxm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"zxm: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"zxm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    buf = io.StringIO()
    write_csv(buf, header, rows)
    if args.out is None:
        if not text_only:
            sys.stdout.write(buf.getvalue())
        return EXIT_OK
    with open(args.out, "w", newline="") as fh:
        fh.write(buf.getvalue())
    manifest = {
        "command": args.command,
        "params": params,
        "seed": seed,
        "version": f"zxm {__version__}",
        "workers": workers,
        "wall_time_s": round(time.time() - t0, 3),
        "output": os.path.basename(args.out),
    }
    with open(args.out + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

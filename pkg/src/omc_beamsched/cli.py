"""Command-line entry point.

Every flag can also come from a JSON config file (``--config`` or the
``OMC_BEAMSCHED_CONFIG`` environment variable).  Keys are flag names with
dashes replaced by underscores; flags given on the command line win.
Commands that write output also write the effective configuration next
to it.

Exit codes: 0 ok, 1 unexpected failure, 2 usage error, 3 missing file,
4 port in use, 5 malformed input.
"""

from __future__ import annotations

import argparse
import errno
import json
import logging
import os
import sys
from pathlib import Path

from .datagen import TraceSpec, gen_beam_list, gen_motion_trace
from .formats import (
    FormatError,
    MotionTrace,
    fmt_float,
    parse_declarations,
    read_beam_list,
    read_trace,
    write_beam_list,
    write_declarations,
    write_trace,
)
from .motion import simulate
from .pipeline import OmcConfig, OmcPipeline
from .protocol import BeamServer, LocalBeamClient, ProtocolError, TcpBeamClient
from .service import BeamService, ServiceConfig
from .smc import InvariantQuery, SmcConfig, check_invariant
from .treatment import (
    ConstantTransition,
    TreatmentConfig,
    TreatmentPlan,
    compare,
    read_coordinates,
    read_transition_matrix,
    run_omc,
    run_static,
)

log = logging.getLogger("omc_beamsched")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NOFILE, EXIT_PORT, EXIT_FORMAT = 0, 1, 2, 3, 4, 5
CONFIG_ENV = "OMC_BEAMSCHED_CONFIG"


class UsageError(Exception):
    pass


def _deadline(text: str) -> float | None:
    return None if text.lower() == "none" else float(text)


def _add_omc(p):
    g = p.add_argument_group("model pipeline")
    g.add_argument("--slot-interval", type=float, default=3000.0)
    g.add_argument("--session-offset", type=float, default=20000.0,
                   help="trace time (ms) before the first slot; history for the first fit")
    g.add_argument("--accuracy", type=float, default=100.0)
    g.add_argument("--tp", type=float, default=0.8)
    g.add_argument("--t-plus", type=float, default=200.0)
    g.add_argument("--t-minus", type=float, default=200.0)
    g.add_argument("--x-plus", type=float, default=1.5)
    g.add_argument("--x-minus", type=float, default=1.5)


def _add_smc(p):
    g = p.add_argument_group("statistical checking")
    g.add_argument("--epsilon", type=float, default=0.05)
    g.add_argument("--delta", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)


def _add_service(p, deadline):
    g = p.add_argument_group("beam verification")
    g.add_argument("--cutoff", type=float, default=0.5)
    g.add_argument("--scope", type=float, default=3000.0)
    g.add_argument("--deadline", type=_deadline, default=deadline, help="ms per slot, or 'none'")
    g.add_argument("--workers", type=int, default=None)


def _add_session(p):
    g = p.add_argument_group("treatment session")
    g.add_argument("--transition", type=int, default=1500, help="constant transition time (ms)")
    g.add_argument("--transition-matrix", help="CSV of pairwise transition times")
    g.add_argument("--coordinates", help="CSV of beam start positions (ID,x,y,z)")
    g.add_argument("--speed", type=float, default=None, help="robot speed (units/ms) for --coordinates")
    g.add_argument("--initial-beam", default=None)
    g.add_argument("--max-session", type=int, default=7_200_000, help="starvation guard (ms)")
    g.add_argument("--connect", default=None, metavar="HOST:PORT",
                   help="use a running service instead of an in-process one")
    g.add_argument("--realtime", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="omc-beamsched", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit per-slot models to a trace and write declaration files")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_omc(p)
    _add_smc(p)

    p = sub.add_parser("simulate", help="simulate a model trajectory to a trace CSV")
    p.add_argument("--model", required=True, help="declaration file")
    p.add_argument("--horizon", type=float, default=3000.0)
    p.add_argument("--accuracy", type=float, default=None, help="override the model's accuracy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("check", help="probability that a model stays within bounds")
    p.add_argument("--model", required=True, help="declaration file")
    p.add_argument("--lower", type=float)
    p.add_argument("--upper", type=float)
    p.add_argument("--threshold", type=float, help="symmetric bounds [-threshold, threshold]")
    p.add_argument("--scope", type=float, default=3000.0)
    p.add_argument("--accuracy", type=float, default=None, help="override the model's accuracy")
    _add_smc(p)

    p = sub.add_parser("serve", help="run the beam verification service over TCP")
    p.add_argument("--trace", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7878)
    p.add_argument("--port-file", help="write the bound port here once listening")
    p.add_argument("--sessions", type=int, default=None, help="exit after this many client sessions")
    _add_omc(p)
    _add_smc(p)
    _add_service(p, 3000.0)

    p = sub.add_parser("treat", help="simulate a treatment session")
    p.add_argument("mode", choices=["static", "omc"])
    p.add_argument("--trace", required=True)
    p.add_argument("--beams", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_session(p)
    _add_omc(p)
    _add_smc(p)
    _add_service(p, None)

    p = sub.add_parser("compare", help="repeated static versus OMC study")
    p.add_argument("--trace", required=True)
    p.add_argument("--template", required=True, help="beam list whose distributions are resampled")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--repetitions", type=int, default=30)
    p.add_argument("--n-beams", type=int, default=100)
    _add_session(p)
    _add_omc(p)
    _add_smc(p)
    _add_service(p, None)

    p = sub.add_parser("gen-trace", help="generate a synthetic motion trace")
    p.add_argument("--spec", required=True, help="JSON trace specification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-beams", help="resample a beam list")
    p.add_argument("--template", required=True)
    p.add_argument("-n", "--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def _apply_config(parser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    path = known.config or os.environ.get(CONFIG_ENV)
    if not path:
        return
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: expected a JSON object")
    subs = _subparsers(parser)
    used = set()
    for sp in subs.values():
        dests = {a.dest for a in sp._actions}
        values = {k.replace("-", "_"): v for k, v in raw.items() if k.replace("-", "_") in dests}
        sp.set_defaults(**values)
        used |= set(values)
    unknown = {k.replace("-", "_") for k in raw} - used
    if unknown:
        raise UsageError(f"{path}: unknown config keys: {', '.join(sorted(unknown))}")


def _echo_config(args, target: Path) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    target.write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(args, out / "config.json")
    return out


def _out_file(args) -> Path:
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    _echo_config(args, out.with_name(out.name + ".config.json"))
    return out


def _omc_config(args) -> OmcConfig:
    return OmcConfig(
        slot_interval=args.slot_interval, session_offset=args.session_offset, accuracy=args.accuracy,
        tp=args.tp, t_plus=args.t_plus, t_minus=args.t_minus, x_plus=args.x_plus, x_minus=args.x_minus,
        epsilon=args.epsilon, delta=args.delta, seed=args.seed,
    )


def _service_config(args) -> ServiceConfig:
    return ServiceConfig(
        cutoff=args.cutoff, scope=args.scope, deadline=args.deadline,
        workers=args.workers if args.workers is not None else (1 if args.deadline is None else None),
        epsilon=args.epsilon, delta=args.delta, seed=args.seed,
    )


def _treatment_config(args) -> TreatmentConfig:
    return TreatmentConfig(
        slot_interval=int(args.slot_interval), session_offset=int(args.session_offset),
        max_session=args.max_session, realtime=args.realtime,
    )


def _transition(args):
    if args.transition_matrix and args.coordinates:
        raise UsageError("--transition-matrix and --coordinates are mutually exclusive")
    if args.transition_matrix:
        return read_transition_matrix(args.transition_matrix)
    if args.coordinates:
        if args.speed is None:
            raise UsageError("--coordinates needs --speed")
        return read_coordinates(args.coordinates, args.speed)
    return ConstantTransition(args.transition)


def _client_factory(args, pipeline):
    if args.connect:
        host, _, port = args.connect.rpartition(":")
        if not host or not port.isdigit():
            raise UsageError(f"--connect expects HOST:PORT, got {args.connect!r}")
        return lambda: TcpBeamClient(host, int(port))
    service = BeamService(pipeline, _service_config(args))
    return lambda: LocalBeamClient(service)


def _load_model(args):
    model = parse_declarations(Path(args.model).read_text(encoding="utf-8"))
    return model if args.accuracy is None else model.with_accuracy(args.accuracy)


# -- subcommands ---------------------------------------------------------------


def cmd_fit(args) -> int:
    trace = read_trace(args.trace)
    out = _out_dir(args)
    pipeline = OmcPipeline(trace, _omc_config(args))
    axes = "xyz"[: trace.dims]
    rows = ["slot,created_at[ms],valid," + ",".join(f"tier_{a},p_{a}" for a in axes)]
    for ms in pipeline.run_all():
        for axis, model in zip(axes, ms.models):
            if model is not None:
                (out / f"slot_{ms.slot_index:05d}_{axis}.decl").write_text(write_declarations(model), encoding="utf-8")
        cells = [f"{t},{fmt_float(p)}" for t, p in zip(ms.tiers, ms.validity_probs)]
        rows.append(f"{ms.slot_index},{ms.created_at:g},{int(ms.valid)}," + ",".join(cells))
    (out / "slots.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    n = len(rows) - 1
    print(f"{n} slots, {sum(r.split(',')[2] == '1' for r in rows[1:])} valid; written to {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = _load_model(args)
    traj = simulate(model, horizon=args.horizon, seed=args.seed)
    out = _out_file(args)
    write_trace(MotionTrace(traj.times, traj.positions[:, None]), out)
    return EXIT_OK


def cmd_check(args) -> int:
    if args.threshold is not None:
        if args.lower is not None or args.upper is not None:
            raise UsageError("give either --threshold or --lower/--upper")
        lower, upper = -args.threshold, args.threshold
    elif args.lower is not None and args.upper is not None:
        lower, upper = args.lower, args.upper
    else:
        raise UsageError("bounds required: --threshold or --lower and --upper")
    model = _load_model(args)
    est = check_invariant(model, None, InvariantQuery(args.scope, lower, upper),
                          SmcConfig(args.epsilon, args.delta), args.seed)
    print(fmt_float(est.p_hat))
    return EXIT_OK


def cmd_serve(args) -> int:
    trace = read_trace(args.trace)
    service = BeamService(OmcPipeline(trace, _omc_config(args)), _service_config(args))
    with BeamServer((args.host, args.port), service) as server:
        port = server.server_address[1]
        if args.port_file:
            Path(args.port_file).write_text(f"{port}\n", encoding="utf-8")
        log.warning("serving %dD beam checks on %s:%d", trace.dims, args.host, port)
        if args.sessions is None:
            try:
                server.serve_forever()
            except KeyboardInterrupt:
                pass
        else:
            for _ in range(args.sessions):
                server.handle_request()
    return EXIT_OK


def cmd_treat(args) -> int:
    trace = read_trace(args.trace)
    beams = read_beam_list(args.beams)
    plan = TreatmentPlan(beams, _transition(args), args.initial_beam)
    cfg = _treatment_config(args)
    if args.mode == "static":
        result = run_static(plan, trace, cfg)
    else:
        client = _client_factory(args, OmcPipeline(trace, _omc_config(args)))()
        try:
            result = run_omc(plan, trace, client, cfg)
        finally:
            close = getattr(client, "close", None)
            if close:
                close()
    out = _out_dir(args)
    (out / "log.csv").write_text(result.to_csv(), encoding="utf-8")
    (out / "summary.txt").write_text(result.summary(), encoding="utf-8")
    totals = result.totals()
    (out / "totals.csv").write_text(",".join(totals) + "\n" + ",".join(str(v) for v in totals.values()) + "\n",
                                    encoding="utf-8")
    print(result.summary(), end="")
    return EXIT_OK if not result.aborted else EXIT_FAIL


def cmd_compare(args) -> int:
    trace = read_trace(args.trace)
    template = read_beam_list(args.template)
    factory = _client_factory(args, OmcPipeline(trace, _omc_config(args)))
    res = compare(template, trace, factory, args.repetitions, args.n_beams, args.seed,
                  _transition(args), _treatment_config(args))
    out = _out_dir(args)
    (out / "repetitions.csv").write_text(res.rows_csv(), encoding="utf-8")
    (out / "summary.csv").write_text(res.summary_csv(), encoding="utf-8")
    (out / "long.csv").write_text(res.long_table_csv(), encoding="utf-8")
    s = res.summary()
    print(
        f"idle static {s['static_idle_mean_s']:.3f} s, omc {s['omc_idle_mean_s']:.3f} s "
        f"({s['reduction_pct']:.2f}% reduction), sign test p = {s['sign_test_p']:.3g}"
    )
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    spec = TraceSpec.from_json(args.spec)
    trace = gen_motion_trace(spec, seed=args.seed)
    write_trace(trace, _out_file(args))
    return EXIT_OK


def cmd_gen_beams(args) -> int:
    beams = gen_beam_list(read_beam_list(args.template), args.n, seed=args.seed)
    write_beam_list(beams, _out_file(args))
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "check": cmd_check,
    "serve": cmd_serve,
    "treat": cmd_treat,
    "compare": cmd_compare,
    "gen-trace": cmd_gen_trace,
    "gen-beams": cmd_gen_beams,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"omc-beamsched: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"omc-beamsched: error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_NOFILE
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            print(f"omc-beamsched: error: address in use: {exc}", file=sys.stderr)
            return EXIT_PORT
        print(f"omc-beamsched: error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (FormatError, ProtocolError, ValueError) as exc:
        print(f"omc-beamsched: error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"omc-beamsched: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``dwmlab <command> [options]``.

Exit codes: 0 on success, 2 for configuration or input errors, 3 for
failures while running.
"""
import argparse
import json
import sys

from . import config as config_mod
from . import runner
from ._validation import ConfigurationError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
COMMANDS = ("identify", "simulate", "train", "evaluate", "benchmark", "sweep")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


def build_parser():
    p = _Parser(prog="dwmlab", description="Dynamic watermarking experiments on linear twins.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON configuration file")
        s.add_argument("--environment", choices=config_mod.ENVIRONMENTS)
        s.add_argument("--seed", type=int)
        s.add_argument("--replications", type=int)
        s.add_argument("--output-dir")
        s.add_argument("--n-jobs", type=int)
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted key; VALUE is parsed as JSON when possible")
        if name == "identify":
            s.add_argument("--data", help="CSV with columns y,u")
            s.add_argument("--y", dest="y_path")
            s.add_argument("--u", dest="u_path")
            s.add_argument("--boundaries", help="comma-separated segment start indices")
        if name == "train":
            s.add_argument("--resume", help="checkpoint to continue from")
            s.add_argument("--quiet", action="store_true")
        if name in ("evaluate", "simulate", "benchmark"):
            s.add_argument("--checkpoint", help="trained policy checkpoint (sets policy.kind=ddpg)")
        if name == "evaluate":
            s.add_argument("--arm", default="policy", help="none|low|high|constant:<U>|ddpg|policy")
    return p


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args):
    user = {}
    if args.config:
        path = args.config
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigurationError(f"configuration file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigurationError(f"{path}: configuration root must be a mapping")
    if args.environment:
        user["environment"] = args.environment
    for key in ("seed", "replications", "output_dir", "n_jobs"):
        val = getattr(args, key)
        if val is not None:
            user[key] = val
    if getattr(args, "checkpoint", None):
        config_mod.set_path(user, "policy.kind", "ddpg")
        config_mod.set_path(user, "policy.checkpoint", args.checkpoint)
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        config_mod.set_path(user, key.strip(), _parse_value(val))
    return config_mod.from_dict(user)


def _boundaries(text):
    if not text:
        return None
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"--boundaries must be integers, got {text!r}") from exc


def dispatch(args, cfg):
    cmd = args.command
    if cmd == "identify":
        return runner.cmd_identify(cfg, args.data, args.y_path, args.u_path, _boundaries(args.boundaries))
    if cmd == "simulate":
        return runner.cmd_simulate(cfg)
    if cmd == "train":
        log = None
        if not args.quiet:
            def log(ep, total, scenario):
                print(f"episode {ep + 1:4d}  return {total:12.4f}  attack={scenario.kind}", file=sys.stderr)
        return runner.cmd_train(cfg, resume=args.resume, log=log)
    if cmd == "evaluate":
        return runner.cmd_evaluate(cfg, args.arm)
    if cmd == "benchmark":
        return runner.cmd_benchmark(cfg)
    return runner.cmd_sweep(cfg)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except ConfigurationError as exc:
        print(f"dwmlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        out = dispatch(args, cfg)
    except ConfigurationError as exc:
        print(f"dwmlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"dwmlab: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands:
  serve        run the policy server from a config file
  simulate     run a scenario file and report assertion results
  lint-policy  validate a firewall or threat policy document
  replay       rebuild session state from an audit log and print its digest
  parse-alert  normalize fast-alert lines from stdin to JSON
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .audit import read_audit_file, verify_gap_free
from .config import ConfigError, ServiceConfig
from .engine import replay_sessions, sessions_digest
from .firewall import RuleParseError
from .sim import ScenarioError, report_to_bytes, run_scenario
from .threat import AlertParseError, ThreatPolicy, parse_snort_fast_alert


def _cmd_serve(args) -> int:
    from .service import serve

    try:
        config = ServiceConfig.load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    serve(config)
    return 0


def _cmd_simulate(args) -> int:
    try:
        report = run_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    output = report_to_bytes(report)
    if args.report:
        Path(args.report).write_bytes(output)
    else:
        sys.stdout.write(output.decode())
    if not report["passed"]:
        for check in report["assertions"]:
            if not check["passed"]:
                print(f"assertion failed: {check['detail']}", file=sys.stderr)
        return 1
    return 0


def _cmd_lint_policy(args) -> int:
    if args.firewall:
        try:
            from .firewall import parse_rules

            ruleset = parse_rules(Path(args.firewall).read_text())
        except RuleParseError as exc:
            for line, fieldname, message in exc.errors:
                print(f"{args.firewall}:{line}: {fieldname}: {message}", file=sys.stderr)
            return 1
        print(f"{args.firewall}: {len(ruleset)} rules ok")
        return 0
    try:
        policy = ThreatPolicy.load(args.threat)
    except (ValueError, KeyError) as exc:
        print(f"{args.threat}: {exc}", file=sys.stderr)
        return 1
    print(f"{args.threat}: {len(policy.clauses)} clauses ok")
    return 0


def _cmd_replay(args) -> int:
    try:
        envelopes = read_audit_file(args.audit)
        verify_gap_free(envelopes)
    except ValueError as exc:
        print(f"audit log invalid: {exc}", file=sys.stderr)
        return 1
    sessions = replay_sessions(envelopes)
    digest = sessions_digest(sessions)
    states = {}
    for session in sessions.values():
        states[session.state.value] = states.get(session.state.value, 0) + 1
    print(json.dumps({
        "records": len(envelopes),
        "sessions": len(sessions),
        "states": states,
        "digest": digest,
    }, sort_keys=True, indent=2))
    return 0


def _cmd_parse_alert(args) -> int:
    status = 0
    for lineno, line in enumerate(sys.stdin, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        try:
            evt = parse_snort_fast_alert(line)
        except AlertParseError as exc:
            print(f"stdin:{lineno}: {exc}", file=sys.stderr)
            status = 1
            continue
        print(json.dumps(evt.to_json(), sort_keys=True))
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nacpdp",
        description="Network access control policy server and enforcement simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the policy server")
    p_serve.add_argument("--config", required=True, help="service config JSON")
    p_serve.set_defaults(func=_cmd_serve)

    p_sim = sub.add_parser("simulate", help="run a scenario file")
    p_sim.add_argument("--scenario", required=True, help="scenario JSON")
    p_sim.add_argument("--report", help="write the report here instead of stdout")
    p_sim.set_defaults(func=_cmd_simulate)

    p_lint = sub.add_parser("lint-policy", help="validate a policy document")
    group = p_lint.add_mutually_exclusive_group(required=True)
    group.add_argument("--firewall", help="firewall rule document")
    group.add_argument("--threat", help="threat policy JSON")
    p_lint.set_defaults(func=_cmd_lint_policy)

    p_replay = sub.add_parser("replay", help="rebuild state from an audit log")
    p_replay.add_argument("--audit", required=True, help="audit JSON-lines file")
    p_replay.set_defaults(func=_cmd_replay)

    p_parse = sub.add_parser("parse-alert", help="normalize fast-alert lines from stdin")
    p_parse.set_defaults(func=_cmd_parse_alert)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

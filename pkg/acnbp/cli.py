# Copyright (c) 2024 Mifuyu (mifuyutsuki@proton.me)

# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published
# by the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.

"""
Command-line entry.

    run <path> [--seed N] [--weights a,b,c,d,e] [--assert] [--trace-dir DIR]
    verify-audit <log>
    inspect-anri <snapshot>

Exit codes: 0 success, 1 expected outcome or verification mismatch,
2 scenario or input error, 3 invariant breach or unexpected failure.
"""

from os import environ
from typing import List, Optional

import argparse
import logging

from acnbp import logger, __version__
from acnbp.lib.audit import AuditLog, verify_file
from acnbp.lib.errors import InvariantBreach, ParseError, ScenarioInvalid, SchemaViolation
from acnbp.lib.messages import load_message, load_multiline
from acnbp.modules.cps.schema import ScoringWeights
from acnbp.modules.registry.authority import verify_anri
from acnbp.modules.registry.registry import read_snapshot
from acnbp.modules.scenario.loader import load_scenario
from acnbp.modules.scenario.runner import ScenarioResult, run_scenario
from acnbp.utils import format_tb, short_hex

__all__ = (
  "EXIT_OK",
  "EXIT_MISMATCH",
  "EXIT_SCENARIO",
  "EXIT_INTERNAL",
  "build_parser",
  "main",
)

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_SCENARIO = 2
EXIT_INTERNAL = 3


def build_parser():
  ap = argparse.ArgumentParser(prog="acnbp", description=f"ACNBP v{__version__} scenario runner")
  sub = ap.add_subparsers(dest="cmd", required=True)

  r = sub.add_parser("run", help="Run a scenario in the simulator")
  r.add_argument("path", help="Scenario file")
  r.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
  r.add_argument("--weights", default=None, help="Scoring weights compat,security,reputation,cost,risk")
  r.add_argument("--assert", dest="check", action="store_true", help="Check the scenario's expected outcomes")
  r.add_argument("--trace-dir", default=None, help="Output directory for trace, report, audit and snapshot")
  r.add_argument("--verbose", action="store_true", help="Log INFO messages")
  r.set_defaults(func=cmd_run)

  v = sub.add_parser("verify-audit", help="Verify an audit log file")
  v.add_argument("path", help="Audit log file")
  v.set_defaults(func=cmd_verify_audit)

  i = sub.add_parser("inspect-anri", help="Print and verify a registry snapshot")
  i.add_argument("path", help="Registry snapshot file")
  i.set_defaults(func=cmd_inspect_anri)
  return ap


def main(argv: Optional[List[str]] = None) -> int:
  args = build_parser().parse_args(argv)
  if getattr(args, "verbose", False):
    logger.setLevel(logging.INFO)
  _init_sentry()

  try:
    return args.func(args)
  except SchemaViolation as e:
    _print_scenario_error(e.code, e.violations)
    return EXIT_SCENARIO
  except (ParseError, ScenarioInvalid) as e:
    _print_scenario_error(e.code, [str(e)])
    return EXIT_SCENARIO
  except OSError as e:
    _print_scenario_error(type(e).__name__, [str(e)])
    return EXIT_SCENARIO
  except InvariantBreach as e:
    logger.error(f"CLI | {format_tb(e)}")
    print(load_message("error_internal", {"code": e.code, "error_repr": str(e)}).text())
    return EXIT_INTERNAL
  except Exception as e:
    error_repr = format_tb(e)
    logger.exception(error_repr, exc_info=(type(e), e, e.__traceback__))
    _capture(e)
    print(load_message("error_internal", {"code": type(e).__name__, "error_repr": error_repr}).text())
    return EXIT_INTERNAL


# =================================================================================================
# Commands


def cmd_run(args: argparse.Namespace) -> int:
  weights = None
  if args.weights:
    try:
      weights = ScoringWeights.parse(args.weights)
    except ValueError as e:
      raise ScenarioInvalid(f"--weights: {e}") from None

  scenario = load_scenario(args.path)
  result = run_scenario(scenario, seed=args.seed, weights=weights, check=args.check, trace_dir=args.trace_dir)
  print(summary(result))

  if args.check:
    if result.mismatches:
      print(load_multiline(
        "run_mismatch",
        {"mismatch_rows": [{"mismatch": m} for m in result.mismatches]},
        {"count": len(result.mismatches)},
      ).text())
    else:
      print(load_message("run_passed", {"checked": result.checked}).text())
  return result.exit_code


def cmd_verify_audit(args: argparse.Namespace) -> int:
  ok, bad, records = verify_file(args.path)
  if ok:
    head = AuditLog.load(args.path).head
    print(load_message("audit_ok", {"path": args.path, "records": records, "head": head.hex()}).text())
    return EXIT_OK
  print(load_message("audit_bad", {"path": args.path, "index": bad, "records": records}).text())
  return EXIT_MISMATCH


def cmd_inspect_anri(args: argparse.Namespace) -> int:
  ca_root, time_ms, records = read_snapshot(args.path)
  rows = []
  invalid = 0
  for anri in records:
    valid = verify_anri(anri, ca_root)
    invalid += 0 if valid else 1
    cert = anri.security.certificate
    rows.append({
      "id": anri.id.qualified,
      "status": "valid" if valid else "INVALID",
      "location": anri.location,
      "reputation": f"{anri.reputation:.4f}",
      "cost_per_unit": anri.cost_per_unit,
      "ttl_ms": anri.ttl_ms,
      "issuer": cert.issuer,
      "serial": cert.serial,
      "certifications": ", ".join(sorted(cert.certifications)) or "-",
      "public_key": anri.security.public_key.hex(),
      "record_hash": anri.record_hash().hex(),
      "capability_rows": "\n".join(
        f"  capability : {cap.desc} [{cap.security.encryption_level.name.lower()}] {dict(sorted(cap.constraints.items()))}"
        for cap in anri.capabilities
      ),
    })

  print(load_multiline(
    "anri_snapshot",
    {"record_rows": rows},
    {"path": args.path, "count": len(records), "time_ms": time_ms, "invalid": invalid},
  ).text())
  return EXIT_OK if invalid == 0 else EXIT_MISMATCH


# =================================================================================================


def summary(result: ScenarioResult):
  report = result.report
  failures = report.session_failures
  counts = report.counts
  lines = {
    "ranking_rows": [
      {"rank": n, "agent": name, "total": f"{report.totals.get(name, 0.0):.4f}"}
      for n, name in enumerate(report.ranking, start=1)
    ],
    "eliminated_rows": [{"agent": k, "reason": v} for k, v in sorted(report.eliminated.items())],
    "failure_rows": [{"agent": k, "code": v} for k, v in sorted(failures.items())],
    "reputation_rows": [
      {"agent": name, "before": f"{report.reputation_before[name]:.4f}", "after": f"{after:.4f}"}
      for name, after in sorted(report.reputation_after.items())
      if after != report.reputation_before.get(name)
    ],
    "registration_rows": [{"agent": k, "result": v} for k, v in report.registrations.items()],
    "adversary_rows": [
      {
        "kind": a["kind"],
        "target": " -> ".join(a["target"]),
        "stats": ", ".join(f"{k} {v}" for k, v in a.items() if k not in ("kind", "target", "codes")),
      }
      for a in report.adversaries
    ],
  }
  return load_multiline("run_summary", lines, {
    "scenario": report.scenario,
    "seed": report.seed,
    "outcome": report.outcome or "-",
    "reason": report.reason or "ok",
    "final_phase": report.final_phase,
    "selected": report.selected or "-",
    "established": len(report.established),
    "failed": len(failures),
    "sent": counts.get("sent", 0),
    "delivered": counts.get("delivered", 0),
    "dropped": counts.get("dropped", 0),
    "rejected": sum(report.rejections.values()),
    "audit_head": short_hex(report.audit_head, 16),
    "audit_length": report.audit_length,
    "transcript_head": short_hex(report.transcript_head, 16),
    "end_time_ms": report.end_time_ms,
    "out_dir": str(result.out_dir),
  }).text()


def _print_scenario_error(code: str, details: List[str]):
  print(load_multiline("error_scenario", {"detail_rows": [{"detail": d} for d in details]}, {"code": code}).text())


def _init_sentry():
  sentry_dsn = environ.get("SENTRY_DSN")
  if not sentry_dsn:
    return
  import sentry_sdk
  sentry_sdk.init(dsn=sentry_dsn, environment=environ.get("SENTRY_ENV") or "dev")
  logger.info("CLI | Sentry logging is active")


def _capture(e: BaseException):
  if environ.get("SENTRY_DSN"):
    import sentry_sdk
    sentry_sdk.capture_exception(e)

# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

"""
Command line entry point.

``fragment-shuffle run --config example.toml`` simulates an experiment and
``fragment-shuffle account ...`` evaluates the accountant without simulation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import tomli
from pydantic import ValidationError

from fragment_shuffle.accounting import (
    AmplificationMode,
    AmplificationQuery,
    CentralGuarantee,
    FragmentPlan,
    amplify,
    match_fragment_budget,
    report_frag_central,
    report_frag_local,
    solve_local_for_central,
)
from fragment_shuffle.driver import ExperimentDriver
from fragment_shuffle.errors import (
    InfeasibleTargetError,
    PreconditionError,
    ReportFormatError,
)


logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fragment-shuffle",
        description="Shuffle-model local differential privacy simulator and accountant.",
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Simulate an experiment configuration.")
    run.add_argument("--config", required=True, type=Path, help="TOML configuration.")
    run.add_argument("--seed", type=int, help="Override the configured seed.")
    run.add_argument("--out-dir", type=Path, help="Override the output folder.")
    run.add_argument("--threads", type=int, help="Number of worker threads.")

    account = commands.add_parser("account", help="Evaluate privacy bounds.")
    target = account.add_mutually_exclusive_group()
    target.add_argument("--epsilon-local", type=float, help="Amplify a local budget.")
    target.add_argument(
        "--epsilon-central", type=float, help="Solve the local budget of a central target."
    )
    account.add_argument("--n", type=int, required=True, help="Number of respondents.")
    account.add_argument("--delta", type=float, required=True, help="Central delta.")
    account.add_argument(
        "--mode",
        default=AmplificationMode.BINARY_EXACT.value,
        choices=[mode.value for mode in AmplificationMode],
        help="Amplification bound.",
    )
    account.add_argument("--tau", type=int, default=1, help="Report fragments.")
    account.add_argument("--epsilon-backstop", type=float, help="Backstop budget.")
    account.add_argument(
        "--epsilon-fragment",
        type=float,
        help="Fragment budget, matched to the backstop when omitted.",
    )
    return parser


def account(args: argparse.Namespace) -> dict:
    """Accounting results of the ``account`` sub-command."""
    output: dict = {"n": args.n, "delta": args.delta, "mode": args.mode}

    if args.epsilon_backstop is not None:
        fragment = args.epsilon_fragment or match_fragment_budget(
            args.epsilon_backstop, args.tau
        )
        plan = FragmentPlan(args.tau, args.epsilon_backstop, fragment, args.tau)
        output.update(
            tau=args.tau,
            epsilon_backstop=args.epsilon_backstop,
            epsilon_fragment=fragment,
            epsilon_linf=report_frag_local(plan).epsilon,
            epsilon_l1=report_frag_local(
                FragmentPlan(args.tau, args.epsilon_backstop, fragment, 1)
            ).epsilon,
        )
        try:
            output["epsilon_c"] = report_frag_central(plan, args.n, args.delta).epsilon
        except PreconditionError as error:
            output["epsilon_c"] = None
            output["note"] = str(error)
        return output

    if args.epsilon_local is not None:
        output["epsilon_local"] = args.epsilon_local
        output["epsilon_c"] = amplify(
            AmplificationQuery(args.epsilon_local, args.n, args.delta), args.mode
        ).epsilon
        return output

    if args.epsilon_central is not None:
        output["epsilon_c"] = args.epsilon_central
        output["epsilon_local"] = solve_local_for_central(
            CentralGuarantee(args.epsilon_central, args.delta), args.n, args.mode
        ).epsilon
        return output

    raise ValueError(
        "Provide --epsilon-local, --epsilon-central or --epsilon-backstop."
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if args.command == "run":
        try:
            ExperimentDriver.start(
                args.config, seed=args.seed, out_dir=args.out_dir, threads=args.threads
            )
        except (
            ValidationError,
            tomli.TOMLDecodeError,
            FileNotFoundError,
            ReportFormatError,
        ) as error:
            logger.error("Invalid configuration %s: %s", args.config, error)
            return 2
        return 0

    try:
        print(json.dumps(account(args), indent=2))
    except (InfeasibleTargetError, PreconditionError, ValueError) as error:
        logger.error("%s", error)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

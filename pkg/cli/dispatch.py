"""
``epiregime <subcommand> [flags]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
failure, 64 usage error.
"""
import logging
import sys
from contextlib import redirect_stderr, redirect_stdout

from django.core.management import CommandError, load_command_class
from django.core.management.base import OutputWrapper

from core.exceptions import NUMERICAL_ERRORS, VALIDATION_ERRORS

logger = logging.getLogger(__name__)

SUBCOMMANDS = {
    "simulate": "simulate",
    "fit-batch": "fit_batch",
    "fit-seq": "fit_seq",
    "forecast": "forecast",
    "compare": "compare",
    "diagnose": "diagnose",
    "manual": "manual",
}

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_USAGE = 64


def usage() -> str:
    return "usage: epiregime {" + ",".join(SUBCOMMANDS) + "} [flags]\n" \
           "       epiregime <subcommand> --help\n"


def cli_dispatch(argv, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = list(argv)
    if not argv or argv[0] in ("-h", "--help"):
        (stdout if argv else stderr).write(usage())
        return EXIT_OK if argv else EXIT_USAGE
    name = argv[0]
    if name not in SUBCOMMANDS:
        stderr.write(f"unknown subcommand {name!r}\n{usage()}")
        return EXIT_USAGE

    command = load_command_class("cli", SUBCOMMANDS[name])
    command.stdout = OutputWrapper(stdout)
    command.stderr = OutputWrapper(stderr)
    command.argv = argv
    parser = command.create_parser("epiregime", name)
    try:
        with redirect_stdout(stdout), redirect_stderr(stderr):
            options = vars(parser.parse_args(argv[1:]))
    except CommandError as e:
        stderr.write(f"{e}\n{parser.format_usage()}")
        return EXIT_USAGE
    except SystemExit as e:
        return EXIT_OK if not e.code else EXIT_USAGE
    args = options.pop("args", ())

    try:
        command.execute(*args, **options)
    except VALIDATION_ERRORS as e:
        logger.error(f"{name} failed: {e}")
        stderr.write(f"error: {e}\n")
        return EXIT_VALIDATION
    except NUMERICAL_ERRORS as e:
        logger.error(f"{name} failed: {e}")
        stderr.write(f"numerical failure: {e}\n")
        return EXIT_NUMERICAL
    except CommandError as e:
        stderr.write(f"error: {e}\n")
        return EXIT_VALIDATION
    return EXIT_OK

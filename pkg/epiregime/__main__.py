"""Entry point for ``python -m epiregime <subcommand> ...``."""
import os
import sys


def main():
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "epiregime.settings")
    import django

    django.setup()

    from cli.dispatch import cli_dispatch

    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

import sys

from src.autocf.cli import cli


def main() -> None:
    """Main entry point for the AutoCF experiment engine."""
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()

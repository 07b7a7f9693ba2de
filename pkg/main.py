"""
Main application entry point
"""
import sys

from cli.commands import run


def main() -> int:
    """Run the t1moco command line and return its exit code"""
    return run()


if __name__ == "__main__":
    sys.exit(main())

"""Entry point to allow running this package as a module."""
import sys

from mixkin_cli import main

if __name__ == "__main__":
    sys.exit(main())

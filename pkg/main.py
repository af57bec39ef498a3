#!/usr/bin/env python3
"""
PostRisk-SMC - Main Entry Point
"""

import sys

from src.cli import main as cli_main


def main():
    """Main entry point for the PostRisk-SMC command line."""
    print("=" * 60)
    print("  POSTRISK-SMC - rare events under the posterior")
    print("=" * 60)
    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())

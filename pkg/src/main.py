"""
Script entry for running the validation harness from a source checkout:

    python src/main.py attention-check --config configs/attention.json --out reports/attention.json

Installed packages expose the same commands as `rtfilter`.
"""

from rtfilter.cli import cli

if __name__ == "__main__":
    cli()

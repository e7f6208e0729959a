#!/usr/bin/env python3
"""Export a classifier as a portable graph plus a logits consistency record."""
import sys

from extractor.cli import export_main

if __name__ == "__main__":
    sys.exit(export_main())

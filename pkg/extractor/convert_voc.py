#!/usr/bin/env python3
"""Convert a PASCAL-VOC tree into the bundle/annotation collection layout."""
import sys

from extractor.cli import convert_main

if __name__ == "__main__":
    sys.exit(convert_main())

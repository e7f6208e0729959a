#!/usr/bin/env python3
"""One-shot extraction: image file in, tensor bundle out."""
import sys

from extractor.cli import extract_main

if __name__ == "__main__":
    sys.exit(extract_main())

#!/usr/bin/env python3
"""
Output Parser Script
Built-in key=value parser as a standalone executable: reads the
<nodes>x<ppn>.out files of one output directory and prints the result CSV
"""

import sys

from utils.errors import SwarmError
from utils.results import parse_output_dir, render_rows_csv, run_output_files


def main(argv):
    if len(argv) != 1:
        print("usage: output_parser.py <output-dir>", file=sys.stderr)
        return 2
    output_dir = argv[0]
    if not run_output_files(output_dir):
        print(f"no run output files in {output_dir}", file=sys.stderr)
        return 1
    try:
        sys.stdout.write(render_rows_csv(parse_output_dir(output_dir)))
    except (OSError, SwarmError) as e:
        print(str(e), file=sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main(sys.argv[1:]))

"""Console entry point that execs the bundled native CLI."""

import os
import sys
from pathlib import Path


def main() -> None:
    binary = Path(__file__).parent / "bin" / "nawr"
    if not binary.exists():
        sys.stderr.write(
            "nawr: bundled binary not found; build the CMake project and use "
            "build/tools/nawr instead\n"
        )
        raise SystemExit(1)
    os.execv(str(binary), [str(binary)] + sys.argv[1:])

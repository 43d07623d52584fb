import sys

from casimir_cusp.cli import main

if __name__ == "__main__":
    sys.exit(main())

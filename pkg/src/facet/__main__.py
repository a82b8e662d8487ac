"""Module entry point so `python3 -m facet` behaves like the console script."""

import sys

from .cli import main

sys.exit(main())

"""Module entry point for python -m hierpi."""

import sys

from .cli import main

sys.exit(main())

"""Entry point for python -m custom_components.ion_ising."""

import sys

from custom_components.ion_ising.cli import main

sys.exit(main())

"""Allow `python -m underprediction_kit`."""

import sys

from .main import main

sys.exit(main())

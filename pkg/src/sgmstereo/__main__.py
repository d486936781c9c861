import sys

from sgmstereo.cli import main

sys.exit(main())

import sys

from smartcal.cli import main

sys.exit(main())

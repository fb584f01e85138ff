import sys

from socialfl.harness.cli import main

sys.exit(main())

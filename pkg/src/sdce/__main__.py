import sys

from sdce.harness.cli import main

sys.exit(main())

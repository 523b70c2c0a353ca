import sys

from aqpt.cli import main

sys.exit(main())

import sys

from bisimlab.cli import main

sys.exit(main())

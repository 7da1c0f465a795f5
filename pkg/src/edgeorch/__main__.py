import sys

from edgeorch.cli import main

sys.exit(main())

import sys

from dynmetric.cli import main

sys.exit(main())

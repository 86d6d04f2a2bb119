import sys

from contentval.cli import main

sys.exit(main())

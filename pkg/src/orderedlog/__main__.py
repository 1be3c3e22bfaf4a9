import sys

from orderedlog.cli import main

sys.exit(main())

import sys

from qof.cli import main

sys.exit(main())

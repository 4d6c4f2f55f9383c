import sys

from transdepth.cli import main

sys.exit(main())

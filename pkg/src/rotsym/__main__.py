import sys

from rotsym.cli import main

sys.exit(main())

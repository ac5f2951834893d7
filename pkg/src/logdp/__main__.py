import sys

from logdp.cli import main

sys.exit(main())

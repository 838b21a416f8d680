import sys

from beamcast.cli import main

sys.exit(main())

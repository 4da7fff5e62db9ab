import sys

from retargetlab.cli import main

sys.exit(main())

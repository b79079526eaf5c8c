import sys

from spkver.cli import main

sys.exit(main())

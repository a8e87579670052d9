import sys

from opensiam.cli import main

sys.exit(main())

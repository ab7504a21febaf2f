import sys

from metagene.cli import main

sys.exit(main())

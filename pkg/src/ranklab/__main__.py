import sys

from ranklab.cli import main

sys.exit(main())

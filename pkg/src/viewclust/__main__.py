import sys

from viewclust.cli import main

sys.exit(main())

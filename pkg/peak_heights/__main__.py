import sys

from peak_heights.cli import main

sys.exit(main())

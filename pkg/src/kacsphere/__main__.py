import sys

from kacsphere.cli import main

sys.exit(main())

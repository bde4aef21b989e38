import sys

from msrd.main import main

sys.exit(main())

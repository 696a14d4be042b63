import sys

from mobilsim.cli import main

sys.exit(main())

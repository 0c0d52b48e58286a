import sys

from auditmas.cli import main

sys.exit(main())

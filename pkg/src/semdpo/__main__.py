import sys

from semdpo.cli import main

sys.exit(main())

import sys

from factorizer.main import main

sys.exit(main())

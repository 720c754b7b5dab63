import sys

from nucleiseg.main import main

sys.exit(main())

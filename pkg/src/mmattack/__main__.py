import sys

from mmattack.cli import main

sys.exit(main())

from vdkl.cli import main
import sys

sys.exit(main())

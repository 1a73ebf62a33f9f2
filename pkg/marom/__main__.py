from marom.cli import main

raise SystemExit(main())

from vpgan.cli import main

raise SystemExit(main())

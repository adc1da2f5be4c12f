from finmeas.cli import main

main()

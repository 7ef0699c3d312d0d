from incentfed.cli import main

main()

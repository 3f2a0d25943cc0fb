from rstcrypt.cli import main

main()

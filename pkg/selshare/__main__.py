from selshare.main import main

main()

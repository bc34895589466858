from .cli_render import main

main()

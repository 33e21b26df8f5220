"""
This module is the main entry point for the command line interface.
You can run a command by executing, for example:

    python main.py estimate --data data.csv --schema data.ini --methods iptw-mlr,bart

"""

from mtbart.cli import main

main()

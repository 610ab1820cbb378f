#!/usr/bin/env python3
"""
pimspec command-line entry point
"""

from pimspec.cli import main

if __name__ == '__main__':
    main()

#!/usr/bin/env python3
"""
Eductive runtime - entry point

Dispatches to the operator command line; `main_eductive.py node start`
serves a live instance with uvicorn.
"""

import logging
import os
import sys

from dotenv import load_dotenv

load_dotenv()

# Configure logging
logging.basicConfig(
    level=os.getenv("EDUCTIVE_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Add the backend directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'backend'))


if __name__ == "__main__":
    from cli.commands import main

    sys.exit(main(sys.argv[1:]))

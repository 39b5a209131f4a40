"""
StreamHead launcher.
Usage: python StreamHead.py <gen-data|train|finetune|classify|baseline|bench|gradcheck> [flags]
"""
import logging
import sys

from ui.cli import main

# Configure Logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')

if __name__ == "__main__":
    sys.exit(main())

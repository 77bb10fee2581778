import sys
from pathlib import Path

# Tests import the oracle helpers directly (tests/oracles.py).
sys.path.insert(0, str(Path(__file__).parent))

import sys
from pathlib import Path

# tests import the oracle module directly
sys.path.insert(0, str(Path(__file__).parent))

import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def binom_sigma(p: float, n: int) -> float:
    """Standard error of a proportion estimated from n Bernoulli trials."""
    return math.sqrt(p * (1.0 - p) / n)

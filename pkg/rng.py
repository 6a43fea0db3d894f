"""
Counter-based random streams for reproducible Monte Carlo.

Each draw is addressed by (seed, purpose, replica, step, position): the Philox
key holds (seed, purpose), the counter holds (position, 0, step, replica).
Results therefore never depend on execution order or on how particles are
split between workers. Normal variates are produced by the inverse CDF of
53-bit uniforms, which is platform independent.
"""
import numpy as np
from scipy import special

PURPOSE_LABELS = 1
PURPOSE_INITIAL = 2
PURPOSE_NOISE = 3
PURPOSE_GRAPH = 4
PURPOSE_TRACER_INITIAL = 5
PURPOSE_TRACER_NOISE = 6
PURPOSE_BOOTSTRAP = 7
PURPOSE_SPLIT = 8
PURPOSE_PERMUTATION = 9

_MASK64 = (1 << 64) - 1
_UNIT = 2.0 ** -53


class CounterStream:
    """Random numbers for one (seed, purpose, replica) triple, indexed by step."""

    def __init__(self, seed: int, purpose: int, replica: int = 0):
        self.seed = int(seed) & _MASK64
        self.purpose = int(purpose)
        self.replica = int(replica)

    def _bit_generator(self, step: int) -> np.random.Philox:
        key = np.array([self.seed, self.purpose], dtype=np.uint64)
        counter = np.array([0, 0, int(step), self.replica], dtype=np.uint64)
        return np.random.Philox(counter=counter, key=key)

    def raw(self, step: int, count: int) -> np.ndarray:
        return self._bit_generator(step).random_raw(int(count))

    def uniforms(self, step: int, count: int) -> np.ndarray:
        """Uniforms in the open interval (0, 1); entry i belongs to position i."""
        bits = self.raw(step, count) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * _UNIT

    def normals(self, step: int, count: int) -> np.ndarray:
        return special.ndtri(self.uniforms(step, count))

    def __repr__(self) -> str:
        return f"CounterStream(seed={self.seed}, purpose={self.purpose}, replica={self.replica})"

"""Counter-based random streams for reproducible ensembles"""
import numpy as np

BATCH_SIZE = 4096


def make_generator(master_seed: int, index: int) -> np.random.Generator:
    """Philox generator keyed by (master seed, trajectory index)"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master_seed), int(index)])))


class EventStream:
    """
    Pre-drawn unit exponentials and uniforms for the event loop.

    Draws are made in fixed-size batches, so the sequence handed out depends
    only on the generator key.
    """

    def __init__(self, master_seed: int, index: int, batch_size: int = BATCH_SIZE):
        self.master_seed = int(master_seed)
        self.index = int(index)
        self.generator = make_generator(master_seed, index)
        self.batch_size = batch_size
        self.draws = 0
        self._refill()

    def _refill(self):
        self._exponentials = self.generator.standard_exponential(self.batch_size).tolist()
        self._uniforms = self.generator.random(self.batch_size).tolist()
        self._counter = 0

    def next_pair(self):
        """(unit exponential, uniform on [0, 1))"""
        if self._counter == self.batch_size:
            self._refill()
        k = self._counter
        self._counter += 1
        self.draws += 1
        return self._exponentials[k], self._uniforms[k]

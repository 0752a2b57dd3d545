"""Untrained random-projection LSH, sharing the encode/index/eval path with the learner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fcoh.model import HashModel, encode, init_model


@dataclass(frozen=True)
class LshModel:
    model: HashModel

    @property
    def W(self) -> np.ndarray:
        return self.model.W

    @property
    def d(self) -> int:
        return self.model.d

    @property
    def r(self) -> int:
        return self.model.r


def lsh_init(d: int, r: int, seed: int) -> LshModel:
    return LshModel(init_model(d, r, seed))


def lsh_encode(m: LshModel, X) -> np.ndarray:
    return encode(m.model, X)

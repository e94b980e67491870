"""Shared fixtures and oracles: synthetic CIFAR-format data, brute-force Wilcoxon, acceptance summary."""

from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np
import pytest

from jitlab.data import write_cifar_records


def write_synthetic_cifar(directory, per_class_train: int, per_class_test: int, seed: int = 0,
                          strength: float = 3.5, noise: float = 60.0) -> Path:
    """Standard batch files holding class templates (8x8 blocks, upsampled) plus pixel noise.

    Not CIFAR-10: a stand-in with the same file layout whose difficulty is set
    by ``strength`` against ``noise``.
    """
    rng = np.random.default_rng(seed)
    coarse = rng.standard_normal((10, 3, 8, 8))
    templates = np.repeat(np.repeat(coarse, 4, axis=2), 4, axis=3).reshape(10, -1)
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)

    def draw(n):
        y = np.repeat(np.arange(10), n)
        rng.shuffle(y)
        px = 128 + strength * templates[y] + noise * rng.standard_normal((len(y), 3072))
        return y, np.clip(np.rint(px), 0, 255).astype(np.uint8)

    y, px = draw(per_class_train)
    for i, chunk in enumerate(np.array_split(np.arange(len(y)), 5)):
        write_cifar_records(out / f"data_batch_{i + 1}.bin", y[chunk], px[chunk])
    y, px = draw(per_class_test)
    write_cifar_records(out / "test_batch.bin", y, px)
    return out


@pytest.fixture(scope="session")
def tiny_cifar(tmp_path_factory) -> Path:
    """20 training and 10 test images per class."""
    return write_synthetic_cifar(tmp_path_factory.mktemp("cifar"), 20, 10, seed=3, strength=8.0)


def average_ranks(values):
    """Ranks from 1, tied values sharing the mean of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def brute_force_p(a, b):
    """Two-sided signed-rank p over all 2^n sign flips of the nonzero differences."""
    d = [x - y for x, y in zip(a, b) if x != y]
    ranks = average_ranks([abs(t) for t in d])
    centre = sum(ranks) / 2
    observed = abs(sum(r for r, t in zip(ranks, d) if t > 0) - centre)
    hits = sum(abs(sum(r for r, s in zip(ranks, signs) if s) - centre) >= observed - 1e-9
               for signs in itertools.product((0, 1), repeat=len(d)))
    return hits / 2 ** len(d)


# (number, title, passed, detail) appended by tests/test_acceptance.py
ACCEPTANCE_LOG: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_LOG):
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")

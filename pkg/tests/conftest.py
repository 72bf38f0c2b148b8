"""Shared fixtures: a tiny dataset in the published HAR text layout."""

from pathlib import Path

import numpy as np
import pytest

from kervnet.data.har import ALL_CHANNELS, WINDOW


def write_har_tree(root: Path, n_train: int = 90, n_test: int = 48, seed: int = 0) -> Path:
    """Class-dependent sinusoids plus noise, written as whitespace-separated text.

    Activity ``c`` oscillates at ``c`` cycles per window with amplitude
    growing with ``c``, so every class is separable and sitting/standing (4, 5)
    look alike.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(WINDOW) / WINDOW
    for split, n in (("train", n_train), ("test", n_test)):
        labels = np.resize(np.arange(1, 7), n)
        rng.shuffle(labels)
        sig = root / split / "Inertial Signals"
        sig.mkdir(parents=True, exist_ok=True)
        for ci, ch in enumerate(ALL_CHANNELS):
            rows = []
            for lab in labels:
                freq = {4: 1.0, 5: 1.0}.get(int(lab), float(lab) + 1)
                phase = rng.uniform(0, 2 * np.pi)
                amp = 0.5 + 0.2 * lab
                rows.append(amp * np.sin(2 * np.pi * freq * t + phase + ci)
                            + 0.05 * rng.standard_normal(WINDOW))
            np.savetxt(sig / f"{ch}_{split}.txt", np.array(rows), fmt="%.8e")
        np.savetxt(root / split / f"y_{split}.txt", labels, fmt="%d")
    return root


@pytest.fixture(scope="session")
def har_root(tmp_path_factory) -> Path:
    return write_har_tree(tmp_path_factory.mktemp("har") / "UCI HAR Dataset")


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])

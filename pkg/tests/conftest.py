"""Shared fixtures. The end-to-end model is trained once per session."""

import pytest

from localcount.cli import cmd_train, effective_config
from localcount.data import SynthConfig, synth_generate

E2E_SEED = 0

# "CRITERION n: ..." lines from the acceptance tests, repeated in the terminal summary
CRITERION_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def e2e_dataset(tmp_path_factory):
    """250 synthetic images, 200 for training and 50 held out."""
    root = tmp_path_factory.mktemp("e2e") / "ds"
    summary = synth_generate(SynthConfig(n_images=250, test_fraction=0.2), E2E_SEED, root)
    return root / "manifest.csv", summary


@pytest.fixture(scope="session")
def e2e_model(e2e_dataset, tmp_path_factory):
    """alexnet_like with default settings, 25 epochs."""
    manifest, _ = e2e_dataset
    cfg = effective_config(manifest, None, {"seed": E2E_SEED})
    return cmd_train(cfg, manifest, tmp_path_factory.mktemp("e2e") / "run")

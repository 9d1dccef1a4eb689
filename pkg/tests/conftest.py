import numpy as np
import pytest

from latent_reweighting.models import MlpSpec, Net, mlp_init

# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def report(criterion: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_net(widths, seed, hidden="leaky_relu", output="identity", bias_scale=0.1) -> Net:
    spec = MlpSpec(tuple(widths), hidden=hidden, output=output)
    params = mlp_init(spec, seed)
    r = np.random.default_rng([seed, 99])
    for b in params.biases:
        b += bias_scale * r.standard_normal(b.shape)
    return Net(spec, params)

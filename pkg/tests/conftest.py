import numpy as np
import pytest

from betage.graph_data import Dataset
from betage.similarity import EncoderSpec, init_params


def toy_dataset(seed=0, p=3):
    """4 nodes, three positive pairs, one of them with weight 2."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(4, p))
    return Dataset.build(X, [(0, 1), (1, 2), (0, 3)], [1, 2, 1])


def random_params(spec, seed, scale=1.0):
    params = init_params(spec, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1000)
    theta = params.theta * scale
    theta[params.layout.psi_size:] = rng.normal(size=params.size - params.layout.psi_size)
    return params.with_theta(theta)


@pytest.fixture
def toy():
    return toy_dataset()


@pytest.fixture(params=["linear", "mlp1"])
def toy_spec(request):
    if request.param == "linear":
        return EncoderSpec("linear", 3, 2)
    return EncoderSpec("mlp1", 3, 2, hidden_dim=4)


def gamma_only_setup(beta=0.5, seed=0):
    """Toy graph, a fixed random linear encoder and a mask freeing only gamma."""
    d = toy_dataset(seed)
    spec = EncoderSpec("linear", 3, 2)
    params = init_params(spec, np.random.default_rng(seed))
    mask = ~params.layout.psi_mask()
    return d, spec, params, mask


def gamma_root(params, d, beta, lam, m1, m2, oracles_module):
    """Bisection root of the scalar estimating equation in gamma."""
    from betage.similarity import encode

    i, j = d.all_pairs()
    inner = [float(encode(params, d.x(a)) @ encode(params, d.x(b))) for a, b in zip(i, j)]
    v = d.num_pairs / d.num_positive
    f = oracles_module.gamma_equation(inner, d.dense_weights(), beta, lam, m1, m2, v)
    return oracles_module.bisect(f, -30.0, 30.0)


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion."""

    def record(name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)

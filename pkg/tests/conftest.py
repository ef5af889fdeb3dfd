"""Shared fixtures plus the acceptance-criterion summary printer."""
import numpy as np
import pytest

import acttopo as at

# criterion number -> (description, passed, detail); populated by test_acceptance
ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, description: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS[number] = (description, passed, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        desc, passed, detail = ACCEPTANCE_RESULTS[num]
        status = "PASS" if passed else "FAIL"
        line = f"criterion {num:2d} {status} - {desc}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_dense_spec():
    return at.NetworkSpec(layers=(at.Dense(2, 2, "identity"),), input_shape=(2,))


def random_small_network(rng: np.random.Generator):
    """A random <=3-layer network mixing layer types, for gradient checks."""
    kind = rng.integers(4)
    if kind == 0:
        spec = at.NetworkSpec(
            layers=(at.Dense(4, 3, "relu"), at.Dense(3, 2, "sigmoid")),
            input_shape=(4,))
    elif kind == 1:
        spec = at.NetworkSpec(
            layers=(at.Conv2d(1, 2, 2, 2, activation="sigmoid"), at.Flatten(),
                    at.Dense(18, 2, "relu")),
            input_shape=(1, 4, 4))
    elif kind == 2:
        spec = at.NetworkSpec(
            layers=(at.Conv2d(1, 2, 3, 3, stride=1, padding=1, activation="relu"),
                    at.MaxPool2d(2, 2), at.Flatten(), at.Dense(8, 3, "identity")),
            input_shape=(1, 4, 4))
    else:
        spec = at.NetworkSpec(
            layers=(at.Dense(5, 4, "sigmoid"), at.Dense(4, 4, "relu"),
                    at.Dense(4, 2, "identity")),
            input_shape=(5,))
    weights = at.init_weights(spec, seed=int(rng.integers(2**31)))
    x = rng.uniform(0.05, 1.0, size=spec.input_shape)
    label = int(rng.integers(spec.layers[-1].out_size))
    return spec, weights, x, label


def finite_difference_weight_grads(spec, weights, x, label, h=1e-6):
    """Central-difference oracle for every weight and bias entry."""
    grads = []
    for li, p in enumerate(weights.params):
        if p is None:
            grads.append(None)
            continue
        pair = []
        for arr in p:
            g = np.zeros_like(arr)
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                lp, _, _ = at.loss_and_gradients(spec, weights, x, label)
                flat[k] = orig - h
                lm, _, _ = at.loss_and_gradients(spec, weights, x, label)
                flat[k] = orig
                gflat[k] = (lp - lm) / (2 * h)
            pair.append(g)
        grads.append(tuple(pair))
    return at.NetworkWeights(tuple(grads))


def finite_difference_input_grad(spec, weights, x, label, h=1e-6):
    x = x.copy()
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        lp, _, _ = at.loss_and_gradients(spec, weights, x, label)
        flat[k] = orig - h
        lm, _, _ = at.loss_and_gradients(spec, weights, x, label)
        flat[k] = orig
        gflat[k] = (lp - lm) / (2 * h)
    return g


def assert_grads_close(analytic, numeric, rtol=1e-5):
    """Mixed tolerance: |a - n| <= rtol * max(|a|, |n|, 1)."""
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    worst = np.max(np.abs(a - n) / scale)
    assert worst < rtol, f"gradient mismatch: worst relative error {worst:.3e}"

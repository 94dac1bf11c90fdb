import numpy as np
import pytest
import sympy as sp
from hypothesis import HealthCheck, settings

from ellnet.fields import Field, coordinates
from ellnet.grid import Grid
from ellnet.operator import assemble, coefficient_preset

settings.register_profile("ellnet", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ellnet")

# Lines collected by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def laplacian(dim: int, n: int, c: float = 0.0):
    return assemble(coefficient_preset("constant", dim, a=1.0, c=c), Grid(dim, n))


def sine(*modes: int) -> Field:
    xs = coordinates(len(modes))
    return Field(sp.Mul(*[sp.sin(m * sp.pi * x) for m, x in zip(modes, xs)]), len(modes))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def graph_suite():
    """Named graphs covering every constructor: primitives, coefficient and source
    graphs of the presets, and descent iterates in one to three dimensions."""
    from ellnet import exprgraph as eg
    from ellnet.pipeline import coefficient_graphs

    suite = []
    for dim in (1, 2, 3):
        xs = coordinates(dim)
        x = [eg.input_graph(i, dim) for i in range(dim)]
        suite += [
            (f"d{dim}/input", x[0]),
            (f"d{dim}/square", eg.activation("square", x[-1])),
            (f"d{dim}/sin3x", eg.activation("sin", eg.affine([x[0]], [3.0]))),
            (f"d{dim}/tanh_exp", eg.activation("tanh", eg.activation("exp", eg.affine(x, [0.5] * dim, 0.1)))),
            (f"d{dim}/product", eg.mul(eg.activation("cos", x[0]), eg.activation("sin", x[-1]))),
            (f"d{dim}/source", eg.from_sympy(sp.Mul(*[sp.sin(sp.pi * v) for v in xs]) * sp.exp(xs[0]), dim)),
        ]
        steps = {1: 3, 2: 3, 3: 2}[dim]
        n = {1: 15, 2: 7, 3: 5}[dim]
        for preset in ("affine", "quadratic", "trigonometric"):
            L = assemble(coefficient_preset(preset, dim, c0=1.0), Grid(dim, n))
            A, c = coefficient_graphs(L)
            suite += [(f"d{dim}/{preset}/a00", A[0][0]), (f"d{dim}/{preset}/c", c)]
            if preset == "quadratic" or dim == 1:
                f_nn = eg.from_sympy(sp.Mul(*[sp.sin(sp.pi * v) for v in xs]), dim)
                growth = eg.grow_network(eg.constant(0.0, dim), A, c, f_nn, 0.01, steps)
                suite += [(f"d{dim}/{preset}/u{t}", g) for t, g in enumerate(growth.iterates) if t > 0]
    return suite


GROWTH_PRESETS = [("constant", {"a": 1.0, "c": 1.0}), ("affine", {"c0": 1.0}), ("quadratic", {"c0": 1.0}),
                  ("trigonometric", {"c0": 1.0})]


def growth_suite(steps: int = 5):
    """Network growth for every coefficient preset, unperturbed and bump-perturbed (the
    largest shape), with two sources in one to three dimensions."""
    from ellnet import exprgraph as eg
    from ellnet.perturb import PerturbationSpec, perturb_operator
    from ellnet.pipeline import coefficient_graphs

    runs = []
    for dim in (1, 2, 3):
        xs = coordinates(dim)
        sines = sp.Mul(*[sp.sin(sp.pi * v) for v in xs])
        grid = Grid(dim, 5)
        for preset, params in GROWTH_PRESETS:
            base = coefficient_preset(preset, dim, **params)
            for shape in ("none", "bump"):
                spec = PerturbationSpec() if shape == "none" else PerturbationSpec(1e-3, 1e-3, shape)
                A, c = coefficient_graphs(perturb_operator(base, spec, grid))
                for name, f in (("sine", sines), ("sine_exp", sines * sp.exp(xs[0]))):
                    growth = eg.grow_network(eg.constant(0.0, dim), A, c, eg.from_sympy(f, dim), 0.01, steps)
                    runs.append((f"d{dim}/{preset}/{shape}/{name}", growth))
    return runs

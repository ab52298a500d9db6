import numpy as np
import pytest

from esdlab.config import load_config

PAPER_R = "20*(-0.6+0.2*S-(x-0.5)^2)"
PAPER_Q = "8.5-(0.5+rho)*S"
CHEMO_ETA = "S*(1+exp(-x^2))"

# Model expressions used by the derivative and round-trip properties.
# Each entry: text, and a box per variable that keeps every subexpression regular.
CORPUS = [
    (PAPER_R, {"x": (0.0, 1.0), "S": (0.0, 17.0)}),
    (PAPER_Q, {"S": (0.0, 17.0), "rho": (0.0, 10.0)}),
    (CHEMO_ETA, {"x": (-2.0, 2.0), "S": (0.0, 2.0)}),
    ("1", {"x": (-1.0, 1.0)}),
    ("S-1-x^2", {"x": (-1.0, 1.0), "S": (0.0, 3.0)}),
    ("2-S-rho", {"S": (0.0, 2.0), "rho": (0.0, 2.0)}),
    ("S/(1+S)*(2-x^2)", {"x": (-1.0, 1.0), "S": (0.0, 5.0)}),
    ("log(1+S)*exp(-x)/sqrt(2+x)", {"x": (-1.0, 1.0), "S": (0.0, 4.0)}),
    ("tanh(3*S-1)+sin(x)*cos(x*S)", {"x": (-2.0, 2.0), "S": (0.0, 2.0)}),
    ("abs(x-0.3)*S+1", {"x": (0.4, 2.0), "S": (0.0, 2.0)}),
    ("(S^3-2*S)/(rho^2+1)-rho^-2", {"S": (0.0, 3.0), "rho": (0.5, 3.0)}),
    ("-(x+1)^-3*S^2", {"x": (0.0, 2.0), "S": (0.0, 2.0)}),
]


@pytest.fixture(scope="session")
def paper_cfg():
    return load_config("paper-fig4")


@pytest.fixture(scope="session")
def chemo_cfg():
    return load_config("chemostat-example")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)

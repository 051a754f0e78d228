import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from signolab.assembly import LameParameters
from signolab.geometry import Circle, DomainSpec, build_annular_mesh

settings.register_profile(
    "signolab", max_examples=15, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("signolab")

LAME = LameParameters(1.0, 1.0)


def annulus(h=0.1, r=0.3, center=(0.0, 0.0), **kw):
    return build_annular_mesh(DomainSpec(Circle((0.0, 0.0), 1.0), Circle(center, r), h, **kw))


@pytest.fixture(scope="session")
def coarse():
    """Annulus with 19 obstacle nodes; small enough for dense oracles."""
    return annulus(0.1)


@pytest.fixture(scope="session")
def tiny():
    return annulus(0.2)


@pytest.fixture(scope="session")
def disc():
    return build_annular_mesh(DomainSpec(Circle((0.0, 0.0), 1.0), None, 0.1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def kkt_fixtures():
    """Named Signorini problems covering scalar and elastic contact regimes."""
    from signolab.functions import closed_form, fourier
    from signolab.geometry import Ellipse, square
    from signolab.signorini import SignoriniProblem

    z = (0.3, 0.0)
    u_z = closed_form("fundamental_solution", z=list(z))
    m61 = build_annular_mesh(DomainSpec(Circle((0, 0), 1.0), Circle(z, 0.15), 0.08))
    msq = build_annular_mesh(DomainSpec(Circle((0, 0), 1.0), square((0.1, 0.0), 0.5), 0.08))
    mel = build_annular_mesh(DomainSpec(Circle((0, 0), 1.0), Ellipse((0.1, 0.0), (0.3, 0.2)), 0.08))
    ann = annulus(0.08)
    bump = closed_form("arc_bump", "obstacle", arc=[0.1, 0.35], amplitude=0.3, base=-0.1)
    return [
        ("scalar-linear-partial", SignoriniProblem(ann, "scalar", closed_form("harmonic_polynomial", degree=1), 0.0)),
        ("scalar-fundamental", SignoriniProblem(m61, "scalar", u_z, closed_form("fundamental_solution", "obstacle",
                                                                                z=list(z)))),
        ("scalar-square-neumann-arc", SignoriniProblem(msq, "scalar", fourier(0.0, [0.0, 0.4]), bump, (0.5, 0.75))),
        ("scalar-biactive", SignoriniProblem(ann, "scalar", 0.0, 0.0)),
        ("elastic-compression", SignoriniProblem(mel, LAME, closed_form("normal_field", magnitude=-0.1), -0.01)),
        ("elastic-neumann-arc", SignoriniProblem(ann, LameParameters(1.0, 3.0), lambda x: -0.15 * x, 0.0,
                                                 (0.2, 0.45))),
        ("elastic-shear", SignoriniProblem(msq, LAME, lambda x: np.stack([0.1 * x[:, 1], -0.05 * x[:, 0]], 1), 0.01)),
    ]

"""
测试共用的模型与数据构造
"""

import os

import numpy as np
import pytest

from core.basis import BasisLayout
from core.copula import CopulaParams
from core.joint import JointData, JointModel, JointSpec
from core.links import LinkFunction
from core.marginal import MarginalModel, MarginalSpec, ObservationSet


REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ANOREXIA_CSV = os.path.join(REPO_ROOT, "data", "anorexia.csv")
ANOREXIA_CONFIG = os.path.join(REPO_ROOT, "configs", "anorexia_fit.json")


def linear_model(name="Y", role="outcome", intercept=0.0, slope=1.0, tau=0.0, link="probit"):
    """h(y) = intercept + slope·y 的边际模型"""
    basis = BasisLayout("linear").build([intercept, slope])
    taus = np.atleast_1d(tau) if role == "outcome" else np.zeros(0)
    return MarginalModel(basis=basis, link=LinkFunction(link), tau=taus, role=role, name=name)


def two_variable_model(lam=0.0, gamma=0.0, tau=0.0, cov=(0.0, 1.0), out=(0.0, 1.0)):
    """一个正态协变量、正态结局的两变量联合模型"""
    marginals = (linear_model("X", "covariate", *cov), linear_model("Y", "outcome", *out, tau=tau))
    return JointModel(marginals, CopulaParams([lam], [[gamma]]))


def two_variable_spec(**kwargs):
    return JointSpec((MarginalSpec("X", "covariate", basis="linear"),
                      MarginalSpec("Y", "outcome", basis="linear")), **kwargs)


def exact_rows(x, y, arms):
    return JointData((ObservationSet.from_exact(x), ObservationSet.from_exact(y)), np.asarray(arms))


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture
def normal_pair_data():
    """λ = 0.25、γ = 0.25、τ = 0.5 的两变量模型，每组 400 行"""
    from core.joint import sample_joint

    model = two_variable_model(lam=0.25, gamma=0.25, tau=0.5)
    parts = [sample_joint(model, arm, 400, seed=np.random.SeedSequence(7, spawn_key=(arm,))) for arm in (0, 1)]
    return JointData.concat(parts)

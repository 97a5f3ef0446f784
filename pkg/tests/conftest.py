import numpy as np
import pytest

from hdglm.families import Dataset, get_family, psi

FAMILY_NAMES = ("logistic", "poisson", "negative-binomial", "probit")


def naive_statistics(Y, X, family, beta0, Xg=None):
    """Index-by-index double loops; the reference for the Gram-matrix path.

    ``Xg`` (default ``X``) supplies the covariates entering the inner products.
    """
    fam = get_family(family)
    Y = np.asarray(Y, float)
    X = np.asarray(X, float)
    n = len(Y)
    t = X @ np.asarray(beta0, float)
    w = [(Y[i] - float(fam.g(t[i]))) * psi(fam, float(t[i])) for i in range(n)]
    X = X if Xg is None else np.asarray(Xg, float)
    U = 0.0
    A = 0.0
    T2 = 0.0
    for i in range(n):
        A += w[i] ** 2 * float(X[i] @ X[i])
        for j in range(n):
            if i == j:
                continue
            g = float(X[i] @ X[j])
            U += w[i] * w[j] * g
            T2 += w[i] ** 2 * w[j] ** 2 * g ** 2
    return U / n, A / n, T2 / (n * (n - 1))


def random_dataset(rng, family, n, p, p1=0, scale=0.3):
    fam = get_family(family)
    X = rng.standard_normal((n, p))
    beta = rng.uniform(-scale, scale, p) / np.sqrt(p)
    mu = fam.g(X @ beta)
    if fam.binary:
        Y = (rng.random(n) < mu).astype(float)
    elif fam.name == "poisson":
        Y = rng.poisson(mu).astype(float)
    else:
        Y = rng.poisson(rng.gamma(mu, 1.0)).astype(float)
    return Dataset(Y, X, p1=p1), beta


@pytest.fixture
def toy():
    # logistic at beta0 = 0 gives mu = 1/2, psi = 1 and residuals (0.5, -0.5, 0.5)
    X = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 1.0]])
    return Dataset(np.array([1.0, 0.0, 1.0]), X)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def brute_force_bh(p, q):
    """Step-up rejections by scanning every subset of hypotheses.

    The largest subset S with max(p[S]) <= |S| q / m has size k*; the step-up
    rejection set is {i : p_i <= k* q / m}.
    """
    p = np.asarray(p, float)
    m = p.size
    masks = ((np.arange(2 ** m)[:, None] >> np.arange(m)) & 1).astype(bool)
    sizes = masks.sum(axis=1)
    worst = np.where(masks, p[None, :], -np.inf).max(axis=1)
    valid = (sizes > 0) & (worst <= sizes * q / m)
    k = int(sizes[valid].max()) if valid.any() else 0
    rejected = p <= k * q / m if k else np.zeros(m, bool)
    order = sorted(range(m), key=lambda i: (p[i], i))
    adjusted = np.empty(m)
    for r, i in enumerate(order, 1):
        adjusted[i] = min(1.0, min(m * p[order[j - 1]] / j for j in range(r, m + 1)))
    return rejected, adjusted


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

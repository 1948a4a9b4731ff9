import numpy as np
import pytest

from convmogp.gram import InducingSet, MultiOutputDataset, NoiseParams, Variant
from convmogp.kernels import GaussianKernelParams, Ode1KernelParams
from convmogp.models import ModelState

TOY = dict(
    S=np.array([[1.0], [1.0], [5.0], [5.0]]),
    P=np.array([[50.0], [50.0], [300.0], [200.0]]),
    L=np.array([[100.0]]),
    noise=np.array([0.0125, 0.0125, 1.2, 1.0]),
)


def toy_kernel(standardize=True):
    return GaussianKernelParams(TOY["S"], TOY["P"], TOY["L"], standardize=standardize)


def stratified(K, lo, hi, rng):
    """One point per equal-width bin, away from the bin edges."""
    return lo + (np.arange(K) + rng.uniform(0.2, 0.8, K)) * (hi - lo) / K


def gaussian_instance(seed, D=3, N=7, K=4, p=2, Q=1, divisors=True):
    rng = np.random.default_rng(seed)
    kern = GaussianKernelParams(rng.normal(size=(D, Q)), rng.uniform(1, 5, (D, p)),
                                rng.uniform(1, 5, (Q, p)))
    X = [rng.uniform(-1, 1, (N, p)) for _ in range(D)]
    y = [rng.normal(size=N) for _ in range(D)]
    div = [rng.uniform(0.5, 2, N) for _ in range(D)] if divisors else None
    ds = MultiOutputDataset.from_arrays(X, y, div)
    Z = np.column_stack([stratified(K, -1, 1, rng)] + [rng.uniform(-1, 1, K)
                                                      for _ in range(p - 1)])
    return kern, ds, InducingSet(Z), NoiseParams(rng.uniform(0.05, 0.3, D))


def ode_instance(seed, D=3, N=7, K=4, basal=False):
    rng = np.random.default_rng(seed)
    kern = Ode1KernelParams(rng.normal(size=(D, 1)), rng.uniform(0.5, 2, D),
                            rng.uniform(0.3, 0.8, 1),
                            rng.normal(size=D) if basal else None)
    X = [rng.uniform(0, 3, (N, 1)) for _ in range(D)]
    y = [rng.normal(size=N) for _ in range(D)]
    ds = MultiOutputDataset.from_arrays(X, y, [rng.uniform(0.5, 2, N) for _ in range(D)])
    Z = stratified(K, 0, 3, rng)[:, None]
    return kern, ds, InducingSet(Z), NoiseParams(rng.uniform(0.05, 0.3, D))


def make_state(kind, variant, seed, **kw):
    variant = Variant.parse(variant)
    maker = gaussian_instance if kind == "gaussian" else ode_instance
    kern, ds, Z, noise = maker(seed, **kw)
    return ModelState(kern, noise, ds, variant, Z if variant.sparse else None)


@pytest.fixture
def toy():
    return toy_kernel()

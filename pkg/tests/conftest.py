import numpy as np
import pytest

from decgreen.autodiff import Jet2, Var
from decgreen.nn import Mlp


def central_fd(fn, nets, indices, h=1e-5):
    """Central differences of ``fn()`` w.r.t. selected flat parameter indices.

    ``indices`` is a list of ``(net_index, flat_index)`` pairs.
    """
    out = []
    for ni, fi in indices:
        net = nets[ni]
        flat = net.get_flat()
        orig = flat[fi]
        flat[fi] = orig + h
        net.set_flat(flat)
        fp = fn()
        flat[fi] = orig - h
        net.set_flat(flat)
        fm = fn()
        flat[fi] = orig
        net.set_flat(flat)
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def flat_grads(grads):
    return [np.concatenate([g.ravel() for g in net_grads]) for net_grads in grads]


def set_net(net: Mlp, weights, biases):
    for p, w in zip(net.weights, weights):
        p.value = np.array(w, dtype=np.float64).reshape(p.value.shape)
    for p, b in zip(net.biases, biases):
        p.value = np.array(b, dtype=np.float64).reshape(p.value.shape)
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def poisson_oracle_net(a: float) -> Mlp:
    """[2, 4, 4, 1] ReLU2 net equal to (a/2) x(x-1) y(y-1) for x, y >= 0.

    Layer 1 makes x^2, (x+1)^2, y^2, (y+1)^2, from which q1 = x^2 - x and
    q2 = y^2 - y are affine.  Layer 2 squares s = q1 + q2 and d = q1 - q2
    (both signs), and q1 q2 = (s^2 - d^2) / 4.
    """
    net = Mlp([2, 4, 4, 1], k=2, name="net")
    W1 = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    b1 = np.array([0.0, 1.0, 0.0, 1.0])
    # q1 = 1.5 a1 - 0.5 a2 + 0.5 ; q2 = 1.5 a3 - 0.5 a4 + 0.5
    q1 = np.array([1.5, -0.5, 0.0, 0.0])
    q2 = np.array([0.0, 0.0, 1.5, -0.5])
    s, d = q1 + q2, q1 - q2
    W2 = np.column_stack([s, -s, d, -d])
    b2 = np.array([1.0, -1.0, 0.0, 0.0])
    W3 = (a / 8.0) * np.array([[1.0], [1.0], [-1.0], [-1.0]])
    return set_net(net, [W1, W2, W3], [b1, b2, [0.0]])


def analytic_jet(value, grad, hess) -> Jet2:
    """Jet of known analytic derivatives, batched over points."""
    return Jet2(Var(value), Var(grad[0]), Var(grad[1]), Var(hess[0]), Var(hess[1]), Var(hess[2]))


def poisson_exact_jet(p, a):
    x, y = p[:, 0], p[:, 1]
    u = 0.5 * a * x * (x - 1) * y * (y - 1)
    ux = 0.5 * a * (2 * x - 1) * y * (y - 1)
    uy = 0.5 * a * x * (x - 1) * (2 * y - 1)
    uxx = a * y * (y - 1)
    uyy = a * x * (x - 1)
    uxy = 0.5 * a * (2 * x - 1) * (2 * y - 1)
    return analytic_jet(u, (ux, uy), (uxx, uxy, uyy))


def rd_exact_jet(p):
    x, y = p[:, 0], p[:, 1]
    u = np.exp(-(x**2 + 2 * y**2 + 1))
    return analytic_jet(
        u,
        (-2 * x * u, -4 * y * u),
        ((4 * x**2 - 2) * u, 8 * x * y * u, (16 * y**2 - 4) * u),
    )

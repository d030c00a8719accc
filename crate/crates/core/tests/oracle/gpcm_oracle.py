"""Independent reference values for the frozen constants in the Rust tests.

Run with `python3 gpcm_oracle.py`; needs numpy and scipy.
"""
import numpy as np
from scipy.optimize import fsolve

ITEM1 = (1.476, [-1.726, -0.145, -0.849, 1.765])


def probs(theta, a, steps):
    z = np.concatenate([[0.0], np.cumsum(a * (theta - np.asarray(steps)))])
    e = np.exp(z - z.max())
    return e / e.sum()


def loglik(params, theta, k):
    log_a, steps = params[0], params[1:]
    return np.log(probs(theta, np.exp(log_a), steps)[k])


def central_gradient(params, theta, k, h=1e-5):
    params = np.asarray(params, dtype=float)
    g = np.zeros_like(params)
    for i in range(len(params)):
        up, dn = params.copy(), params.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (loglik(up, theta, k) - loglik(dn, theta, k)) / (2 * h)
    return g


def fleishman(skew, excess_kurt):
    def system(v):
        b, c, d = v
        return [
            b * b + 6 * b * d + 2 * c * c + 15 * d * d - 1,
            2 * c * (b * b + 24 * b * d + 105 * d * d + 2) - skew,
            24 * (b * d + c * c * (1 + b * b + 28 * b * d) + d * d * (12 + 48 * b * d + 141 * c * c + 225 * d * d))
            - excess_kurt,
        ]

    b, c, d = fsolve(system, [1.0, 0.0, 0.0], xtol=1e-14)
    return -c, b, c, d


def psrf(chains):
    chains = np.asarray(chains, dtype=float)
    n = chains.shape[1]
    w = chains.var(axis=1, ddof=1).mean()
    b = n * chains.mean(axis=1).var(ddof=1)
    return np.sqrt(((n - 1) / n * w + b / n) / w)


if __name__ == "__main__":
    a, steps = ITEM1
    print("item 1 probabilities at theta = 0:", [float(v) for v in probs(0.0, a, steps)])
    print("item 1 gradient at theta = 0.5, k = 2:", [float(v) for v in central_gradient([np.log(a)] + steps, 0.5, 2)])
    print("fleishman(1.25, 1.5):", [float(v) for v in fleishman(1.25, 1.5)])
    x = np.array([0.0 if i % 2 == 0 else 2.0 for i in range(10)])
    print("psrf of two separated chains:", float(psrf([x, x + 10.0])))

"""One-time oracle: hand-rolled scalar Adam on f(x) = x^2 from x = 1.

Frozen into tests/test_optim.py; re-run only to regenerate the pin.
"""

b1, b2, eps, lr = 0.9, 0.99, 1e-8, 0.1
x, m, v = 1.0, 0.0, 0.0
for t in range(1, 101):
    g = 2.0 * x
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mhat = m / (1 - b1 ** t)
    vhat = v / (1 - b2 ** t)
    x -= lr * mhat / (vhat ** 0.5 + eps)
print(f"x after 100 steps: {x:.12f}")

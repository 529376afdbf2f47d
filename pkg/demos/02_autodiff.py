"""The numpy autodiff engine: tapes, primitives and gradient checks."""
# %% Record a computation and differentiate it
import numpy as np

from graphtransformer import autodiff as ad

ad.set_default_dtype(np.float64)
x = ad.Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
w = ad.Tensor(np.array([[0.3], [-0.1]]), requires_grad=True)
with ad.Tape():
    y = ad.tanh(x @ w).sum()
    y.backward()
print("y =", y.item())
print("dy/dw =", w.grad.ravel())

# %% Central finite differences agree with the analytic gradient
report = ad.grad_check(lambda a, b: ad.tanh(a @ b).sum(), [x, w])
print(report)

# %% A GRU cell is built from the same primitives
rng = np.random.default_rng(0)
params = {name: ad.Tensor(rng.normal(scale=0.3, size=shape))
          for name, shape in zip(ad.GRU_PARAM_NAMES, [(4, 3), (3, 3), (3,)] * 3)}
h = ad.Tensor(np.zeros((2, 3)))
for t in range(5):
    h = ad.gru_cell(h, ad.Tensor(rng.normal(size=(2, 4))), params)
print("GRU state after 5 steps:\n", h.data.round(3))

# %% Fit a tiny linear map with plain gradient descent
true_w = np.array([[2.0], [-1.0]])
xs = rng.normal(size=(64, 2))
ys = xs @ true_w
w = ad.Tensor(np.zeros((2, 1)), requires_grad=True)
for step in range(200):
    with ad.Tape():
        err = ad.Tensor(xs) @ w - ad.Tensor(ys)
        loss = (err * err).mean()
        w.grad = None
        loss.backward()
    w.data -= 0.1 * w.grad
print("learned w:", w.data.ravel().round(4), "loss", round(loss.item(), 8))

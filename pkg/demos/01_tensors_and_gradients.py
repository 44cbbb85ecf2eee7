"""Tour of the autodiff core: tensors, backward passes, and AdamW.

Run:  python3 demos/01_tensors_and_gradients.py
"""
import numpy as np

from rsvp import autodiff as ad
from rsvp.autodiff import Tensor
from rsvp.optim import Parameter, adamw_step, zero_grad

print("== tensors and reverse-mode gradients ==")
ad.set_default_dtype("float64")

w = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
x = Tensor(np.array([0.5, -1.0, 2.0]))
loss = ad.tsum(ad.tanh(ad.mul(w, x)))
loss.backward()
print(f"loss = sum(tanh(w*x)) = {loss.item():.6f}")
print(f"dloss/dw             = {w.grad}")

# spot-check against central finite differences
h = 1e-6
fd = np.zeros(3)
for i in range(3):
    wp, wm = w.data.copy(), w.data.copy()
    wp[i] += h
    wm[i] -= h
    fd[i] = (np.tanh(wp * x.data).sum() - np.tanh(wm * x.data).sum()) / (2 * h)
print(f"finite differences   = {fd}")
print(f"max abs deviation    = {np.abs(fd - w.grad).max():.2e}\n")

print("== gradients accumulate until zeroed ==")
p = Parameter("demo", np.ones(4))
ad.tsum(p.tensor).backward()
ad.tsum(p.tensor).backward()
print(f"after two backward passes: grad = {p.grad}")
zero_grad([p])
print(f"after zero_grad:           grad = {p.grad}\n")

print("== one AdamW step ==")
p = Parameter("w", np.array([1.0]))
p.tensor.grad = np.array([1.0])
adamw_step([p], lr=2e-5)
print(f"w: 1.0 -> {p.data[0]:.7f}  (first bias-corrected step moves by ~lr)")

print("\n== stable softmax and cosine similarity ==")
big = ad.softmax(Tensor(np.array([1000.0, 0.0])))
print(f"softmax([1000, 0]) = {big.data}  (no overflow)")
a, b = Tensor([2.0, 2.0]), Tensor([1.0, 1.0])
print(f"cosine((2,2), (1,1)) = {ad.cosine_similarity(a, b).item():.6f}  (scale invariant)")

# A tour of the tensor engine: forward ops, backward, and a finite-difference check.
#
#   python demos/autodiff_basics.py

import numpy as np

from tksg import tensor as T
from tksg.gradcheck import check_grads

# Leaves created with T.parameter collect gradients; everything else is intermediate.
rng = np.random.default_rng(0)
with T.default_dtype(np.float64):
    w = T.parameter(rng.normal(size=(3, 2)))
    x = T.Tensor(rng.normal(size=(4, 3)))

    def sq(t):
        return T.sum_(t * t)

    # softmax over a small matmul, then a scalar to differentiate
    y = T.softmax(T.matmul(x, w))
    loss = T.sum_(y * y)
    T.backward(loss)
    print("loss", float(loss.data))
    print("dL/dw\n", w.grad)

    # central differences agree to ~1e-10 in double precision
    errs = check_grads(lambda: sq(T.softmax(T.matmul(x, w))), [w])
    print("relative error", errs[0])

# Gradients accumulate, so a second backward without zeroing doubles them.
first = w.grad.copy()
with T.default_dtype(np.float64):
    T.backward(sq(T.softmax(T.matmul(x, w))))
print("doubled:", np.allclose(w.grad, 2 * first))

# no_grad skips graph construction entirely (used for decoding).
with T.no_grad():
    z = T.matmul(x, w)
print("tracked parents under no_grad:", len(z._parents))

"""
Checking the autodiff engine by hand
====================================

Every op in ``dmgan.autodiff`` records a backward closure. Here we build a
small expression, compare its analytic gradient with central differences, and
then do the same for a 3×3 convolution.
"""
import numpy as np

from dmgan import autodiff as ad
from dmgan.autodiff import Tensor

rng = np.random.default_rng(0)

# gradchecks want float64, training runs in float32
with ad.precision(np.float64):
    x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(5, 3)), requires_grad=True)

    def loss():
        h = ad.tanh(ad.matmul(x, w))
        return ad.sum(ad.softmax(h, axis=1) * h)

    print("matmul/tanh/softmax  rel. error", ad.gradcheck(loss, [x, w]))

    img = Tensor(rng.normal(size=(2, 3, 6, 6)), requires_grad=True)
    kern = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
    bias = Tensor(rng.normal(size=4), requires_grad=True)
    for stride in (1, 2):
        err = ad.gradcheck(lambda: ad.sum(ad.tanh(ad.conv3x3(img, kern, bias, stride=stride))),
                           [img, kern, bias])
        print(f"conv3x3 stride {stride}     rel. error", err)

# the same expression by hand: d/dx sum(x*x) = 2x
v = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
ad.sum(v * v).backward()
print("grad of sum(v²):", v.grad)

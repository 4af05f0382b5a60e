from .tensor import Tensor, Tape, get_tape, no_grad, backward, zero_grad
from .ops import *
from .gradcheck import numerical_gradient, check_gradients, relative_error

import numpy as np

from ..autograd import Tensor, conv2d, conv_transpose2d, batchnorm2d, relu, RunningStats


def kaiming_bound(fan_in):
    """Half-width of the Kaiming uniform initializer, sqrt(2) * sqrt(3 / fan_in)
    """
    return np.sqrt(2.0) * np.sqrt(3.0 / fan_in)


class ParamGroup():

    """Named learnable tensors of one part of a network (encoder, a decoder),
    together with the batchnorm running statistics those layers own.

    Kernels use the conv2d layout ``(Cout, Cin, K, K)``; the fan-in of a kernel
    is ``Cin * K * K`` read from that layout, also for up-sampling kernels.

    :param name: Group name, the prefix of every checkpoint entry of the group
    :type name: str
    :param dtype: Floating dtype of every tensor in the group
    :type dtype: numpy.dtype
    """

    def __init__(self, name, dtype=np.float64):
        self.name = name
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.stats = {}

    def __repr__(self):
        return f'ParamGroup({self.name}, {len(self.params)} tensors, {self.count()} values)'

    def _add(self, name, values):
        if name in self.params:
            raise KeyError(f'{self.name} already holds {name}')
        self.params[name] = Tensor(np.asarray(values, dtype=self.dtype), requires_grad=True)

    def add_kernel(self, name, shape, rng):
        bound = kaiming_bound(shape[1] * shape[2] * shape[3])
        self._add(f'{name}.weight', rng.uniform(-bound, bound, size=shape))

    def add_conv_unit(self, name, in_channels, out_channels, rng, batchnorm=True):
        """3x3 convolution followed by batchnorm (or a bias when batchnorm is off) and a ReLU
        """
        self.add_kernel(name, (out_channels, in_channels, 3, 3), rng)
        if batchnorm:
            self._add(f'{name}.gamma', np.ones(out_channels))
            self._add(f'{name}.beta', np.zeros(out_channels))
            self.stats[name] = RunningStats(out_channels, dtype=self.dtype)
        else:
            self._add(f'{name}.bias', np.zeros(out_channels))

    def add_head(self, name, in_channels, out_channels, rng):
        self.add_kernel(name, (out_channels, in_channels, 1, 1), rng)
        self._add(f'{name}.bias', np.zeros(out_channels))

    def add_up(self, name, in_channels, out_channels, rng):
        # transposed 2x2 stride-2 kernel; conv2d layout of the operator it transposes
        self.add_kernel(name, (in_channels, out_channels, 2, 2), rng)
        self._add(f'{name}.bias', np.zeros(out_channels))

    def conv_unit(self, name, x, mode):
        weight = self.params[f'{name}.weight']
        if name in self.stats:
            x = conv2d(x, weight, padding=1)
            x = batchnorm2d(x, self.params[f'{name}.gamma'], self.params[f'{name}.beta'],
                            self.stats[name], mode)
        else:
            x = conv2d(x, weight, self.params[f'{name}.bias'], padding=1)
        return relu(x)

    def head(self, name, x):
        return conv2d(x, self.params[f'{name}.weight'], self.params[f'{name}.bias'])

    def up(self, name, x):
        return conv_transpose2d(x, self.params[f'{name}.weight'], self.params[f'{name}.bias'], stride=2)

    def tensors(self):
        return list(self.params.values())

    def count(self):
        return int(sum(t.size for t in self.params.values()))

    def named_arrays(self):
        """Every stored array keyed by its checkpoint name: parameters first,
        then running statistics as ``<layer>.running_mean`` / ``<layer>.running_var``
        """
        for name, tensor in self.params.items():
            yield f'{self.name}.{name}', tensor.data
        for name, state in self.stats.items():
            yield f'{self.name}.{name}.running_mean', state.mean
            yield f'{self.name}.{name}.running_var', state.var

    def assign(self, name, values):
        """Overwrite one stored array by its name within the group
        """
        if name.endswith('.running_mean') or name.endswith('.running_var'):
            layer, field = name.rsplit('.', 1)
            state = self.stats[layer]
            current = state.mean if field == 'running_mean' else state.var
            target = 'mean' if field == 'running_mean' else 'var'
        else:
            current = self.params[name].data
            state, target = self.params[name], 'data'
        if current.shape != values.shape:
            raise ValueError(f'{self.name}.{name} has shape {current.shape}, got {values.shape}')
        setattr(state, target, np.array(values, dtype=self.dtype))

    def copy(self):
        clone = ParamGroup(self.name, self.dtype)
        for name, tensor in self.params.items():
            clone.params[name] = Tensor(tensor.data.copy(), requires_grad=True)
        for name, state in self.stats.items():
            stats = RunningStats(len(state.mean), dtype=self.dtype)
            stats.mean, stats.var = state.mean.copy(), state.var.copy()
            clone.stats[name] = stats
        return clone

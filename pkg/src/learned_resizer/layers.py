"""Parameter containers shared by the resizer and the baseline networks."""
import numpy as np

from .tensor import BatchNormState, Tensor


def he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Model:
    """Named parameters plus named batch-norm states.

    Subclasses register weights with :meth:`add_param` / :meth:`add_bn` in a
    fixed order; that order is the checkpoint order.
    """

    arch = "model"

    def __init__(self):
        self.params = {}
        self.bn = {}
        self.trainable = True

    def add_param(self, name, array):
        t = Tensor(array, tracked=True, name=name, dtype=array.dtype)
        self.params[name] = t
        return t

    def add_bn(self, name, channels):
        self.bn[name] = BatchNormState(channels)
        return self.bn[name]

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self):
        return sum(p.data.size for p in self.params.values())

    def set_trainable(self, flag):
        self.trainable = bool(flag)
        for p in self.params.values():
            p.tracked = self.trainable
            p.grad = None

    def astype(self, dtype):
        """Cast every parameter in place (float64 for gradient checks)."""
        for p in self.params.values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_weights(self):
        for p in self.params.values():
            p.data[...] = 0

    def state_arrays(self):
        """Ordered ``name -> float32 array`` map of weights and running stats."""
        out = {name: p.data.astype(np.float32) for name, p in self.params.items()}
        for name, st in self.bn.items():
            if st.running_mean is not None:
                out[f"{name}.running_mean"] = st.running_mean.astype(np.float32)
                out[f"{name}.running_var"] = st.running_var.astype(np.float32)
        return out

    def load_arrays(self, arrays):
        for name, p in self.params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint is missing weight {name!r} for {self.arch}")
            a = np.asarray(arrays[name], dtype=np.float32)
            if a.shape != p.shape:
                raise ValueError(f"weight {name!r}: checkpoint shape {a.shape} does not match model shape {p.shape}")
            p.data = a.copy()
        for name, st in self.bn.items():
            mean = arrays.get(f"{name}.running_mean")
            var = arrays.get(f"{name}.running_var")
            if mean is None:
                st.running_mean = st.running_var = None
            else:
                st.running_mean = np.asarray(mean, dtype=np.float32).reshape(-1).copy()
                st.running_var = np.asarray(var, dtype=np.float32).reshape(-1).copy()

import numpy as np
import torch

DTYPE = torch.float64


def as_tensor(x, dtype=DTYPE):
    if isinstance(x, torch.Tensor):
        return x if x.dtype == dtype else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def softplus(x):
    return torch.nn.functional.softplus(x)


def inv_softplus(y):
    y = as_tensor(y)
    # log(expm1(y)) loses precision for large y
    return torch.where(y > 30.0, y, torch.log(torch.expm1(torch.clamp(y, max=30.0))))


def make_generator(seed):
    gen = torch.Generator()
    gen.manual_seed(int(seed) % (2**63))
    return gen

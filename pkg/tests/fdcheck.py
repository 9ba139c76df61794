"""Central finite-difference gradient check used by several test modules."""

import numpy as np
import torch


def fd_relative_error(loss_fn, params, n_coords=40, eps=1e-6, seed=0):
    """Compare autograd with central differences on a random subset of parameter entries.

    Returns ``||g_ad - g_fd|| / max(||g_ad||, ||g_fd||)`` over the sampled entries.
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    ad, fd = [], []
    for _ in range(n_coords):
        p = params[rng.integers(len(params))]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        ad.append(p.grad[idx].item())
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + eps
            up = loss_fn().item()
            p[idx] = orig - eps
            down = loss_fn().item()
            p[idx] = orig
        fd.append((up - down) / (2 * eps))
    ad, fd = np.array(ad), np.array(fd)
    scale = max(np.linalg.norm(ad), np.linalg.norm(fd), 1e-12)
    return float(np.linalg.norm(ad - fd) / scale)
